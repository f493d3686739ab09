//! Shared fixtures for the benchmarks.

use vtrig_core::align::denoise_rows;
use vtrig_core::{generate, DenoisedSegment, SegmentMatrix, SynthConfig, Trace};
use vtrig_core::{segment_trace, AlignmentParams};

pub const PERIOD: f64 = 4350.09;
pub const IDLE: usize = 230;

/// A device trace of `n_cps` CPs at the default noise level.
pub fn device_trace(n_cps: usize, noise_sigma: f64) -> Trace {
    generate(&SynthConfig {
        n_cps,
        noise_sigma,
        ..SynthConfig::default()
    })
    .expect("valid fixture config")
    .0
}

/// The first `n_rows` virtual-trigger rows of `trace`.
pub fn rows(trace: &Trace, n_rows: usize) -> SegmentMatrix {
    segment_trace(trace, PERIOD, n_rows, 0).expect("trace long enough")
}

pub fn params() -> AlignmentParams {
    AlignmentParams::for_width(PERIOD.floor() as usize, IDLE)
}

/// A denoised CP to use as a pullout template.
pub fn template_segment(trace: &Trace, n_rows: usize) -> DenoisedSegment {
    denoise_rows(&rows(trace, n_rows), &params())
        .expect("alignable rows")
        .segment
}
