//! Trigger-free segmentation of side-channel traces: period recovery,
//! virtual-trigger segmentation with fine alignment, template-based pattern
//! pullout, a synthetic leakage generator and a profiled attack harness.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod align;
pub mod attack;
pub mod dsp;
pub mod error;
pub mod period;
pub mod pipeline;
pub mod pullout;
pub mod rng;
pub mod synth;
pub mod trace;

pub use align::{
    denoise_pipeline, fine_align, rotate_to_idle, segment_trace, AlignmentParams, CorrelationMode,
};
pub use attack::{attack, build_profile, pge_curve, AttackReport, Profile};
pub use error::{Error, Result};
pub use period::{estimate_period_autocorr, l1_distance, refine_period, PeriodEstimate, Stage};
pub use pipeline::{precision_sweep, Campaign, Role, Segmenter};
pub use pullout::{find_occurrences, learn_template, pullout_segments, Detection, SegmentTemplate};
pub use synth::{generate, sbox_hw_oracle, GroundTruth, SynthConfig};
pub use trace::{cut_index, DenoisedSegment, SegmentMatrix, Trace, TraceMeta};
