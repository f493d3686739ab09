//! Template learning on a jitter-free profiling trace, then template-matched
//! location and extraction of CP segments from arbitrary traces.
//!
//! Matching uses zero-mean, unit-norm windowed correlation. The sliding dot
//! product behind it is computed by direct summation for traces of at most
//! [`DIRECT_LEN_CUTOFF`] samples, and by FFT for longer ones.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::align::{denoise_pipeline, fine_align, AlignmentParams};
use crate::dsp;
use crate::error::{Error, Result};
use crate::trace::{DenoisedSegment, SegmentMatrix, Trace};

/// Trace length (samples) above which scoring switches to FFT correlation.
pub const DIRECT_LEN_CUTOFF: usize = 8192;

pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Default minimum spacing between detections, as a fraction of template length.
pub const DEFAULT_SPACING_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSource {
    pub trace_id: String,
    pub n_averaged: usize,
    /// Start of the crop window inside the denoised segment.
    pub crop_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTemplate {
    samples: Vec<f64>,
    pub source: TemplateSource,
}

impl SegmentTemplate {
    pub fn new(samples: Vec<f64>, source: TemplateSource) -> Result<Self> {
        if samples.len() < 2 || dsp::variance(&samples) <= 0.0 {
            return Err(Error::contract("template must be non-constant"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("template contains non-finite samples"));
        }
        Ok(SegmentTemplate { samples, source })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn default_min_spacing(&self) -> usize {
        ((DEFAULT_SPACING_FRACTION * self.len() as f64) as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub start: usize,
    pub len: usize,
}

/// Denoise a jitter-free profiling trace and keep the whole segment, or the
/// `crop` sub-window of it, as the matching template.
pub fn learn_template(
    profiling_trace: &Trace,
    l_cp_samples: f64,
    n_segments: usize,
    params: &AlignmentParams,
    crop: Option<Crop>,
) -> Result<SegmentTemplate> {
    let denoised = denoise_pipeline(profiling_trace, l_cp_samples, n_segments, params)?.segment;
    template_from_segment(&denoised, profiling_trace.source_id(), crop)
}

pub fn template_from_segment(
    segment: &DenoisedSegment,
    trace_id: &str,
    crop: Option<Crop>,
) -> Result<SegmentTemplate> {
    let crop = crop.unwrap_or(Crop {
        start: 0,
        len: segment.len(),
    });
    if crop.len == 0 || crop.start + crop.len > segment.len() {
        return Err(Error::contract(format!(
            "crop {}..{} outside denoised segment of {} samples",
            crop.start,
            crop.start + crop.len,
            segment.len()
        )));
    }
    SegmentTemplate::new(
        segment.samples[crop.start..crop.start + crop.len].to_vec(),
        TemplateSource {
            trace_id: trace_id.to_string(),
            n_averaged: segment.n_averaged,
            crop_start: crop.start,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    #[default]
    Auto,
    Direct,
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub offset: usize,
    pub score: f64,
}

/// Normalised correlation of the template against every full-overlap window
/// of the trace. Windows with (numerically) zero variance score 0.
pub fn ncc_scores(trace: &[f64], template: &[f64], method: ScoreMethod) -> Vec<f64> {
    let m = template.len();
    if m == 0 || m > trace.len() {
        return Vec::new();
    }
    let n_offsets = trace.len() - m + 1;
    let t_mean = dsp::mean(template);
    let t0: Vec<f64> = template.iter().map(|v| v - t_mean).collect();
    let t_norm = t0.iter().map(|v| v * v).sum::<f64>().sqrt();

    // centring the trace keeps FFT round-off proportional to the AC content
    let centre = dsp::mean(trace);
    let x: Vec<f64> = trace.iter().map(|v| v - centre).collect();
    let use_fft = match method {
        ScoreMethod::Direct => false,
        ScoreMethod::Fft => true,
        ScoreMethod::Auto => x.len() > DIRECT_LEN_CUTOFF,
    };
    let numer = if use_fft {
        dsp::sliding_dot_fft(&x, &t0)
    } else {
        dsp::sliding_dot_direct(&x, &t0)
    };

    let mut p1 = vec![0.0; x.len() + 1];
    let mut p2 = vec![0.0; x.len() + 1];
    for (i, &v) in x.iter().enumerate() {
        p1[i + 1] = p1[i] + v;
        p2[i + 1] = p2[i] + v * v;
    }
    let global_ss = p2[x.len()] - p1[x.len()].powi(2) / x.len() as f64;
    let floor = 1e-12 * global_ss.max(f64::MIN_POSITIVE) * m as f64 / x.len() as f64;
    (0..n_offsets)
        .map(|o| {
            let s1 = p1[o + m] - p1[o];
            let s2 = p2[o + m] - p2[o];
            let ss = s2 - s1 * s1 / m as f64;
            if ss <= floor {
                0.0
            } else {
                (numer[o] / (ss.sqrt() * t_norm)).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// Local score maxima at or above `threshold`, kept greedily in descending
/// score order so that no two detections are closer than `min_spacing`;
/// returned sorted by offset.
pub fn find_occurrences(
    trace: &Trace,
    template: &SegmentTemplate,
    threshold: f64,
    min_spacing: usize,
) -> Result<Vec<Detection>> {
    find_occurrences_with(trace, template, threshold, min_spacing, ScoreMethod::Auto)
}

pub fn find_occurrences_with(
    trace: &Trace,
    template: &SegmentTemplate,
    threshold: f64,
    min_spacing: usize,
    method: ScoreMethod,
) -> Result<Vec<Detection>> {
    check_detection_args(trace, template, threshold, min_spacing)?;
    let scores = ncc_scores(trace.samples(), template.samples(), method);
    Ok(pick_peaks(&scores, threshold, min_spacing))
}

fn check_detection_args(
    trace: &Trace,
    template: &SegmentTemplate,
    threshold: f64,
    min_spacing: usize,
) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::contract(format!(
            "threshold {threshold} outside (0, 1]"
        )));
    }
    if min_spacing == 0 {
        return Err(Error::contract("min_spacing must be at least 1"));
    }
    if trace.len() < template.len() {
        return Err(Error::contract(format!(
            "trace ({}) shorter than template ({})",
            trace.len(),
            template.len()
        )));
    }
    Ok(())
}

pub(crate) fn pick_peaks(scores: &[f64], threshold: f64, min_spacing: usize) -> Vec<Detection> {
    let n = scores.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&o| {
            let s = scores[o];
            s >= threshold && (o == 0 || s > scores[o - 1]) && (o + 1 == n || s >= scores[o + 1])
        })
        .collect();
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut kept = BTreeSet::new();
    for o in candidates {
        let lo = o.saturating_sub(min_spacing - 1);
        let hi = o + (min_spacing - 1);
        if kept.range(lo..=hi).next().is_none() {
            kept.insert(o);
        }
    }
    kept.into_iter()
        .map(|offset| Detection {
            offset,
            score: scores[offset],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulloutOptions {
    pub threshold: f64,
    /// Defaults to 0.8 x template length.
    pub min_spacing: Option<usize>,
    pub method: ScoreMethod,
}

impl Default for PulloutOptions {
    fn default() -> Self {
        PulloutOptions {
            threshold: DEFAULT_THRESHOLD,
            min_spacing: None,
            method: ScoreMethod::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pullout {
    pub segments: SegmentMatrix,
    pub detections: Vec<Detection>,
}

/// Extract one template-length row at each detection. Rows are returned as
/// detected; `average_pullout` optionally realigns them with `fine_align`.
pub fn pullout_segments(
    trace: &Trace,
    template: &SegmentTemplate,
    threshold: f64,
    _params: &AlignmentParams,
) -> Result<SegmentMatrix> {
    let opts = PulloutOptions {
        threshold,
        ..PulloutOptions::default()
    };
    Ok(pullout_with(trace, template, &opts)?.segments)
}

pub fn pullout_with(
    trace: &Trace,
    template: &SegmentTemplate,
    opts: &PulloutOptions,
) -> Result<Pullout> {
    let spacing = opts
        .min_spacing
        .unwrap_or_else(|| template.default_min_spacing());
    check_detection_args(trace, template, opts.threshold, spacing)?;
    let scores = ncc_scores(trace.samples(), template.samples(), opts.method);
    let detections = pick_peaks(&scores, opts.threshold, spacing);
    if detections.is_empty() {
        let max_score = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::NoCpsFound { max_score });
    }
    let offsets = detections.iter().map(|d| d.offset).collect();
    let segments = SegmentMatrix::from_source(trace.samples(), offsets, template.len())?;
    Ok(Pullout {
        segments,
        detections,
    })
}

/// Average pulled-out rows into one segment, optionally fine-aligning first.
pub fn average_pullout(
    rows: &SegmentMatrix,
    params: &AlignmentParams,
    realign: bool,
) -> Result<DenoisedSegment> {
    if rows.n_rows() == 0 {
        return Err(Error::contract("no rows to average"));
    }
    if realign {
        return Ok(fine_align(rows, params)?.segment);
    }
    let mut acc = vec![0.0; rows.width()];
    for row in rows.rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = rows.n_rows();
    acc.iter_mut().for_each(|a| *a /= n as f64);
    DenoisedSegment::new(acc, n, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;

    fn noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = SimRng::new(seed);
        (0..n).map(|_| rng.normal(sigma)).collect()
    }

    fn template(samples: Vec<f64>) -> SegmentTemplate {
        SegmentTemplate::new(
            samples,
            TemplateSource {
                trace_id: "t".into(),
                n_averaged: 1,
                crop_start: 0,
            },
        )
        .unwrap()
    }

    fn trace(samples: Vec<f64>) -> Trace {
        Trace::new(samples, 5e6, "t").unwrap()
    }

    #[test]
    fn self_match_scores_one() {
        let t = noise(500, 1.0, 1);
        let det = find_occurrences(&trace(t.clone()), &template(t), 0.7, 10).unwrap();
        assert_eq!(det.len(), 1);
        assert_eq!(det[0].offset, 0);
        assert!((det[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedded_copies_found() {
        let tpl = noise(800, 1.0, 2);
        let mut x = noise(15_000, 0.5, 3);
        for &o in &[0usize, 5000, 12345] {
            for (i, v) in tpl.iter().enumerate() {
                x[o + i] += v;
            }
        }
        let det = find_occurrences(&trace(x), &template(tpl), 0.7, 640).unwrap();
        let offs: Vec<usize> = det.iter().map(|d| d.offset).collect();
        assert_eq!(offs, vec![0, 5000, 12345]);
    }

    #[test]
    fn noise_gives_no_detections() {
        let tpl = template(noise(400, 1.0, 4));
        for seed in 0..20 {
            let x = trace(noise(20_000, 1.0, 100 + seed));
            assert!(find_occurrences(&x, &tpl, 0.7, 320).unwrap().is_empty());
        }
    }

    #[test]
    fn constant_template_rejected() {
        assert!(SegmentTemplate::new(
            vec![1.0; 50],
            TemplateSource {
                trace_id: String::new(),
                n_averaged: 1,
                crop_start: 0
            }
        )
        .is_err());
    }

    #[test]
    fn bad_detection_arguments() {
        let tpl = template(noise(100, 1.0, 5));
        let x = trace(noise(1000, 1.0, 6));
        assert!(find_occurrences(&x, &tpl, 0.0, 10).is_err());
        assert!(find_occurrences(&x, &tpl, 1.5, 10).is_err());
        assert!(find_occurrences(&x, &tpl, 0.5, 0).is_err());
        assert!(find_occurrences(&trace(noise(50, 1.0, 7)), &tpl, 0.5, 10).is_err());
    }

    #[test]
    fn score_paths_agree() {
        let x = noise(30_000, 1.0, 8);
        let tpl: Vec<f64> = noise(700, 1.0, 9).iter().map(|v| v + 3.0).collect();
        let d = ncc_scores(&x, &tpl, ScoreMethod::Direct);
        let f = ncc_scores(&x, &tpl, ScoreMethod::Fft);
        for (a, b) in d.iter().zip(&f) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn unattainable_threshold_reports_best_score() {
        let cfg = SynthConfig {
            n_cps: 6,
            noise_sigma: 0.3,
            ..SynthConfig::default()
        };
        let (t, _) = generate(&cfg).unwrap();
        let tpl = template(cfg.clean_cp(&[0u8; 16], 4350));
        let opts = PulloutOptions {
            threshold: 1.0,
            ..PulloutOptions::default()
        };
        match pullout_with(&t, &tpl, &opts) {
            Err(Error::NoCpsFound { max_score }) => assert!(max_score > 0.9 && max_score < 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crop_outside_segment_rejected() {
        let seg = DenoisedSegment::new(noise(100, 1.0, 10), 3, 0).unwrap();
        assert!(template_from_segment(&seg, "x", Some(Crop { start: 50, len: 60 })).is_err());
        let ok = template_from_segment(&seg, "x", Some(Crop { start: 10, len: 60 })).unwrap();
        assert_eq!(ok.len(), 60);
        assert_eq!(ok.source.crop_start, 10);
    }

    #[test]
    fn pullout_averages_rows() {
        let rows =
            SegmentMatrix::from_rows(vec![vec![1.0, 3.0], vec![3.0, 5.0]], vec![0, 9]).unwrap();
        let avg = average_pullout(&rows, &AlignmentParams::for_width(2, 1), false).unwrap();
        assert_eq!(avg.samples, vec![2.0, 4.0]);
        assert_eq!(avg.n_averaged, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn affine_invariant(a in 0.1f64..20.0, b in -50.0f64..50.0, seed in 0u64..500) {
            let x = noise(600, 1.0, seed);
            let tpl = noise(60, 1.0, seed + 1);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let s1 = ncc_scores(&x, &tpl, ScoreMethod::Direct);
            let s2 = ncc_scores(&y, &tpl, ScoreMethod::Direct);
            for (p, q) in s1.iter().zip(&s2) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn detections_sorted_and_spaced(seed in 0u64..500, spacing in 1usize..200) {
            let mut rng = SimRng::new(seed);
            let scores: Vec<f64> = (0..1000).map(|_| rng.uniform()).collect();
            let det = pick_peaks(&scores, 0.5, spacing);
            for w in det.windows(2) {
                prop_assert!(w[1].offset >= w[0].offset + spacing);
            }
            prop_assert!(det.iter().all(|d| d.score >= 0.5));
        }
    }
}
