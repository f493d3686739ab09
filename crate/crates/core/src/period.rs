//! CP length discovery: coarse period from auto-correlation peaks, then a
//! sub-sample sweep that minimises the L1 distance between the even-row and
//! odd-row averages of the segmented trace.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::trace::{cut_index, Trace};

/// Auto-correlation is evaluated up to this many times `max_period`.
pub const AUTOCORR_SPAN: usize = 8;

/// Peaks must reach this fraction of the largest normalised correlation in range.
pub const PEAK_FRACTION: f64 = 0.5;

/// Peaks must also clear `PEAK_NOISE_Z / sqrt(overlap)`, i.e. stand well
/// above the spread of a white-noise auto-correlation at that lag.
pub const PEAK_NOISE_Z: f64 = 6.0;

/// Secondary minima within this relative margin of the global one are reported.
pub const AMBIGUITY_MARGIN: f64 = 0.05;

/// Minima closer than this many sweep steps to the global one are the same valley.
pub const AMBIGUITY_EXCLUSION_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Approximate,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub delta_samples: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub l_cp_samples: f64,
    pub stage: Stage,
    /// Approximate length the sweep was centred on (refined estimates only).
    pub approx_samples: Option<f64>,
    pub distance_curve: Option<Vec<DistancePoint>>,
    /// Auto-correlation peak lags, ascending (approximate estimates only).
    pub peak_lags: Option<Vec<usize>>,
    pub peak_spacings: Option<Vec<usize>>,
    /// Deltas of local minima competing with the global one.
    #[serde(default)]
    pub secondary_minima: Vec<f64>,
}

impl PeriodEstimate {
    pub fn approximate(l_cp_samples: f64) -> Self {
        PeriodEstimate {
            l_cp_samples,
            stage: Stage::Approximate,
            approx_samples: None,
            distance_curve: None,
            peak_lags: None,
            peak_spacings: None,
            secondary_minima: Vec::new(),
        }
    }

    /// The same estimate snapped to a whole number of samples, the form the
    /// refinement sweep is centred on.
    pub fn whole_samples(&self) -> Self {
        PeriodEstimate {
            l_cp_samples: self.l_cp_samples.round(),
            ..self.clone()
        }
    }

    pub fn is_ambiguous(&self) -> bool {
        !self.secondary_minima.is_empty()
    }

    /// Index of the chosen delta in the distance curve.
    pub fn argmin_index(&self) -> Option<usize> {
        let curve = self.distance_curve.as_ref()?;
        let l1: Vec<f64> = curve.iter().map(|p| p.l1).collect();
        dsp::argmin_first(&l1)
    }
}

/// Coarse CP length from the spacing of auto-correlation peaks.
pub fn estimate_period_autocorr(
    trace: &Trace,
    min_period: usize,
    max_period: usize,
) -> Result<PeriodEstimate> {
    if min_period == 0 || min_period >= max_period {
        return Err(Error::contract(format!(
            "need 0 < min_period < max_period, got {min_period}..{max_period}"
        )));
    }
    let x = trace.samples();
    let n = x.len();
    if n < 3 * max_period {
        return Err(Error::contract(format!(
            "trace of {n} samples is shorter than 3 x max_period ({})",
            3 * max_period
        )));
    }
    let max_lag = (AUTOCORR_SPAN * max_period).min(n - max_period);
    let r = dsp::autocorrelation(x, max_lag);
    if r[0] <= 0.0 {
        return Err(Error::NoPeriodicity("trace is constant".into()));
    }
    // unbiased, normalised to the zero-lag power
    let power = r[0] / n as f64;
    let rho: Vec<f64> = r
        .iter()
        .enumerate()
        .map(|(l, v)| v / (n - l) as f64 / power)
        .collect();

    let range = min_period..=max_lag;
    let top = rho[range.clone()]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<usize> = range
        .filter(|&l| {
            let left_ok = rho[l] > rho[l - 1];
            let right_ok = l == max_lag || rho[l] >= rho[l + 1];
            let floor = (PEAK_FRACTION * top).max(PEAK_NOISE_Z / ((n - l) as f64).sqrt());
            left_ok && right_ok && rho[l] >= floor
        })
        .collect();
    candidates.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));

    let mut peaks: Vec<usize> = Vec::new();
    for c in candidates {
        if peaks.iter().all(|&p| p.abs_diff(c) >= min_period) {
            peaks.push(c);
        }
    }
    peaks.sort_unstable();
    if peaks.len() < 2 {
        return Err(Error::NoPeriodicity(format!(
            "{} auto-correlation peak(s) above threshold in lags {min_period}..={max_lag}",
            peaks.len()
        )));
    }
    let spacings: Vec<usize> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    let l_cp = spacings.iter().sum::<usize>() as f64 / spacings.len() as f64;
    Ok(PeriodEstimate {
        l_cp_samples: l_cp,
        stage: Stage::Approximate,
        approx_samples: None,
        distance_curve: None,
        peak_lags: Some(peaks),
        peak_spacings: Some(spacings),
        secondary_minima: Vec::new(),
    })
}

/// Mean absolute difference between two equal-length segments.
pub fn l1_distance(seg_a: &[f64], seg_b: &[f64]) -> Result<f64> {
    if seg_a.len() != seg_b.len() || seg_a.is_empty() {
        return Err(Error::contract(format!(
            "l1_distance needs equal non-empty lengths, got {} and {}",
            seg_a.len(),
            seg_b.len()
        )));
    }
    let sum: f64 = seg_a.iter().zip(seg_b).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / seg_a.len() as f64)
}

/// Even-row and odd-row averages of a trace cut at fractional length `length`.
pub fn even_odd_averages(samples: &[f64], length: f64, n_segments: usize) -> (Vec<f64>, Vec<f64>) {
    let width = length.floor() as usize;
    let mut even = vec![0.0; width];
    let mut odd = vec![0.0; width];
    for k in 0..n_segments {
        let start = cut_index(k, length);
        let row = &samples[start..start + width];
        let acc = if k % 2 == 0 { &mut even } else { &mut odd };
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n_even = n_segments.div_ceil(2) as f64;
    let n_odd = (n_segments / 2) as f64;
    even.iter_mut().for_each(|v| *v /= n_even);
    odd.iter_mut().for_each(|v| *v /= n_odd);
    (even, odd)
}

/// Sweep `delta` over `[-interval/2, interval/2]` in `n_steps` equal steps
/// (`n_steps + 1` candidates) and keep the one minimising the even/odd L1
/// distance. The whole trace is reused for every candidate.
pub fn refine_period(
    trace: &Trace,
    approx: &PeriodEstimate,
    interval_samples: f64,
    n_steps: usize,
    n_segments: usize,
) -> Result<PeriodEstimate> {
    if n_steps < 2 {
        return Err(Error::contract("refine_period needs at least 2 steps"));
    }
    if n_segments < 2 {
        return Err(Error::contract("refine_period needs at least 2 segments"));
    }
    if !(interval_samples.is_finite() && interval_samples > 0.0) {
        return Err(Error::contract("sweep interval must be positive"));
    }
    let base = approx.l_cp_samples;
    if base - interval_samples / 2.0 < 1.0 {
        return Err(Error::contract(
            "sweep interval reaches non-positive lengths",
        ));
    }
    let x = trace.samples();
    let longest = base + interval_samples / 2.0;
    let needed = cut_index(n_segments - 1, longest) + longest.floor() as usize;
    if needed > x.len() {
        let max_feasible = (1..=n_segments)
            .take_while(|&k| cut_index(k - 1, longest) + longest.floor() as usize <= x.len())
            .count();
        return Err(Error::Bounds {
            reason: format!(
                "{n_segments} segments of up to {longest:.3} samples need {needed}, trace has {}",
                x.len()
            ),
            max_feasible,
        });
    }

    let step = interval_samples / n_steps as f64;
    let deltas: Vec<f64> = (0..=n_steps)
        .map(|j| -interval_samples / 2.0 + j as f64 * step)
        .collect();
    let curve: Vec<DistancePoint> = deltas
        .par_iter()
        .map(|&d| {
            let (a, b) = even_odd_averages(x, base + d, n_segments);
            DistancePoint {
                delta_samples: d,
                l1: l1_distance(&a, &b).expect("equal widths"),
            }
        })
        .collect();

    let l1: Vec<f64> = curve.iter().map(|p| p.l1).collect();
    let lo = l1.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = l1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::DeltaNotIdentifiable { spread: hi - lo });
    }
    let best = dsp::argmin_first(&l1).expect("non-empty curve");
    let secondary_minima = competing_minima(&l1, best)
        .into_iter()
        .map(|i| deltas[i])
        .collect();

    Ok(PeriodEstimate {
        l_cp_samples: base + deltas[best],
        stage: Stage::Refined,
        approx_samples: Some(base),
        distance_curve: Some(curve),
        peak_lags: None,
        peak_spacings: None,
        secondary_minima,
    })
}

fn competing_minima(l1: &[f64], best: usize) -> Vec<usize> {
    let global = l1[best];
    let limit = global + AMBIGUITY_MARGIN * global.abs();
    (0..l1.len())
        .filter(|&i| i.abs_diff(best) > AMBIGUITY_EXCLUSION_STEPS)
        .filter(|&i| {
            let left = i == 0 || l1[i] < l1[i - 1];
            let right = i + 1 == l1.len() || l1[i] <= l1[i + 1];
            left && right && l1[i] <= limit
        })
        .collect()
}
