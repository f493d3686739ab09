//! Profiled Hamming-weight template attack and PGE evaluation.
//!
//! The attack treats every POI as an independent Gaussian per HW class of
//! `SBox[p ^ k]` (naive Bayes). It is a stand-in used to measure how much
//! key information survives segmentation, not a model of any particular
//! published profile.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SimRng};
use crate::synth::sbox_hw_oracle;
use crate::trace::DenoisedSegment;

pub const N_CLASSES: usize = 9;

/// Relative variance floor applied per POI.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// A byte counts as unresolved from this PGE upwards.
pub const PGE_FAIL_LEVEL: f64 = 4.0;

/// Unresolved bytes tolerated by the success criterion.
pub const MAX_UNRESOLVED_BYTES: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    /// One entry per POI.
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// True when the mean was interpolated because the class had no samples.
    pub interpolated: bool,
    /// True when the variance is the pooled one (fewer than two samples).
    pub pooled_variance: bool,
}

/// Which variance the attack's likelihood uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceModel {
    /// One within-class variance per POI shared by all classes.
    #[default]
    Pooled,
    /// Each class uses its own variance.
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByteProfile {
    pub poi_indices: Vec<usize>,
    pub poi_correlation: Vec<f64>,
    pub classes: Vec<ClassStats>,
    /// Pooled within-class variance per POI.
    pub pooled_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub bytes: Vec<ByteProfile>,
    pub n_profiling: usize,
    pub segment_len: usize,
    pub variance_model: VarianceModel,
}

impl Profile {
    /// `(byte, class)` pairs whose means were interpolated.
    pub fn empty_classes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (b, bp) in self.bytes.iter().enumerate() {
            for (h, c) in bp.classes.iter().enumerate() {
                if c.interpolated {
                    out.push((b, h));
                }
            }
        }
        out
    }
}

fn check_labels(n_segments: usize, n_plaintexts: usize) -> Result<()> {
    if n_segments != n_plaintexts {
        return Err(Error::contract(format!(
            "{n_segments} segments but {n_plaintexts} plaintexts"
        )));
    }
    Ok(())
}

fn common_len(segments: &[DenoisedSegment]) -> Result<usize> {
    let Some(first) = segments.first() else {
        return Err(Error::contract("no segments"));
    };
    let len = first.len();
    if let Some(i) = segments.iter().position(|s| s.len() != len) {
        return Err(Error::contract(format!(
            "segment {i} has length {} instead of {len}",
            segments[i].len()
        )));
    }
    Ok(len)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = dsp::mean(x);
    let my = dsp::mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// [`build_profile_with`] using the pooled variance model.
pub fn build_profile(
    segments: &[DenoisedSegment],
    plaintexts: &[[u8; 16]],
    key: &[u8; 16],
    n_poi: usize,
) -> Result<Profile> {
    build_profile_with(segments, plaintexts, key, n_poi, VarianceModel::Pooled)
}

pub fn build_profile_with(
    segments: &[DenoisedSegment],
    plaintexts: &[[u8; 16]],
    key: &[u8; 16],
    n_poi: usize,
    variance_model: VarianceModel,
) -> Result<Profile> {
    check_labels(segments.len(), plaintexts.len())?;
    let len = common_len(segments)?;
    if n_poi == 0 || n_poi > len {
        return Err(Error::contract(format!(
            "n_poi must be in 1..={len}, got {n_poi}"
        )));
    }
    // column-major copy: one contiguous vector per sample index
    let n = segments.len();
    let mut columns = vec![0.0; len * n];
    for (j, s) in segments.iter().enumerate() {
        for (t, &v) in s.samples.iter().enumerate() {
            columns[t * n + j] = v;
        }
    }
    let bytes = (0..16)
        .into_par_iter()
        .map(|b| {
            let labels: Vec<usize> = plaintexts
                .iter()
                .map(|p| sbox_hw_oracle(p[b], key[b]) as usize)
                .collect();
            let mut seen = [false; N_CLASSES];
            labels.iter().for_each(|&h| seen[h] = true);
            if seen.iter().filter(|&&s| s).count() < 2 {
                return Err(Error::DegenerateProfile { byte: b });
            }
            let lab_f: Vec<f64> = labels.iter().map(|&h| h as f64).collect();
            let corr: Vec<f64> = (0..len)
                .map(|t| pearson(&columns[t * n..(t + 1) * n], &lab_f))
                .collect();
            let mut order: Vec<usize> = (0..len).collect();
            order.sort_by(|&a, &c| corr[c].abs().total_cmp(&corr[a].abs()).then(a.cmp(&c)));
            order.truncate(n_poi);
            let cols: Vec<&[f64]> = order
                .iter()
                .map(|&t| &columns[t * n..(t + 1) * n])
                .collect();
            let (classes, pooled_variance) = class_stats(&cols, &labels);
            Ok(ByteProfile {
                poi_correlation: order.iter().map(|&t| corr[t]).collect(),
                classes,
                pooled_variance,
                poi_indices: order,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Profile {
        bytes,
        n_profiling: n,
        segment_len: len,
        variance_model,
    })
}

/// Per-class statistics for a set of POI columns. Classes with fewer than two
/// observations take the pooled within-class variance; empty classes also get
/// a mean linearly interpolated (or extrapolated) from populated neighbours.
/// Also returns the pooled variance.
pub(crate) fn class_stats(cols: &[&[f64]], labels: &[usize]) -> (Vec<ClassStats>, Vec<f64>) {
    let n_poi = cols.len();
    let mut counts = [0usize; N_CLASSES];
    labels.iter().for_each(|&h| counts[h] += 1);
    let mut sums = vec![vec![0.0; n_poi]; N_CLASSES];
    for (p, col) in cols.iter().enumerate() {
        for (&v, &h) in col.iter().zip(labels) {
            sums[h][p] += v;
        }
    }
    let means: Vec<Vec<f64>> = (0..N_CLASSES)
        .map(|h| {
            sums[h]
                .iter()
                .map(|s| {
                    if counts[h] > 0 {
                        s / counts[h] as f64
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect();
    let mut ss = vec![vec![0.0; n_poi]; N_CLASSES];
    for (p, col) in cols.iter().enumerate() {
        for (&v, &h) in col.iter().zip(labels) {
            ss[h][p] += (v - means[h][p]).powi(2);
        }
    }
    let dof: usize = counts.iter().filter(|&&c| c > 0).map(|c| c - 1).sum();
    let floors: Vec<f64> = cols
        .iter()
        .map(|c| {
            let g = dsp::variance(c);
            if g > 0.0 {
                VARIANCE_FLOOR * g
            } else {
                f64::MIN_POSITIVE
            }
        })
        .collect();
    let pooled: Vec<f64> = (0..n_poi)
        .map(|p| {
            let total: f64 = (0..N_CLASSES).map(|h| ss[h][p]).sum();
            let v = if dof > 0 { total / dof as f64 } else { 0.0 };
            v.max(floors[p])
        })
        .collect();

    let populated: Vec<usize> = (0..N_CLASSES).filter(|&h| counts[h] > 0).collect();
    let classes = (0..N_CLASSES)
        .map(|h| {
            let interpolated = counts[h] == 0;
            let mean = if interpolated {
                (0..n_poi)
                    .map(|p| interpolate_mean(&populated, &means, h, p))
                    .collect()
            } else {
                means[h].clone()
            };
            let pooled_variance = counts[h] < 2;
            let variance = if pooled_variance {
                pooled.clone()
            } else {
                (0..n_poi)
                    .map(|p| (ss[h][p] / (counts[h] - 1) as f64).max(floors[p]))
                    .collect()
            };
            ClassStats {
                count: counts[h],
                mean,
                variance,
                interpolated,
                pooled_variance,
            }
        })
        .collect();
    (classes, pooled)
}

fn interpolate_mean(populated: &[usize], means: &[Vec<f64>], h: usize, p: usize) -> f64 {
    let below = populated.iter().rev().find(|&&c| c < h).copied();
    let above = populated.iter().find(|&&c| c > h).copied();
    let (a, b) = match (below, above) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => {
            let prev = populated.iter().rev().find(|&&c| c < a).copied();
            match prev {
                Some(pa) => (pa, a),
                None => return means[a][p],
            }
        }
        (None, Some(b)) => {
            let next = populated.iter().find(|&&c| c > b).copied();
            match next {
                Some(nb) => (b, nb),
                None => return means[b][p],
            }
        }
        (None, None) => return 0.0,
    };
    let (ma, mb) = (means[a][p], means[b][p]);
    ma + (mb - ma) * (h as f64 - a as f64) / (b as f64 - a as f64)
}

/// Gaussian log-likelihood of one segment under each HW class, per byte.
fn class_loglik(profile: &Profile, segment: &DenoisedSegment) -> [[f64; N_CLASSES]; 16] {
    let mut out = [[0.0; N_CLASSES]; 16];
    for (b, bp) in profile.bytes.iter().enumerate() {
        for (h, c) in bp.classes.iter().enumerate() {
            let var = match profile.variance_model {
                VarianceModel::Pooled => &bp.pooled_variance,
                VarianceModel::PerClass => &c.variance,
            };
            let mut ll = 0.0;
            for (p, &t) in bp.poi_indices.iter().enumerate() {
                let v = var[p];
                let d = segment.samples[t] - c.mean[p];
                ll -= 0.5 * (d * d / v + v.ln());
            }
            out[b][h] = ll;
        }
    }
    out
}

/// Running per-byte, per-hypothesis log-likelihood totals.
#[derive(Debug, Clone)]
pub struct Scores {
    totals: Vec<[f64; 256]>,
}

impl Default for Scores {
    fn default() -> Self {
        Scores {
            totals: vec![[0.0; 256]; 16],
        }
    }
}

impl Scores {
    fn add(&mut self, ll: &[[f64; N_CLASSES]; 16], plaintext: &[u8; 16]) {
        for b in 0..16 {
            let row = &mut self.totals[b];
            for (k, t) in row.iter_mut().enumerate() {
                *t += ll[b][sbox_hw_oracle(plaintext[b], k as u8) as usize];
            }
        }
    }

    pub fn byte(&self, b: usize) -> &[f64; 256] {
        &self.totals[b]
    }

    pub fn pge(&self, true_key: &[u8; 16]) -> [u8; 16] {
        std::array::from_fn(|b| pge_of(&self.totals[b], true_key[b]))
    }
}

/// Number of hypotheses scoring strictly higher than the true one.
pub fn pge_of(scores: &[f64; 256], true_byte: u8) -> u8 {
    let s = scores[true_byte as usize];
    scores.iter().filter(|&&v| v > s).count() as u8
}

fn check_attack_inputs(
    profile: &Profile,
    segments: &[DenoisedSegment],
    plaintexts: &[[u8; 16]],
) -> Result<()> {
    check_labels(segments.len(), plaintexts.len())?;
    let len = common_len(segments)?;
    if len != profile.segment_len {
        return Err(Error::contract(format!(
            "segments have {len} samples, profile expects {}",
            profile.segment_len
        )));
    }
    Ok(())
}

pub fn score_segments(
    profile: &Profile,
    segments: &[DenoisedSegment],
    plaintexts: &[[u8; 16]],
) -> Result<Scores> {
    check_attack_inputs(profile, segments, plaintexts)?;
    let mut scores = Scores::default();
    for (s, p) in segments.iter().zip(plaintexts) {
        scores.add(&class_loglik(profile, s), p);
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// Mean PGE per step and byte; integral for a single repetition.
    pub pge: Vec<[f64; 16]>,
    pub traces_used: Vec<usize>,
    pub n_repetitions: usize,
}

impl AttackReport {
    pub fn unresolved_bytes(&self, step: usize) -> usize {
        self.pge[step]
            .iter()
            .filter(|&&v| v >= PGE_FAIL_LEVEL)
            .count()
    }

    pub fn success_at(&self, step: usize) -> bool {
        self.unresolved_bytes(step) <= MAX_UNRESOLVED_BYTES
    }

    /// Success at the largest trace count.
    pub fn success(&self) -> bool {
        !self.pge.is_empty() && self.success_at(self.pge.len() - 1)
    }

    /// Smallest trace count meeting the success criterion.
    pub fn first_success(&self) -> Option<usize> {
        (0..self.pge.len())
            .find(|&i| self.success_at(i))
            .map(|i| self.traces_used[i])
    }

    pub fn final_mean_pge(&self) -> f64 {
        self.pge
            .last()
            .map_or(f64::NAN, |row| row.iter().sum::<f64>() / 16.0)
    }
}

/// One attack using every segment.
pub fn attack(
    profile: &Profile,
    segments: &[DenoisedSegment],
    plaintexts: &[[u8; 16]],
    true_key: &[u8; 16],
) -> Result<AttackReport> {
    let pge = score_segments(profile, segments, plaintexts)?.pge(true_key);
    Ok(AttackReport {
        pge: vec![pge.map(f64::from)],
        traces_used: vec![segments.len()],
        n_repetitions: 1,
    })
}

/// PGE after the first `s` segments of a seeded shuffle, for each `s` in
/// `steps`, averaged over `n_repetitions` shuffles. Repetition 0 of a single
/// repetition run keeps the original order.
pub fn pge_curve(
    profile: &Profile,
    segments: &[DenoisedSegment],
    plaintexts: &[[u8; 16]],
    true_key: &[u8; 16],
    steps: &[usize],
    n_repetitions: usize,
    seed: u64,
) -> Result<AttackReport> {
    check_attack_inputs(profile, segments, plaintexts)?;
    if steps.is_empty() || steps.windows(2).any(|w| w[0] >= w[1]) || steps[0] == 0 {
        return Err(Error::contract(
            "steps must be positive and strictly increasing",
        ));
    }
    let last = *steps.last().unwrap_or(&0);
    if last > segments.len() {
        return Err(Error::contract(format!(
            "largest step {last} exceeds the {} available segments",
            segments.len()
        )));
    }
    if n_repetitions == 0 {
        return Err(Error::contract("n_repetitions must be positive"));
    }
    let lls: Vec<_> = segments
        .par_iter()
        .map(|s| class_loglik(profile, s))
        .collect();

    let per_rep: Vec<Vec<[u8; 16]>> = (0..n_repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut order: Vec<usize> = (0..segments.len()).collect();
            if n_repetitions > 1 {
                SimRng::new(derive_seed(seed, "attack/shuffle", rep as u64)).shuffle(&mut order);
            }
            let mut scores = Scores::default();
            let mut out = Vec::with_capacity(steps.len());
            let mut used = 0;
            for &s in steps {
                for &i in &order[used..s] {
                    scores.add(&lls[i], &plaintexts[i]);
                }
                used = s;
                out.push(scores.pge(true_key));
            }
            out
        })
        .collect();

    let pge = (0..steps.len())
        .map(|i| {
            std::array::from_fn(|b| {
                per_rep.iter().map(|r| r[i][b] as f64).sum::<f64>() / n_repetitions as f64
            })
        })
        .collect();
    Ok(AttackReport {
        pge,
        traces_used: steps.to_vec(),
        n_repetitions,
    })
}

/// Evenly spread trace counts `1..=max` (at most `n` of them), always ending at `max`.
pub fn default_steps(max: usize, n: usize) -> Vec<usize> {
    let n = n.clamp(1, max.max(1));
    let mut steps: Vec<usize> = (1..=n).map(|i| (i * max).div_ceil(n)).collect();
    steps.dedup();
    steps.retain(|&s| s > 0);
    steps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SBOX;

    fn seg(v: Vec<f64>) -> DenoisedSegment {
        DenoisedSegment::new(v, 1, 0).unwrap()
    }

    fn hw(x: u8) -> usize {
        x.count_ones() as usize
    }

    /// Segments with leakage `gain * HW(SBox[p ^ k])` at sample `4 + b`,
    /// plus seeded Gaussian noise; other samples are pure noise.
    fn leaky_set(
        n: usize,
        key: &[u8; 16],
        gain: f64,
        sigma: f64,
        seed: u64,
    ) -> (Vec<DenoisedSegment>, Vec<[u8; 16]>) {
        let mut rng = SimRng::new(seed);
        let mut segs = Vec::new();
        let mut pts = Vec::new();
        for _ in 0..n {
            let p = rng.bytes16();
            let mut v: Vec<f64> = (0..24).map(|_| rng.normal(sigma)).collect();
            for b in 0..16 {
                v[4 + b] += gain * hw(SBOX[(p[b] ^ key[b]) as usize]) as f64;
            }
            segs.push(seg(v));
            pts.push(p);
        }
        (segs, pts)
    }

    #[test]
    fn pois_found_and_means_monotone() {
        let key = [0x2bu8; 16];
        let (segs, pts) = leaky_set(3000, &key, 1.0, 0.3, 1);
        let prof = build_profile(&segs, &pts, &key, 1).unwrap();
        for (b, bp) in prof.bytes.iter().enumerate() {
            assert_eq!(bp.poi_indices, vec![4 + b]);
            let means: Vec<f64> = bp.classes.iter().map(|c| c.mean[0]).collect();
            assert!(means.windows(2).all(|w| w[1] > w[0]), "byte {b}: {means:?}");
        }
    }

    #[test]
    fn noiseless_attack_recovers_key() {
        let key: [u8; 16] = std::array::from_fn(|i| (i as u8).wrapping_mul(37).wrapping_add(5));
        let (segs, pts) = leaky_set(2000, &key, 1.0, 0.0, 2);
        let prof = build_profile(&segs, &pts, &key, 1).unwrap();
        let (asegs, apts) = leaky_set(60, &key, 1.0, 0.0, 3);
        let rep = attack(&prof, &asegs, &apts, &key).unwrap();
        assert_eq!(rep.pge[0], [0.0; 16]);
        assert!(rep.success());
    }

    #[test]
    fn identical_plaintexts_are_degenerate() {
        let segs: Vec<_> = (0..10).map(|i| seg(vec![i as f64, 1.0, 2.0])).collect();
        let pts = vec![[7u8; 16]; 10];
        assert!(matches!(
            build_profile(&segs, &pts, &[0; 16], 1),
            Err(Error::DegenerateProfile { byte: 0 })
        ));
    }

    #[test]
    fn bad_inputs_rejected() {
        let key = [1u8; 16];
        let (segs, pts) = leaky_set(500, &key, 1.0, 0.5, 4);
        let prof = build_profile(&segs, &pts, &key, 2).unwrap();
        assert!(attack(&prof, &[], &[], &key).is_err());
        assert!(attack(&prof, &[seg(vec![0.0; 5])], &[[0; 16]], &key).is_err());
        assert!(attack(&prof, &segs[..2], &pts[..1], &key).is_err());
        assert!(build_profile(&segs, &pts, &key, 0).is_err());
        assert!(pge_curve(&prof, &segs, &pts, &key, &[501], 1, 0).is_err());
        assert!(pge_curve(&prof, &segs, &pts, &key, &[5, 5], 1, 0).is_err());
    }

    #[test]
    fn empty_class_is_interpolated() {
        // labels 0, 1, 3 (class 2 empty) and 5 (4 empty, 6..8 extrapolated)
        let col = [0.0, 0.2, 1.0, 1.2, 3.0, 3.0, 5.0, 5.4];
        let labels = [0, 0, 1, 1, 3, 3, 5, 5];
        let (stats, _) = class_stats(&[&col], &labels);
        assert!(stats[2].interpolated && stats[4].interpolated && stats[8].interpolated);
        assert!(!stats[1].interpolated);
        assert!((stats[2].mean[0] - 2.05).abs() < 1e-12);
        assert!((stats[4].mean[0] - 4.1).abs() < 1e-12);
        assert!((stats[7].mean[0] - 7.4).abs() < 1e-12);
        assert!(stats[2].pooled_variance);
        assert!(stats
            .iter()
            .all(|c| c.variance[0].is_finite() && c.variance[0] > 0.0));
    }

    #[test]
    fn pooled_variance_is_within_class() {
        let col = [0.0, 2.0, 10.0, 14.0];
        let (stats, pooled) = class_stats(&[&col], &[0, 0, 1, 1]);
        assert!((stats[0].variance[0] - 2.0).abs() < 1e-12);
        assert!((stats[1].variance[0] - 8.0).abs() < 1e-12);
        assert!((pooled[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn variance_floor_applies() {
        let col = [1.0, 1.0, 3.0, 3.0];
        let (stats, _) = class_stats(&[&col], &[0, 0, 1, 1]);
        assert!((stats[0].variance[0] - VARIANCE_FLOOR * dsp::variance(&col)).abs() < 1e-24);
    }

    /// Log-likelihood totals written out term by term for every hypothesis.
    fn brute_force_scores(
        segs: &[[f64; 2]],
        pts: &[u8],
        pois_mean: &[[f64; 2]; N_CLASSES],
        pois_var: &[[f64; 2]; N_CLASSES],
    ) -> Vec<f64> {
        (0..=255u8)
            .map(|k| {
                let mut total = 0.0;
                for (s, &p) in segs.iter().zip(pts) {
                    let h = SBOX[(p ^ k) as usize].count_ones() as usize;
                    for q in 0..2 {
                        let v = pois_var[h][q];
                        let d = s[q] - pois_mean[h][q];
                        total += -(d * d) / (2.0 * v) - 0.5 * v.ln();
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn ranking_matches_brute_force() {
        let mut rng = SimRng::new(77);
        for trial in 0..50 {
            let n_segs = 1 + trial % 4;
            let mut mean = [[0.0; 2]; N_CLASSES];
            let mut var = [[0.0; 2]; N_CLASSES];
            for h in 0..N_CLASSES {
                for q in 0..2 {
                    mean[h][q] = rng.normal(1.0);
                    var[h][q] = 0.2 + rng.uniform();
                }
            }
            let classes = (0..N_CLASSES)
                .map(|h| ClassStats {
                    count: 1,
                    mean: mean[h].to_vec(),
                    variance: var[h].to_vec(),
                    interpolated: false,
                    pooled_variance: false,
                })
                .collect::<Vec<_>>();
            let bp = ByteProfile {
                poi_indices: vec![0, 1],
                poi_correlation: vec![0.0, 0.0],
                classes,
                pooled_variance: vec![1.0, 1.0],
            };
            let profile = Profile {
                bytes: vec![bp; 16],
                n_profiling: 0,
                segment_len: 2,
                variance_model: VarianceModel::PerClass,
            };
            let segs: Vec<[f64; 2]> = (0..n_segs)
                .map(|_| [rng.normal(1.0), rng.normal(1.0)])
                .collect();
            let pts: Vec<[u8; 16]> = (0..n_segs).map(|_| rng.bytes16()).collect();
            let dsegs: Vec<_> = segs.iter().map(|s| seg(s.to_vec())).collect();
            let scores = score_segments(&profile, &dsegs, &pts).unwrap();
            let key = rng.bytes16();
            for b in 0..16 {
                let p_b: Vec<u8> = pts.iter().map(|p| p[b]).collect();
                let oracle = brute_force_scores(&segs, &p_b, &mean, &var);
                for k in 0..256 {
                    assert!((oracle[k] - scores.byte(b)[k]).abs() < 1e-9);
                }
                let expected = oracle
                    .iter()
                    .filter(|&&v| v > oracle[key[b] as usize])
                    .count();
                assert_eq!(pge_of(scores.byte(b), key[b]) as usize, expected);
            }
        }
    }

    #[test]
    fn random_scores_give_uniform_pge() {
        let mut rng = SimRng::new(2024);
        let trials = 500;
        let total: f64 = (0..trials)
            .map(|_| {
                let scores: [f64; 256] = std::array::from_fn(|_| rng.uniform());
                pge_of(&scores, rng.byte()) as f64
            })
            .sum();
        let mean = total / trials as f64;
        assert!((mean - 127.5).abs() < 15.0, "{mean}");
    }

    #[test]
    fn pge_ignores_constant_shift() {
        let mut rng = SimRng::new(5);
        let scores: [f64; 256] = std::array::from_fn(|_| rng.normal(1.0));
        let shifted = scores.map(|v| v + 1234.5);
        for k in 0..=255u8 {
            assert_eq!(pge_of(&scores, k), pge_of(&shifted, k));
        }
    }

    #[test]
    fn rescaled_data_gives_same_ranking() {
        let key = [0x9au8; 16];
        let (segs, pts) = leaky_set(800, &key, 0.5, 1.0, 8);
        let (asegs, apts) = leaky_set(20, &key, 0.5, 1.0, 9);
        let scale = |v: &[DenoisedSegment]| -> Vec<DenoisedSegment> {
            v.iter()
                .map(|s| seg(s.samples.iter().map(|x| 3.7 * x).collect()))
                .collect()
        };
        let a = attack(
            &build_profile(&segs, &pts, &key, 2).unwrap(),
            &asegs,
            &apts,
            &key,
        )
        .unwrap();
        let b = attack(
            &build_profile(&scale(&segs), &pts, &key, 2).unwrap(),
            &scale(&asegs),
            &apts,
            &key,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_full_step_equals_attack() {
        let key = [3u8; 16];
        let (segs, pts) = leaky_set(400, &key, 0.4, 1.0, 10);
        let prof = build_profile(&segs, &pts, &key, 2).unwrap();
        let (asegs, apts) = leaky_set(30, &key, 0.4, 1.0, 11);
        let curve = pge_curve(&prof, &asegs, &apts, &key, &[30], 1, 99).unwrap();
        assert_eq!(curve, attack(&prof, &asegs, &apts, &key).unwrap());
    }

    #[test]
    fn averaged_curve_decreases() {
        let key: [u8; 16] = std::array::from_fn(|i| i as u8 * 11);
        let (segs, pts) = leaky_set(3000, &key, 0.3, 1.0, 12);
        let prof = build_profile(&segs, &pts, &key, 1).unwrap();
        let (asegs, apts) = leaky_set(200, &key, 0.3, 1.0, 13);
        let steps = default_steps(200, 10);
        let curve = pge_curve(&prof, &asegs, &apts, &key, &steps, 30, 7).unwrap();
        for w in curve.pge.windows(2) {
            for b in 0..16 {
                assert!(w[1][b] <= w[0][b] + 1.0, "{:?}", curve.pge);
            }
        }
        assert!(curve.final_mean_pge() < curve.pge[0].iter().sum::<f64>() / 16.0);
    }

    #[test]
    fn steps_cover_range() {
        assert_eq!(default_steps(100, 4), vec![25, 50, 75, 100]);
        assert_eq!(default_steps(3, 10), vec![1, 2, 3]);
        assert_eq!(*default_steps(7, 3).last().unwrap(), 7);
    }

    #[test]
    fn success_rule() {
        let mut row = [0.0; 16];
        row[3] = 10.0;
        let mut rep = AttackReport {
            pge: vec![[20.0; 16], row],
            traces_used: vec![5, 10],
            n_repetitions: 1,
        };
        assert!(rep.success());
        assert_eq!(rep.first_success(), Some(10));
        rep.pge[1][4] = 4.0;
        assert!(!rep.success());
        assert_eq!(rep.first_success(), None);
    }
}
