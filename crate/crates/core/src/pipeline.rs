//! Campaign plumbing shared by the CLI, the acceptance suite and benches:
//! seeded sets of synthetic traces (one fixed plaintext per trace, repeated
//! CPs), their reduction to denoised segments by virtual triggering or by
//! pattern pullout, and the length-precision sweep.
//!
//! Every trace draws its seed as `derive_seed(campaign.seed, "<role>/trace", i)`,
//! so a profiling or attack set is reproducible independently of the others.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{denoise_rows, feasible_segments, segment_trace_with_width, AlignmentParams};
use crate::attack::{build_profile, pge_curve, AttackReport, Profile};
use crate::error::{Error, Result};
use crate::pullout::{average_pullout, pullout_with, PulloutOptions, SegmentTemplate};
use crate::rng::{derive_seed, SimRng};
use crate::synth::{generate, GroundTruth, SynthConfig};
use crate::trace::{DenoisedSegment, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Profiling,
    Attack,
}

impl Role {
    fn label(self) -> &'static str {
        match self {
            Role::Profiling => "profiling",
            Role::Attack => "attack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    /// Device and channel model. `key`, `plaintexts`, `n_cps`, `seed` and
    /// `lead_in` are overridden per trace.
    pub synth: SynthConfig,
    /// CPs (all on the same plaintext) captured per trace.
    pub repeats_per_trace: usize,
    pub seed: u64,
}

/// Plaintexts and key for one role; trace `i` processes `plaintexts[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub role: Role,
    pub key: [u8; 16],
    pub plaintexts: Vec<[u8; 16]>,
}

impl Campaign {
    pub fn validate(&self) -> Result<()> {
        if self.repeats_per_trace == 0 {
            return Err(Error::config("repeats_per_trace must be positive"));
        }
        self.synth.validate()
    }

    pub fn key(&self, role: Role) -> [u8; 16] {
        SimRng::new(derive_seed(self.seed, &format!("{}/key", role.label()), 0)).bytes16()
    }

    pub fn trace_set(&self, role: Role, n: usize) -> TraceSet {
        let mut rng = SimRng::new(derive_seed(
            self.seed,
            &format!("{}/plaintexts", role.label()),
            0,
        ));
        TraceSet {
            role,
            key: self.key(role),
            plaintexts: (0..n).map(|_| rng.bytes16()).collect(),
        }
    }

    /// Synthesis config of trace `i` of a set. Profiling captures are
    /// jitter-free whatever the campaign jitter.
    pub fn trace_config(&self, set: &TraceSet, i: usize) -> SynthConfig {
        let seed = derive_seed(self.seed, &format!("{}/trace", set.role.label()), i as u64);
        let period_floor = self.synth.period_samples.floor() as usize;
        let lead_in = SimRng::new(derive_seed(seed, "lead_in", 0)).below(period_floor);
        SynthConfig {
            key: set.key,
            plaintexts: vec![set.plaintexts[i]],
            repeats_per_plaintext: self.repeats_per_trace,
            n_cps: self.repeats_per_trace,
            seed,
            lead_in,
            jitter_max: match set.role {
                Role::Profiling => 0,
                Role::Attack => self.synth.jitter_max,
            },
            ..self.synth.clone()
        }
    }

    pub fn synth_trace(&self, set: &TraceSet, i: usize) -> Result<(Trace, GroundTruth)> {
        generate(&self.trace_config(set, i))
    }

    /// Denoise every trace of the set, in parallel, preserving order.
    pub fn denoise_set(
        &self,
        set: &TraceSet,
        segmenter: &Segmenter,
    ) -> Result<Vec<DenoisedSegment>> {
        (0..set.plaintexts.len())
            .into_par_iter()
            .map(|i| {
                let (trace, _) = self.synth_trace(set, i)?;
                segmenter.denoise(&trace)
            })
            .collect()
    }
}

/// How a multi-CP trace is reduced to one denoised segment.
#[derive(Debug, Clone)]
pub enum Segmenter<'a> {
    VirtualTrigger {
        l_cp_samples: f64,
        params: AlignmentParams,
        /// Row width; `floor(l_cp)` when unset.
        width: Option<usize>,
    },
    Pullout {
        template: &'a SegmentTemplate,
        options: PulloutOptions,
        /// Fine-align detected rows before averaging.
        realign: bool,
        params: AlignmentParams,
    },
}

impl Segmenter<'_> {
    pub fn denoise(&self, trace: &Trace) -> Result<DenoisedSegment> {
        match self {
            Segmenter::VirtualTrigger {
                l_cp_samples,
                params,
                width,
            } => {
                let width = width.unwrap_or(l_cp_samples.floor() as usize);
                if width == 0 || width > trace.len() {
                    return Err(Error::contract(format!(
                        "row width {width} does not fit a trace of {} samples",
                        trace.len()
                    )));
                }
                // rows k with cut_index(k) + width <= len
                let n = feasible_segments(trace.len() - width, *l_cp_samples, 0) + 1;
                let rows = segment_trace_with_width(trace, *l_cp_samples, n, 0, width)?;
                Ok(denoise_rows(&rows, params)?.segment)
            }
            Segmenter::Pullout {
                template,
                options,
                realign,
                params,
            } => {
                let p = pullout_with(trace, template, options)?;
                average_pullout(&p.segments, params, *realign)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub n_profiling: usize,
    pub n_attack: usize,
    pub n_poi: usize,
    pub steps: Vec<usize>,
    pub n_repetitions: usize,
}

/// Profile on VT-denoised profiling traces at `l_cp_samples`.
pub fn vt_profile(
    campaign: &Campaign,
    l_cp_samples: f64,
    params: &AlignmentParams,
    plan: &AttackPlan,
) -> Result<Profile> {
    let set = campaign.trace_set(Role::Profiling, plan.n_profiling);
    let seg = Segmenter::VirtualTrigger {
        l_cp_samples,
        params: *params,
        width: None,
    };
    let segments = campaign.denoise_set(&set, &seg)?;
    build_profile(&segments, &set.plaintexts, &set.key, plan.n_poi)
}

/// Denoise the attack set with `segmenter` and compute its PGE curve.
pub fn attack_campaign(
    campaign: &Campaign,
    profile: &Profile,
    segmenter: &Segmenter,
    plan: &AttackPlan,
) -> Result<AttackReport> {
    let set = campaign.trace_set(Role::Attack, plan.n_attack);
    let segments = campaign.denoise_set(&set, segmenter)?;
    pge_curve(
        profile,
        &segments,
        &set.plaintexts,
        &set.key,
        &plan.steps,
        plan.n_repetitions,
        derive_seed(campaign.seed, "attack/curve", 0),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub offset_samples: f64,
    pub l_cp_samples: f64,
    pub report: AttackReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub warnings: Vec<String>,
}

/// Remove repeated offsets (first occurrence kept), returning a warning per
/// duplicate.
pub fn dedup_offsets(offsets: &[f64]) -> (Vec<f64>, Vec<String>) {
    let mut out: Vec<f64> = Vec::new();
    let mut warnings = Vec::new();
    for &o in offsets {
        if out.contains(&o) {
            warnings.push(format!("duplicate offset {o} ignored"));
        } else {
            out.push(o);
        }
    }
    (out, warnings)
}

/// Attack the same victim traces cut at `base + offset` for every offset,
/// against one profile built at `base`. Rows keep the profile's width
/// `floor(base)` so only the accumulated drift differs between offsets.
pub fn precision_sweep(
    campaign: &Campaign,
    base_lcp_samples: f64,
    offsets: &[f64],
    params: &AlignmentParams,
    plan: &AttackPlan,
) -> Result<SweepResult> {
    let (offsets, warnings) = dedup_offsets(offsets);
    if !offsets.contains(&0.0) {
        return Err(Error::config("offsets must include 0"));
    }
    if offsets
        .iter()
        .any(|o| !o.is_finite() || base_lcp_samples + o < 1.0)
    {
        return Err(Error::config(
            "offsets must be finite and leave a positive length",
        ));
    }
    let profile = vt_profile(campaign, base_lcp_samples, params, plan)?;
    let mut entries = Vec::with_capacity(offsets.len());
    for offset in offsets {
        let l_cp = base_lcp_samples + offset;
        let seg = Segmenter::VirtualTrigger {
            l_cp_samples: l_cp,
            params: *params,
            width: Some(profile.segment_len),
        };
        entries.push(SweepEntry {
            offset_samples: offset,
            l_cp_samples: l_cp,
            report: attack_campaign(campaign, &profile, &seg, plan)?,
        });
    }
    Ok(SweepResult { entries, warnings })
}
