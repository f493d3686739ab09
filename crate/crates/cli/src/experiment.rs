//! `vtrig run`: synth -> period -> profile -> template -> per-branch
//! denoise and attack, with a manifest recording every stage.
//!
//! Seeds: the length-finding capture uses `derive_seed(seed, "period/capture", 0)`,
//! the template capture `derive_seed(seed, "template/capture", 0)`, and the
//! profiling and attack sets derive theirs inside [`Campaign`] from the
//! root seed. Every branch attacks the same victim traces (same plaintexts,
//! noise and capture offsets); only jitter and segmentation differ.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vtrig_core::attack::{build_profile_with, Profile};
use vtrig_core::pipeline::{Campaign, Role, Segmenter};
use vtrig_core::pullout::{learn_template, PulloutOptions, SegmentTemplate};
use vtrig_core::rng::derive_seed;
use vtrig_core::{
    cut_index, estimate_period_autocorr, generate, pge_curve, refine_period, AttackReport,
    PeriodEstimate, Trace,
};

use crate::artifacts::{self, write_json};
use crate::config::{Branch, ExperimentConfig, SegmenterKind};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub jobs: usize,
    pub status: RunStatus,
    /// Stage that was running when the run stopped, if it failed.
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub exit_code: i32,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

/// Keeps the manifest on disk up to date as stages start and finish.
pub struct Recorder {
    path: PathBuf,
    pub manifest: Manifest,
}

impl Recorder {
    pub fn new(dir: &Path, command: &str, cfg: &ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let r = Recorder {
            path: dir.join(MANIFEST),
            manifest: Manifest {
                tool: "vtrig".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                core_version: vtrig_core::VERSION.into(),
                command: command.into(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                jobs: cfg.jobs,
                status: RunStatus::Running,
                failed_stage: None,
                error: None,
                exit_code: 0,
                stages: Vec::new(),
                warnings: Vec::new(),
            },
        };
        r.save()?;
        Ok(r)
    }

    fn save(&self) -> CliResult<()> {
        write_json(&self.path, &self.manifest)
    }

    pub fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.manifest.warnings.push(msg);
    }

    /// Run one stage; on error the manifest names it and the run is marked failed.
    pub fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Self) -> CliResult<T>,
    ) -> CliResult<T> {
        eprintln!("[{name}]");
        self.manifest.failed_stage = Some(name.to_string());
        self.save()?;
        let t0 = Instant::now();
        let out = f(self);
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
            ok: out.is_ok(),
        });
        match &out {
            Ok(_) => self.manifest.failed_stage = None,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.to_string());
                self.manifest.exit_code = e.exit_code();
            }
        }
        self.save()?;
        out
    }

    /// Mark a failure raised between stages (configuration checks).
    pub fn fail_outside_stage(&mut self, e: &CliError) -> CliResult<()> {
        if self.manifest.status == RunStatus::Failed {
            return Ok(());
        }
        self.manifest.status = RunStatus::Failed;
        self.manifest.failed_stage = Some("setup".into());
        self.manifest.error = Some(e.to_string());
        self.manifest.exit_code = e.exit_code();
        self.save()
    }

    pub fn finish(&mut self) -> CliResult<()> {
        self.manifest.status = RunStatus::Ok;
        self.manifest.failed_stage = None;
        self.save()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    /// Auto-correlation estimate.
    pub approx_samples: f64,
    /// Whole-sample length the refinement sweep was centred on.
    pub sweep_centre_samples: f64,
    pub refined_samples: f64,
    pub truth_samples: f64,
    pub secondary_minima: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub name: String,
    pub segmenter: SegmenterKind,
    pub jitter_max: usize,
    pub offset_percent: f64,
    pub l_cp_samples: f64,
    pub final_mean_pge: f64,
    pub final_unresolved_bytes: usize,
    pub success: bool,
    pub first_success: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub l_cp_samples: f64,
    pub period: Option<PeriodSummary>,
    pub empty_classes: usize,
    pub branches: Vec<BranchSummary>,
}

/// Run the configured experiment into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, command: &str) -> CliResult<RunSummary> {
    let dir = cfg.output_dir.clone();
    let mut rec = Recorder::new(&dir, command, cfg)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| CliError::io(&dir, e))?;
    let out = with_jobs(cfg.jobs, || stages(cfg, &dir, &mut rec))?;
    match out {
        Ok(summary) => {
            rec.finish()?;
            Ok(summary)
        }
        Err(e) => {
            rec.fail_outside_stage(&e)?;
            Err(e)
        }
    }
}

/// Run `f` on a pool of `jobs` threads (the global pool when 0).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

fn stages(cfg: &ExperimentConfig, dir: &Path, rec: &mut Recorder) -> CliResult<RunSummary> {
    let mut branch_cfg = cfg.branches.clone();
    for w in branch_cfg.dedup_offsets() {
        rec.warn(format!("branches: {w}"));
    }
    let branches = branch_cfg.expand();
    let needs_template = branches
        .iter()
        .any(|b| b.segmenter == SegmenterKind::Pullout);
    if needs_template && (cfg.pullout.crop_start.is_some() || cfg.pullout.crop_len.is_some()) {
        return Err(CliError::Config(
            "cropped templates are not usable for attack branches; crop with `vtrig template`"
                .into(),
        ));
    }

    let (l_cp, period) = match cfg.period.l_cp_samples {
        Some(l) => (l, None),
        None => {
            let capture = rec.stage("synth", |_| synth_capture(cfg, dir))?;
            let (approx, est) = rec.stage("period", |r| find_period(cfg, &capture, dir, r))?;
            let summary = PeriodSummary {
                approx_samples: approx.l_cp_samples,
                sweep_centre_samples: est.approx_samples.unwrap_or(f64::NAN),
                refined_samples: est.l_cp_samples,
                truth_samples: cfg.device.period_samples,
                secondary_minima: est.secondary_minima.clone(),
            };
            (est.l_cp_samples, Some(summary))
        }
    };
    eprintln!("CP length: {l_cp:.4} samples");

    let campaign = Campaign {
        synth: cfg.synth_config(Vec::new(), 1, 0),
        repeats_per_trace: cfg.campaign.repeats_per_trace,
        seed: cfg.seed,
    };
    campaign.validate()?;
    let width = l_cp.floor() as usize;
    let params = cfg.align.params(width);

    let profile = rec.stage("profile", |r| {
        let set = campaign.trace_set(Role::Profiling, cfg.campaign.n_profiling);
        let seg = Segmenter::VirtualTrigger {
            l_cp_samples: l_cp,
            params,
            width: None,
        };
        let segments = campaign.denoise_set(&set, &seg)?;
        let profile = build_profile_with(
            &segments,
            &set.plaintexts,
            &set.key,
            cfg.attack.n_poi,
            cfg.attack.variance_model,
        )?;
        for (b, h) in profile.empty_classes() {
            r.warn(format!(
                "profile: key byte {b} has no class-{h} segments; mean interpolated"
            ));
        }
        write_json(&dir.join("profile.json"), &profile)?;
        Ok(profile)
    })?;

    let template = if needs_template {
        Some(rec.stage("template", |_| build_template(cfg, l_cp, dir))?)
    } else {
        None
    };

    let mut summaries = Vec::new();
    for branch in &branches {
        let s = run_branch(
            cfg,
            &campaign,
            &profile,
            template.as_ref(),
            branch,
            l_cp,
            dir,
            rec,
        )?;
        summaries.push(s);
    }

    let summary = RunSummary {
        l_cp_samples: l_cp,
        period,
        empty_classes: profile.empty_classes().len(),
        branches: summaries,
    };
    rec.stage("summary", |_| write_summary(dir, &summary))?;
    Ok(summary)
}

fn synth_capture(cfg: &ExperimentConfig, dir: &Path) -> CliResult<Trace> {
    let mut sc = cfg.capture_config("period/capture")?;
    if let Some(s) = cfg.period.noise_sigma {
        sc.noise_sigma = s;
    }
    let (trace, truth) = generate(&sc)?;
    write_json(&dir.join("period_truth.json"), &truth)?;
    Ok(trace)
}

/// Segments per sweep candidate that fit the trace at the longest length.
pub fn sweep_segments(len: usize, longest: f64) -> usize {
    let w = longest.floor() as usize;
    let mut n = vtrig_core::align::feasible_segments(len, longest, 0);
    while n > 0 && cut_index(n - 1, longest) + w > len {
        n -= 1;
    }
    n
}

/// Auto-correlation estimate, snapped to whole samples, then refined.
pub fn estimate_length(
    cfg: &ExperimentConfig,
    trace: &Trace,
) -> CliResult<(PeriodEstimate, PeriodEstimate)> {
    let p = &cfg.period;
    let approx = estimate_period_autocorr(trace, p.min_period, p.max_period)?;
    let interval = p.interval_samples(trace.sample_rate_hz());
    let centre = approx.whole_samples();
    let n = match p.segments {
        Some(n) => n,
        None => sweep_segments(trace.len(), centre.l_cp_samples + interval / 2.0),
    };
    let refined = refine_period(trace, &centre, interval, p.steps, n)?;
    Ok((approx, refined))
}

fn find_period(
    cfg: &ExperimentConfig,
    trace: &Trace,
    dir: &Path,
    rec: &mut Recorder,
) -> CliResult<(PeriodEstimate, PeriodEstimate)> {
    let (approx, refined) = estimate_length(cfg, trace)?;
    eprintln!(
        "approximate length {:.3} samples, refined {:.4} samples",
        approx.l_cp_samples, refined.l_cp_samples
    );
    write_period_outputs(dir, &approx, &refined, trace.sample_rate_hz())?;
    if refined.is_ambiguous() {
        rec.warn(ambiguity_warning(&refined));
    }
    Ok((approx, refined))
}

pub fn ambiguity_warning(refined: &PeriodEstimate) -> String {
    let best = refined.l_cp_samples - refined.approx_samples.unwrap_or(refined.l_cp_samples);
    let mut nearest = refined.secondary_minima.clone();
    nearest.sort_by(|a, b| (a - best).abs().total_cmp(&(b - best).abs()));
    let shown: Vec<String> = nearest.iter().take(5).map(|d| format!("{d:.4}")).collect();
    format!(
        "period: {} competing distance minima within 5% of the global one (nearest at delta {} samples)",
        nearest.len(),
        shown.join(", ")
    )
}

pub fn write_period_outputs(
    dir: &Path,
    approx: &PeriodEstimate,
    refined: &PeriodEstimate,
    sample_rate_hz: f64,
) -> CliResult<()> {
    if let Some(curve) = &refined.distance_curve {
        artifacts::write_distance_curve(&dir.join("distance_curve.csv"), curve, sample_rate_hz)?;
    }
    let slim = |e: &PeriodEstimate| PeriodEstimate {
        distance_curve: None,
        ..e.clone()
    };
    write_json(
        &dir.join("period.json"),
        &serde_json::json!({ "approximate": slim(approx), "refined": slim(refined) }),
    )
}

fn build_template(cfg: &ExperimentConfig, l_cp: f64, dir: &Path) -> CliResult<SegmentTemplate> {
    let mut sc = cfg.capture_config("template/capture")?;
    sc.n_cps = cfg.pullout.template_cps;
    sc.repeats_per_plaintext = 1;
    sc.plaintexts = {
        let mut rng = vtrig_core::rng::SimRng::new(derive_seed(sc.seed, "template/plaintexts", 0));
        (0..sc.n_cps).map(|_| rng.bytes16()).collect()
    };
    sc.jitter_max = 0;
    let (trace, _) = generate(&sc)?;
    let width = l_cp.floor() as usize;
    let n = sweep_segments(trace.len(), l_cp);
    let tpl = learn_template(&trace, l_cp, n, &cfg.align.params(width), None)?;
    artifacts::write_matrix(
        &dir.join("template.f32"),
        [tpl.samples()],
        serde_json::to_value(&tpl.source).expect("source serialises"),
    )?;
    Ok(tpl)
}

#[allow(clippy::too_many_arguments)]
fn run_branch(
    cfg: &ExperimentConfig,
    base: &Campaign,
    profile: &Profile,
    template: Option<&SegmentTemplate>,
    branch: &Branch,
    l_cp: f64,
    dir: &Path,
    rec: &mut Recorder,
) -> CliResult<BranchSummary> {
    let mut campaign = base.clone();
    campaign.synth.jitter_max = branch.jitter_max;
    let l_branch = l_cp * (1.0 + branch.offset_percent / 100.0);
    let params = cfg.align.params(profile.segment_len);
    let segmenter = match branch.segmenter {
        SegmenterKind::Vt => Segmenter::VirtualTrigger {
            l_cp_samples: l_branch,
            params,
            width: Some(profile.segment_len),
        },
        SegmenterKind::Pullout => Segmenter::Pullout {
            template: template.expect("template stage ran"),
            options: PulloutOptions {
                threshold: cfg.pullout.threshold,
                min_spacing: cfg.pullout.min_spacing,
                method: cfg.pullout.method,
            },
            realign: cfg.pullout.realign,
            params,
        },
    };
    let set = campaign.trace_set(Role::Attack, cfg.campaign.n_attack);
    let segments = rec.stage(&format!("denoise/{}", branch.name), |_| {
        Ok(campaign.denoise_set(&set, &segmenter)?)
    })?;
    let report = rec.stage(&format!("attack/{}", branch.name), |_| {
        let steps = cfg.attack.steps_for(segments.len());
        let seed = derive_seed(cfg.seed, "attack/curve", 0);
        let report = pge_curve(
            profile,
            &segments,
            &set.plaintexts,
            &set.key,
            &steps,
            cfg.attack.repetitions,
            seed,
        )?;
        let bdir = dir.join(&branch.name);
        fs::create_dir_all(&bdir).map_err(|e| CliError::io(&bdir, e))?;
        artifacts::write_pge(&bdir.join("pge.csv"), &report)?;
        artifacts::write_pge_grid(&bdir.join("pge_grid.dat"), &report)?;
        write_json(&bdir.join("report.json"), &report)?;
        Ok(report)
    })?;
    Ok(branch_summary(branch, l_branch, &report))
}

fn branch_summary(branch: &Branch, l_cp: f64, report: &AttackReport) -> BranchSummary {
    BranchSummary {
        name: branch.name.clone(),
        segmenter: branch.segmenter,
        jitter_max: branch.jitter_max,
        offset_percent: branch.offset_percent,
        l_cp_samples: l_cp,
        final_mean_pge: report.final_mean_pge(),
        final_unresolved_bytes: report.unresolved_bytes(report.pge.len() - 1),
        success: report.success(),
        first_success: report.first_success(),
    }
}

fn write_summary(dir: &Path, summary: &RunSummary) -> CliResult<()> {
    write_json(&dir.join(SUMMARY), summary)?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record([
        "branch",
        "segmenter",
        "jitter_max",
        "offset_percent",
        "l_cp_samples",
        "final_mean_pge",
        "final_unresolved_bytes",
        "success",
        "first_success",
    ])
    .map_err(|e| CliError::io(&path, e))?;
    for b in &summary.branches {
        w.write_record([
            b.name.clone(),
            b.segmenter.label().to_string(),
            b.jitter_max.to_string(),
            b.offset_percent.to_string(),
            b.l_cp_samples.to_string(),
            b.final_mean_pge.to_string(),
            b.final_unresolved_bytes.to_string(),
            b.success.to_string(),
            b.first_success.map_or(String::new(), |s| s.to_string()),
        ])
        .map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}
