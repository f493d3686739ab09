//! Subcommand definitions. Every flag except `--config` and `--set` is a
//! shorthand for one config key (listed in its help text); the merged
//! config drives the command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use vtrig_core::align::{denoise_rows, segment_trace};
use vtrig_core::attack::build_profile_with;
use vtrig_core::pullout::{
    pullout_with, template_from_segment, Crop, PulloutOptions, TemplateSource,
};
use vtrig_core::trace::{load_trace, save_real_trace, write_sidecar};
use vtrig_core::{generate, pge_curve, GroundTruth, Profile, SegmentTemplate, Trace};

use crate::artifacts::{self, read_json, write_json};
use crate::config::{parse_override, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, run_experiment, with_jobs};
use crate::report;

#[derive(Debug, Parser)]
#[command(
    name = "vtrig",
    version,
    about = "Trigger-free segmentation of side-channel traces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-CP trace and its ground truth.
    Synth(SynthArgs),
    /// Estimate the CP length of a trace.
    Period(PeriodArgs),
    /// Virtual-trigger segmentation, fine alignment and rotation.
    Denoise(DenoiseArgs),
    /// Learn a pattern template from a jitter-free trace.
    Template(TemplateArgs),
    /// Locate and extract CP segments by template matching.
    Pullout(PulloutArgs),
    /// Build a profiled-attack model from labelled denoised segments.
    Profile(ProfileArgs),
    /// Attack labelled denoised segments and write PGE curves.
    Attack(AttackArgs),
    /// Length-precision sweep: VT attacks at forced CP-length offsets.
    Sweep(SweepArgs),
    /// Run a full experiment recipe.
    Run(RunArgs),
    /// Summarise a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML (or .json) experiment config.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set device.noise_sigma=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// [seed] Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// [jobs] Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Typed flag values collected as config overrides.
#[derive(Default)]
struct Overrides(Vec<(String, toml::Value)>);

impl Overrides {
    fn int(&mut self, key: &str, v: Option<usize>) {
        if let Some(v) = v {
            self.0.push((key.into(), toml::Value::Integer(v as i64)));
        }
    }

    fn float(&mut self, key: &str, v: Option<f64>) {
        if let Some(v) = v {
            self.0.push((key.into(), toml::Value::Float(v)));
        }
    }

    fn flag(&mut self, key: &str, v: bool) {
        if v {
            self.0.push((key.into(), toml::Value::Boolean(true)));
        }
    }

    fn text(&mut self, key: &str, v: Option<&str>) {
        if let Some(v) = v {
            self.0
                .push((key.into(), toml::Value::String(v.to_string())));
        }
    }

    fn path(&mut self, key: &str, v: Option<&Path>) {
        self.text(key, v.map(|p| p.to_str().expect("utf-8 path")));
    }

    fn ints(&mut self, key: &str, v: &[usize]) {
        if !v.is_empty() {
            let list = v.iter().map(|&x| toml::Value::Integer(x as i64)).collect();
            self.0.push((key.into(), toml::Value::Array(list)));
        }
    }

    fn floats(&mut self, key: &str, v: &[f64]) {
        if !v.is_empty() {
            let list = v.iter().map(|&x| toml::Value::Float(x)).collect();
            self.0.push((key.into(), toml::Value::Array(list)));
        }
    }

    fn paths(&mut self, key: &str, v: &[PathBuf]) {
        if !v.is_empty() {
            let list = v
                .iter()
                .map(|p| toml::Value::String(p.to_str().expect("utf-8 path").to_string()))
                .collect();
            self.0.push((key.into(), toml::Value::Array(list)));
        }
    }

    /// Merge file, flags and `--set` (in that order of increasing priority).
    fn load(mut self, common: &Common) -> CliResult<ExperimentConfig> {
        if let Some(seed) = common.seed {
            let seed = i64::try_from(seed)
                .map_err(|_| CliError::Config("seed must be below 2^63".into()))?;
            self.0.push(("seed".into(), toml::Value::Integer(seed)));
        }
        self.int("jobs", common.jobs);
        for s in &common.set {
            self.0.push(parse_override(s)?);
        }
        ExperimentConfig::load(common.config.as_deref(), &self.0)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// [paths.out] Trace file to write (float32); default trace.f32.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [synth.n_cps]
    #[arg(long)]
    pub n_cps: Option<usize>,
    /// [synth.lead_in]
    #[arg(long)]
    pub lead_in: Option<usize>,
    /// [synth.repeats_per_plaintext]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// [synth.key] 32 hex digits.
    #[arg(long)]
    pub key: Option<String>,
    /// [device.period_samples]
    #[arg(long)]
    pub period_samples: Option<f64>,
    /// [device.noise_sigma]
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// [device.leak_gain]
    #[arg(long)]
    pub leak_gain: Option<f64>,
    /// [device.jitter_max]
    #[arg(long)]
    pub jitter_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PeriodArgs {
    #[command(flatten)]
    pub common: Common,
    /// [paths.trace]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// [period.min_period]
    #[arg(long)]
    pub min_period: Option<usize>,
    /// [period.max_period]
    #[arg(long)]
    pub max_period: Option<usize>,
    /// [period.interval_ns]
    #[arg(long)]
    pub interval_ns: Option<f64>,
    /// [period.steps]
    #[arg(long)]
    pub steps: Option<usize>,
    /// [period.segments]
    #[arg(long)]
    pub segments: Option<usize>,
    /// [paths.out] Output directory; default the current one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignFlags {
    /// [period.l_cp_samples] CP length in samples.
    #[arg(long)]
    pub lcp: Option<f64>,
    /// [align.n_segments]
    #[arg(long)]
    pub segments: Option<usize>,
    /// [align.max_lag]
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// [align.idle_window]
    #[arg(long)]
    pub idle_window: Option<usize>,
    /// [align.correlation_mode] plain or normalized.
    #[arg(long)]
    pub correlation: Option<String>,
}

impl AlignFlags {
    fn add(&self, o: &mut Overrides) {
        o.float("period.l_cp_samples", self.lcp);
        o.int("align.n_segments", self.segments);
        o.int("align.max_lag", self.max_lag);
        o.int("align.idle_window", self.idle_window);
        o.text("align.correlation_mode", self.correlation.as_deref());
    }
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub common: Common,
    /// [paths.trace] One or more traces; one denoised row each.
    #[arg(long)]
    pub trace: Vec<PathBuf>,
    #[command(flatten)]
    pub align: AlignFlags,
    /// [paths.out] Matrix to write; default denoised.f32.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TemplateArgs {
    #[command(flatten)]
    pub common: Common,
    /// [paths.trace]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub align: AlignFlags,
    /// [pullout.crop_start]
    #[arg(long)]
    pub crop_start: Option<usize>,
    /// [pullout.crop_len]
    #[arg(long)]
    pub crop_len: Option<usize>,
    /// [paths.out] Template file; default tpl.f32.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PulloutArgs {
    #[command(flatten)]
    pub common: Common,
    /// [paths.trace]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// [paths.template]
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// [pullout.threshold]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// [pullout.min_spacing]
    #[arg(long)]
    pub min_spacing: Option<usize>,
    /// [pullout.method] auto, direct or fft.
    #[arg(long)]
    pub method: Option<String>,
    /// [paths.out] Output directory; default the current one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelledSegments {
    /// [paths.segments] Denoised segment matrix.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// [paths.labels] Plaintext/key CSV for the matrix rows.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: LabelledSegments,
    /// [attack.n_poi]
    #[arg(long)]
    pub n_poi: Option<usize>,
    /// [attack.variance_model] pooled or per_class.
    #[arg(long)]
    pub variance_model: Option<String>,
    /// [paths.out] Profile to write; default profile.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    /// [paths.profile]
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[command(flatten)]
    pub input: LabelledSegments,
    /// [attack.steps] Comma-separated trace counts.
    #[arg(long, value_delimiter = ',')]
    pub steps: Vec<usize>,
    /// [attack.n_steps]
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// [attack.repetitions]
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// [paths.out] Output directory; default the current one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunFlags {
    /// [output_dir]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [period.l_cp_samples] Skip length finding and use this CP length.
    #[arg(long)]
    pub lcp: Option<f64>,
    /// [device.noise_sigma]
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// [device.leak_gain]
    #[arg(long)]
    pub leak_gain: Option<f64>,
    /// [campaign.repeats_per_trace]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// [campaign.n_profiling]
    #[arg(long)]
    pub profiling: Option<usize>,
    /// [campaign.n_attack]
    #[arg(long)]
    pub attack_traces: Option<usize>,
    /// [attack.repetitions]
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// [pullout.threshold]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// [pullout.realign]
    #[arg(long)]
    pub realign: bool,
    /// [branches.jitter_max] Comma-separated jitter levels.
    #[arg(long, value_delimiter = ',')]
    pub jitter: Vec<usize>,
}

impl RunFlags {
    fn add(&self, o: &mut Overrides) {
        o.path("output_dir", self.out.as_deref());
        o.float("period.l_cp_samples", self.lcp);
        o.float("device.noise_sigma", self.noise_sigma);
        o.float("device.leak_gain", self.leak_gain);
        o.int("campaign.repeats_per_trace", self.repeats);
        o.int("campaign.n_profiling", self.profiling);
        o.int("campaign.n_attack", self.attack_traces);
        o.int("attack.repetitions", self.repetitions);
        o.float("pullout.threshold", self.threshold);
        o.flag("pullout.realign", self.realign);
        o.ints("branches.jitter_max", &self.jitter);
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub flags: RunFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub flags: RunFlags,
    /// [branches.length_offsets_percent] Comma-separated offsets, in percent of the CP length.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub offsets_percent: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    /// Second run to compare per-stage timings against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Period(a) => period(a),
        Command::Denoise(a) => denoise(a),
        Command::Template(a) => template(a),
        Command::Pullout(a) => pullout(a),
        Command::Profile(a) => profile(a),
        Command::Attack(a) => attack(a),
        Command::Sweep(a) => sweep(a),
        Command::Run(a) => run(a),
        Command::Report(a) => {
            let text = match &a.compare {
                Some(other) => report::compare(&a.run_dir, other)?,
                None => report::report(&a.run_dir)?,
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn require_file(path: Option<&Path>, key: &str) -> CliResult<PathBuf> {
    let p = path.ok_or_else(|| CliError::Config(format!("{key} is required")))?;
    if !p.is_file() {
        return Err(CliError::Config(format!(
            "{key}: {} does not exist",
            p.display()
        )));
    }
    Ok(p.to_path_buf())
}

fn first_trace(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    require_file(cfg.paths.trace.first().map(PathBuf::as_path), "paths.trace")
}

fn out_path(cfg: &ExperimentConfig, default: &str) -> PathBuf {
    cfg.paths
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(default))
}

fn out_dir(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = out_path(cfg, ".");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn require_lcp(cfg: &ExperimentConfig) -> CliResult<f64> {
    cfg.period
        .l_cp_samples
        .ok_or_else(|| CliError::Config("period.l_cp_samples (--lcp) is required".into()))
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    o.path("paths.out", a.out.as_deref());
    o.int("synth.n_cps", a.n_cps);
    o.int("synth.lead_in", a.lead_in);
    o.int("synth.repeats_per_plaintext", a.repeats);
    o.text("synth.key", a.key.as_deref());
    o.float("device.period_samples", a.period_samples);
    o.float("device.noise_sigma", a.noise_sigma);
    o.float("device.leak_gain", a.leak_gain);
    o.int("device.jitter_max", a.jitter_max);
    let cfg = o.load(&a.common)?;
    let out = out_path(&cfg, "trace.f32");
    let sc = cfg.capture_config("synth/capture")?;
    let (trace, truth) = generate(&sc)?;
    save_real_trace(&trace, &out)?;
    write_sidecar(&out, &trace.meta())?;
    write_json(&artifacts::truth_path(&out), &truth)?;
    println!(
        "wrote {} ({} samples, {} CPs, period {} samples)",
        out.display(),
        trace.len(),
        truth.cp_start_indices.len(),
        truth.true_period_samples
    );
    Ok(())
}

fn period(a: PeriodArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    o.path("paths.trace", a.trace.as_deref());
    o.int("period.min_period", a.min_period);
    o.int("period.max_period", a.max_period);
    o.float("period.interval_ns", a.interval_ns);
    o.int("period.steps", a.steps);
    o.int("period.segments", a.segments);
    o.path("paths.out", a.out.as_deref());
    let cfg = o.load(&a.common)?;
    let trace = load_trace(first_trace(&cfg)?)?;
    let dir = out_dir(&cfg)?;
    let (approx, refined) = with_jobs(cfg.jobs, || experiment::estimate_length(&cfg, &trace))??;
    experiment::write_period_outputs(&dir, &approx, &refined, trace.sample_rate_hz())?;
    let fs = trace.sample_rate_hz();
    println!(
        "approximate: {:.3} samples ({:.3} us)",
        approx.l_cp_samples,
        approx.l_cp_samples / fs * 1e6
    );
    println!(
        "refined:     {:.4} samples ({:.4} us)",
        refined.l_cp_samples,
        refined.l_cp_samples / fs * 1e6
    );
    if refined.is_ambiguous() {
        eprintln!("warning: {}", experiment::ambiguity_warning(&refined));
    }
    Ok(())
}

fn cut_rows(
    cfg: &ExperimentConfig,
    trace: &Trace,
    l_cp: f64,
) -> CliResult<vtrig_core::SegmentMatrix> {
    let n = match cfg.align.n_segments {
        Some(n) => n,
        None => experiment::sweep_segments(trace.len(), l_cp),
    };
    Ok(segment_trace(trace, l_cp, n, 0)?)
}

fn shifts_histogram(shifts: &[isize]) -> BTreeMap<isize, usize> {
    let mut h = BTreeMap::new();
    for &s in shifts {
        *h.entry(s).or_insert(0) += 1;
    }
    h
}

/// Single-plaintext label of a trace, from its ground truth if present.
fn trace_label(path: &Path) -> Option<([u8; 16], [u8; 16])> {
    let truth: GroundTruth = read_json(&artifacts::truth_path(path)).ok()?;
    let first = *truth.cp_plaintexts.first()?;
    truth
        .cp_plaintexts
        .iter()
        .all(|p| *p == first)
        .then_some((first, truth.key))
}

fn denoise(a: DenoiseArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    o.paths("paths.trace", &a.trace);
    a.align.add(&mut o);
    o.path("paths.out", a.out.as_deref());
    let cfg = o.load(&a.common)?;
    let l_cp = require_lcp(&cfg)?;
    if cfg.paths.trace.is_empty() {
        return Err(CliError::Config("paths.trace is required".into()));
    }
    for p in &cfg.paths.trace {
        require_file(Some(p), "paths.trace")?;
    }
    let out = out_path(&cfg, "denoised.f32");
    let params = cfg.align.params(l_cp.floor() as usize);
    let mut rows = Vec::new();
    let mut prov = Vec::new();
    for path in &cfg.paths.trace {
        let trace = load_trace(path)?;
        let matrix = cut_rows(&cfg, &trace, l_cp)?;
        let d = with_jobs(cfg.jobs, || denoise_rows(&matrix, &params))??;
        prov.push(json!({
            "trace": path,
            "n_averaged": d.segment.n_averaged,
            "rotation_phase": d.segment.rotation_phase,
            "shifts_histogram": shifts_histogram(&d.shifts),
        }));
        rows.push(d.segment.samples);
    }
    let provenance = json!({ "l_cp_samples": l_cp, "params": params, "rows": prov });
    artifacts::write_matrix(&out, rows.iter().map(Vec::as_slice), provenance)?;
    let labels: Option<Vec<_>> = cfg.paths.trace.iter().map(|p| trace_label(p)).collect();
    if let Some(labels) = labels {
        let key = labels[0].1;
        if labels.iter().all(|l| l.1 == key) {
            let pts: Vec<[u8; 16]> = labels.iter().map(|l| l.0).collect();
            artifacts::write_labels(&out.with_extension("labels.csv"), &pts, &key)?;
        }
    }
    println!(
        "wrote {} ({} rows of {} samples)",
        out.display(),
        rows.len(),
        rows[0].len()
    );
    Ok(())
}

fn template(a: TemplateArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    o.path("paths.trace", a.trace.as_deref());
    a.align.add(&mut o);
    o.int("pullout.crop_start", a.crop_start);
    o.int("pullout.crop_len", a.crop_len);
    o.path("paths.out", a.out.as_deref());
    let cfg = o.load(&a.common)?;
    let l_cp = require_lcp(&cfg)?;
    let path = first_trace(&cfg)?;
    let trace = load_trace(&path)?;
    let out = out_path(&cfg, "tpl.f32");
    let width = l_cp.floor() as usize;
    let params = cfg.align.params(width);
    let matrix = cut_rows(&cfg, &trace, l_cp)?;
    let d = with_jobs(cfg.jobs, || denoise_rows(&matrix, &params))??;
    let crop = match (cfg.pullout.crop_start, cfg.pullout.crop_len) {
        (None, None) => None,
        (s, l) => {
            let start = s.unwrap_or(0);
            Some(Crop {
                start,
                len: l.unwrap_or(width.saturating_sub(start)),
            })
        }
    };
    let tpl = template_from_segment(&d.segment, trace.source_id(), crop)?;
    let source = serde_json::to_value(&tpl.source).expect("source serialises");
    artifacts::write_matrix(&out, [tpl.samples()], source)?;
    println!("wrote {} ({} samples)", out.display(), tpl.len());
    Ok(())
}

fn read_template(path: &Path) -> CliResult<SegmentTemplate> {
    let (info, mut rows) = artifacts::read_matrix(path)?;
    if rows.len() != 1 {
        return Err(CliError::Data(format!(
            "{}: template must have one row",
            path.display()
        )));
    }
    let source: TemplateSource =
        serde_json::from_value(info.provenance).unwrap_or(TemplateSource {
            trace_id: path.display().to_string(),
            n_averaged: 1,
            crop_start: 0,
        });
    Ok(SegmentTemplate::new(rows.remove(0), source)?)
}

fn pullout(a: PulloutArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    o.path("paths.trace", a.trace.as_deref());
    o.path("paths.template", a.template.as_deref());
    o.float("pullout.threshold", a.threshold);
    o.int("pullout.min_spacing", a.min_spacing);
    o.text("pullout.method", a.method.as_deref());
    o.path("paths.out", a.out.as_deref());
    let cfg = o.load(&a.common)?;
    let trace = load_trace(first_trace(&cfg)?)?;
    let tpl = read_template(&require_file(
        cfg.paths.template.as_deref(),
        "paths.template",
    )?)?;
    let dir = out_dir(&cfg)?;
    let opts = PulloutOptions {
        threshold: cfg.pullout.threshold,
        min_spacing: cfg.pullout.min_spacing,
        method: cfg.pullout.method,
    };
    let p = with_jobs(cfg.jobs, || pullout_with(&trace, &tpl, &opts))??;
    let provenance = json!({
        "trace": trace.source_id(),
        "template": tpl.source,
        "origin_offsets": p.segments.origin_offsets(),
    });
    artifacts::write_matrix(&dir.join("segments.bin"), p.segments.rows(), provenance)?;
    artifacts::write_detections(&dir.join("detections.csv"), &p.detections)?;
    println!(
        "{} CPs found; wrote {}",
        p.detections.len(),
        dir.join("segments.bin").display()
    );
    Ok(())
}

/// Segments, their plaintexts and the key they were recorded under.
type Labelled = (Vec<vtrig_core::DenoisedSegment>, Vec<[u8; 16]>, [u8; 16]);

fn labelled(cfg: &ExperimentConfig) -> CliResult<Labelled> {
    let seg_path = require_file(cfg.paths.segments.as_deref(), "paths.segments")?;
    let lab_path = require_file(cfg.paths.labels.as_deref(), "paths.labels")?;
    let segments = artifacts::read_segments(&seg_path)?;
    let (plaintexts, key) = artifacts::read_labels(&lab_path)?;
    if plaintexts.len() != segments.len() {
        return Err(CliError::Data(format!(
            "{} segments but {} labels",
            segments.len(),
            plaintexts.len()
        )));
    }
    Ok((segments, plaintexts, key))
}

fn add_labelled(o: &mut Overrides, input: &LabelledSegments) {
    o.path("paths.segments", input.segments.as_deref());
    o.path("paths.labels", input.labels.as_deref());
}

fn profile(a: ProfileArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    add_labelled(&mut o, &a.input);
    o.int("attack.n_poi", a.n_poi);
    o.text("attack.variance_model", a.variance_model.as_deref());
    o.path("paths.out", a.out.as_deref());
    let cfg = o.load(&a.common)?;
    let (segments, plaintexts, key) = labelled(&cfg)?;
    let out = out_path(&cfg, "profile.json");
    let profile = with_jobs(cfg.jobs, || {
        build_profile_with(
            &segments,
            &plaintexts,
            &key,
            cfg.attack.n_poi,
            cfg.attack.variance_model,
        )
    })??;
    for (b, h) in profile.empty_classes() {
        eprintln!("warning: key byte {b} has no class-{h} segments; mean interpolated");
    }
    write_json(&out, &profile)?;
    println!("wrote {} from {} segments", out.display(), segments.len());
    Ok(())
}

fn attack(a: AttackArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    o.path("paths.profile", a.profile.as_deref());
    add_labelled(&mut o, &a.input);
    o.ints("attack.steps", &a.steps);
    o.int("attack.n_steps", a.n_steps);
    o.int("attack.repetitions", a.repetitions);
    o.path("paths.out", a.out.as_deref());
    let cfg = o.load(&a.common)?;
    let profile: Profile = read_json(&require_file(
        cfg.paths.profile.as_deref(),
        "paths.profile",
    )?)?;
    let (segments, plaintexts, key) = labelled(&cfg)?;
    let dir = out_dir(&cfg)?;
    let steps = cfg.attack.steps_for(segments.len());
    let seed = vtrig_core::rng::derive_seed(cfg.seed, "attack/curve", 0);
    let report = with_jobs(cfg.jobs, || {
        pge_curve(
            &profile,
            &segments,
            &plaintexts,
            &key,
            &steps,
            cfg.attack.repetitions,
            seed,
        )
    })??;
    artifacts::write_pge(&dir.join("pge.csv"), &report)?;
    artifacts::write_pge_grid(&dir.join("pge_grid.dat"), &report)?;
    write_json(&dir.join("attack.json"), &report)?;
    println!(
        "final mean PGE {:.2}, unresolved bytes {}/16, success {}",
        report.final_mean_pge(),
        report.unresolved_bytes(report.pge.len() - 1),
        if report.success() { "yes" } else { "no" }
    );
    Ok(())
}

fn run(a: RunArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    a.flags.add(&mut o);
    let cfg = o.load(&a.common)?;
    let dir = cfg.output_dir.clone();
    run_experiment(&cfg, "run")?;
    print!("{}", report::report(&dir)?);
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut o = Overrides::default();
    a.flags.add(&mut o);
    o.0.push((
        "branches.segmenters".into(),
        toml::Value::Array(vec![toml::Value::String("vt".into())]),
    ));
    o.floats("branches.length_offsets_percent", &a.offsets_percent);
    let cfg = o.load(&a.common)?;
    if !cfg.branches.length_offsets_percent.contains(&0.0) {
        return Err(CliError::Config("length offsets must include 0".into()));
    }
    let dir = cfg.output_dir.clone();
    run_experiment(&cfg, "sweep")?;
    print!("{}", report::report(&dir)?);
    Ok(())
}
