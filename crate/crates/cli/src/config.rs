//! Experiment configuration: a TOML document whose sections mirror the
//! pipeline stages. Command-line flags are applied on top of the file as
//! dotted-key overrides (`device.noise_sigma = 1.0`), so every flag has a
//! file equivalent and flags always win.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vtrig_core::align::CorrelationMode;
use vtrig_core::attack::VarianceModel;
use vtrig_core::pullout::ScoreMethod;
use vtrig_core::rng::{derive_seed, SimRng};
use vtrig_core::synth::{default_round_profile, DEFAULT_ROUND_LEN};
use vtrig_core::{AlignmentParams, SynthConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stochastic stage derives its own seed from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub device: DeviceConfig,
    pub synth: SynthSection,
    pub period: PeriodConfig,
    pub align: AlignConfig,
    pub pullout: PulloutConfig,
    pub campaign: CampaignConfig,
    pub attack: AttackConfig,
    pub branches: BranchConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            jobs: 0,
            device: DeviceConfig::default(),
            synth: SynthSection::default(),
            period: PeriodConfig::default(),
            align: AlignConfig::default(),
            pullout: PulloutConfig::default(),
            campaign: CampaignConfig::default(),
            attack: AttackConfig::default(),
            branches: BranchConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Simulated device and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub period_samples: f64,
    pub idle_len: usize,
    pub noise_sigma: f64,
    pub leak_gain: f64,
    pub sample_rate_hz: f64,
    pub idle_level: f64,
    /// Extra idle samples after each CP, uniform in `[0, jitter_max]`.
    pub jitter_max: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        DeviceConfig {
            period_samples: s.period_samples,
            idle_len: s.idle_len,
            noise_sigma: s.noise_sigma,
            leak_gain: s.leak_gain,
            sample_rate_hz: s.sample_rate_hz,
            idle_level: s.idle_level,
            jitter_max: s.jitter_max,
        }
    }
}

/// A single long capture, as written by `vtrig synth` and used by the
/// period stage of `vtrig run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_cps: usize,
    pub lead_in: usize,
    /// 32 hex digits; drawn from the seed when absent.
    pub key: Option<String>,
    /// CPs per plaintext; plaintexts are drawn from the seed.
    pub repeats_per_plaintext: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_cps: 575,
            lead_in: 0,
            key: None,
            repeats_per_plaintext: 575,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodConfig {
    /// Known CP length; when set the period stage is skipped.
    pub l_cp_samples: Option<f64>,
    /// Noise of the length-finding capture; the device noise when absent.
    pub noise_sigma: Option<f64>,
    pub min_period: usize,
    pub max_period: usize,
    pub interval_ns: f64,
    pub steps: usize,
    /// Segments per sweep candidate; as many as fit when absent.
    pub segments: Option<usize>,
}

impl Default for PeriodConfig {
    fn default() -> Self {
        PeriodConfig {
            l_cp_samples: None,
            noise_sigma: None,
            min_period: 2000,
            max_period: 8000,
            interval_ns: 1000.0,
            steps: 1000,
            segments: None,
        }
    }
}

impl PeriodConfig {
    pub fn interval_samples(&self, sample_rate_hz: f64) -> f64 {
        self.interval_ns * 1e-9 * sample_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Lag bound; 5% of the segment width when absent.
    pub max_lag: Option<usize>,
    pub idle_window: usize,
    pub correlation_mode: CorrelationMode,
    /// Segments cut by `denoise` and `template`; as many as fit when absent.
    pub n_segments: Option<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            max_lag: None,
            idle_window: 230,
            correlation_mode: CorrelationMode::Plain,
            n_segments: None,
        }
    }
}

impl AlignConfig {
    pub fn params(&self, width: usize) -> AlignmentParams {
        let mut p = AlignmentParams::for_width(width, self.idle_window);
        if let Some(lag) = self.max_lag {
            p.max_lag = lag;
        }
        p.correlation_mode = self.correlation_mode;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulloutConfig {
    pub threshold: f64,
    /// Minimum distance between detections; 0.8 x template length when absent.
    pub min_spacing: Option<usize>,
    pub method: ScoreMethod,
    /// Fine-align detected rows before averaging them.
    pub realign: bool,
    /// CPs in the jitter-free capture the template is learned from.
    pub template_cps: usize,
    pub crop_start: Option<usize>,
    pub crop_len: Option<usize>,
}

impl Default for PulloutConfig {
    fn default() -> Self {
        PulloutConfig {
            threshold: vtrig_core::pullout::DEFAULT_THRESHOLD,
            min_spacing: None,
            method: ScoreMethod::Auto,
            realign: false,
            template_cps: 300,
            crop_start: None,
            crop_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// CPs captured per trace, all on the trace's plaintext.
    pub repeats_per_trace: usize,
    pub n_profiling: usize,
    pub n_attack: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            repeats_per_trace: 40,
            n_profiling: 1000,
            n_attack: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub n_poi: usize,
    /// Explicit trace counts; `n_steps` evenly spread ones when absent.
    pub steps: Option<Vec<usize>>,
    pub n_steps: usize,
    pub repetitions: usize,
    pub variance_model: VarianceModel,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            n_poi: 1,
            steps: None,
            n_steps: 20,
            repetitions: 30,
            variance_model: VarianceModel::Pooled,
        }
    }
}

impl AttackConfig {
    pub fn steps_for(&self, n_traces: usize) -> Vec<usize> {
        match &self.steps {
            Some(s) => s.clone(),
            None => vtrig_core::attack::default_steps(n_traces, self.n_steps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    Vt,
    Pullout,
}

impl SegmenterKind {
    pub fn label(self) -> &'static str {
        match self {
            SegmenterKind::Vt => "vt",
            SegmenterKind::Pullout => "pullout",
        }
    }
}

/// Attack branches: every segmenter at every jitter level, and VT
/// additionally at every forced length offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchConfig {
    pub segmenters: Vec<SegmenterKind>,
    pub jitter_max: Vec<usize>,
    /// Offsets added to the CP length, in percent of it.
    pub length_offsets_percent: Vec<f64>,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            segmenters: vec![SegmenterKind::Vt],
            jitter_max: vec![0],
            length_offsets_percent: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub name: String,
    pub segmenter: SegmenterKind,
    pub jitter_max: usize,
    pub offset_percent: f64,
}

impl BranchConfig {
    /// Drop repeated offsets (first kept), returning one warning per duplicate.
    pub fn dedup_offsets(&mut self) -> Vec<String> {
        let (kept, warnings) = vtrig_core::pipeline::dedup_offsets(&self.length_offsets_percent);
        self.length_offsets_percent = kept;
        warnings
    }

    pub fn expand(&self) -> Vec<Branch> {
        let tag_offsets = self.length_offsets_percent.iter().any(|&o| o != 0.0);
        let mut out = Vec::new();
        for &j in &self.jitter_max {
            for &seg in &self.segmenters {
                let offsets: &[f64] = match seg {
                    SegmenterKind::Vt => &self.length_offsets_percent,
                    SegmenterKind::Pullout => &[0.0],
                };
                for &o in offsets {
                    let mut name = format!("{}_j{j}", seg.label());
                    if tag_offsets && seg == SegmenterKind::Vt {
                        name.push_str(&format!("_o{o}"));
                    }
                    out.push(Branch {
                        name,
                        segmenter: seg,
                        jitter_max: j,
                        offset_percent: o,
                    });
                }
            }
        }
        out
    }
}

/// File inputs and outputs of the single-stage subcommands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub trace: Vec<PathBuf>,
    pub template: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub segments: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<PathBuf>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PathBuf),
        Many(Vec<PathBuf>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

impl ExperimentConfig {
    /// Read a TOML (or, by `.json` extension, JSON) config, apply overrides
    /// in order, then validate.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut table, key, value.clone())?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.synth_config(Vec::new(), 0, 0).validate()?;
        if let Some(l) = self.period.l_cp_samples {
            if !(l.is_finite() && l >= 2.0) {
                return bad("period.l_cp_samples must be at least 2");
            }
        }
        if let Some(s) = self.period.noise_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return bad("period.noise_sigma must be non-negative");
            }
        }
        if !(self.period.interval_ns.is_finite() && self.period.interval_ns > 0.0) {
            return bad("period.interval_ns must be positive");
        }
        if !(0.0..=1.0).contains(&self.pullout.threshold) {
            return bad("pullout.threshold must lie in [0, 1]");
        }
        if self.campaign.repeats_per_trace == 0 {
            return bad("campaign.repeats_per_trace must be positive");
        }
        if self.attack.n_poi == 0 || self.attack.repetitions == 0 {
            return bad("attack.n_poi and attack.repetitions must be positive");
        }
        if self.branches.segmenters.is_empty() || self.branches.jitter_max.is_empty() {
            return bad("branches.segmenters and branches.jitter_max must not be empty");
        }
        if self.branches.length_offsets_percent.is_empty()
            || self
                .branches
                .length_offsets_percent
                .iter()
                .any(|o| !o.is_finite())
        {
            return bad("branches.length_offsets_percent must be finite and non-empty");
        }
        let dup = |v: &[usize]| (1..v.len()).any(|i| v[..i].contains(&v[i]));
        let kinds: Vec<usize> = self
            .branches
            .segmenters
            .iter()
            .map(|&k| k as usize)
            .collect();
        if dup(&kinds) || dup(&self.branches.jitter_max) {
            return bad("branches.segmenters and branches.jitter_max must not repeat");
        }
        Ok(())
    }

    /// Device model as a generator config. Key, plaintexts, seed and
    /// lead-in are filled in by the caller.
    pub fn synth_config(
        &self,
        plaintexts: Vec<[u8; 16]>,
        repeats: usize,
        seed: u64,
    ) -> SynthConfig {
        let d = &self.device;
        SynthConfig {
            period_samples: d.period_samples,
            idle_len: d.idle_len,
            n_cps: self.synth.n_cps,
            noise_sigma: d.noise_sigma,
            jitter_max: d.jitter_max,
            key: [0u8; 16],
            plaintexts: if plaintexts.is_empty() {
                vec![[0u8; 16]]
            } else {
                plaintexts
            },
            repeats_per_plaintext: repeats.max(1),
            leak_gain: d.leak_gain,
            round_profile: default_round_profile(DEFAULT_ROUND_LEN),
            seed,
            sample_rate_hz: d.sample_rate_hz,
            idle_level: d.idle_level,
            lead_in: self.synth.lead_in,
        }
    }

    /// Generator config of the single long capture described by `[synth]`,
    /// seeded from `derive_seed(seed, label, 0)`.
    pub fn capture_config(&self, label: &str) -> CliResult<SynthConfig> {
        let seed = derive_seed(self.seed, label, 0);
        let mut rng = SimRng::new(derive_seed(seed, "plaintexts", 0));
        let repeats = self.synth.repeats_per_plaintext.max(1);
        let groups = self.synth.n_cps.div_ceil(repeats).max(1);
        let plaintexts = (0..groups).map(|_| rng.bytes16()).collect();
        let mut cfg = self.synth_config(plaintexts, repeats, seed);
        cfg.key = match &self.synth.key {
            Some(hex) => vtrig_core::synth::hex16::decode(hex).map_err(CliError::Config)?,
            None => SimRng::new(derive_seed(seed, "key", 0)).bytes16(),
        };
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that cannot
    /// change results (output location, thread count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.jobs = 0;
        c.paths.out = None;
        let json = serde_json::to_vec(&c).expect("config serialises");
        let digest = Sha256::digest(&json);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

fn read_table(path: &Path) -> CliResult<toml::Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
    let parsed = if is_json {
        serde_json::from_str::<toml::Table>(&text).map_err(|e| e.to_string())
    } else {
        text.parse::<toml::Table>().map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Set `a.b.c = value`, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parse a `key=value` override. The value is read as a TOML value, falling
/// back to a bare string.
pub fn parse_override(s: &str) -> CliResult<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}
