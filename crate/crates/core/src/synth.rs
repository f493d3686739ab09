//! Ground-truth synthetic trace generator.
//!
//! A trace is a continuous series of CPs. Each CP starts with `idle_len`
//! samples at `idle_level`, followed by ten copies of `round_profile` on top
//! of the idle level (the "round bumps"); any samples left before the next CP
//! carry a fixed deterministic busy pattern. Sixteen points of interest in
//! the first round are replaced by `leak_gain * HW(SBox(p_i ^ k_i))`.
//! Gaussian noise is added everywhere.
//!
//! CP `k` starts at `lead_in + cut_index(k, period) + jitter_0 + ... + jitter_{k-1}`,
//! where each `jitter_i` is an extra run of idle samples appended after CP `i`,
//! uniform in `[0, jitter_max]`. `lead_in` samples of a preceding, partially
//! captured CP open the trace (a random capture offset).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, splitmix64, SimRng};
use crate::trace::{cut_index, Trace};

pub const N_ROUNDS: usize = 10;

/// Length of the default per-round waveform: ten rounds plus the default
/// 230-sample idle fill a 4350-sample CP.
pub const DEFAULT_ROUND_LEN: usize = 412;

/// AES forward S-box.
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

/// Hamming weight of `SBox(plaintext_byte ^ key_byte)`.
pub fn sbox_hw_oracle(plaintext_byte: u8, key_byte: u8) -> u8 {
    SBOX[(plaintext_byte ^ key_byte) as usize].count_ones() as u8
}

/// Deterministic value in `[-1, 1)` used for waveform texture.
fn texture(tag: u64, i: usize) -> f64 {
    let h = splitmix64(tag ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Default per-round waveform: a half-sine envelope with sample-level texture,
/// `1.5 + 2.5 sin(pi (i + 0.5) / len) + 0.5 texture(i)`.
pub fn default_round_profile(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let env = (std::f64::consts::PI * (i as f64 + 0.5) / len as f64).sin();
            1.5 + 2.5 * env + 0.5 * texture(0x0A35, i)
        })
        .collect()
}

pub mod hex16 {
    //! `[u8; 16]` as 32 hex digits.
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn encode(bytes: &[u8; 16]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn decode(s: &str) -> Result<[u8; 16], String> {
        let s = s.trim();
        if s.len() != 32 || !s.is_ascii() {
            return Err(format!("expected 32 hex digits, got {s:?}"));
        }
        let mut out = [0u8; 16];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|e| format!("bad hex in {s:?}: {e}"))?;
        }
        Ok(out)
    }

    pub fn serialize<S: Serializer>(bytes: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        decode(&String::deserialize(d)?).map_err(D::Error::custom)
    }

    pub mod vec {
        use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[[u8; 16]], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(super::encode))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 16]>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| super::decode(s).map_err(D::Error::custom))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Ground-truth CP length in (fractional) samples.
    pub period_samples: f64,
    pub idle_len: usize,
    pub n_cps: usize,
    pub noise_sigma: f64,
    /// Extra idle samples after each CP, uniform in `[0, jitter_max]`.
    pub jitter_max: usize,
    #[serde(with = "hex16")]
    pub key: [u8; 16],
    #[serde(with = "hex16::vec")]
    pub plaintexts: Vec<[u8; 16]>,
    /// CPs per plaintext; CP `k` uses `plaintexts[(k / repeats) % len]`.
    pub repeats_per_plaintext: usize,
    pub leak_gain: f64,
    pub round_profile: Vec<f64>,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub idle_level: f64,
    /// Samples of a partially captured CP before the first full one.
    pub lead_in: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            period_samples: 4350.09,
            idle_len: 230,
            n_cps: 575,
            noise_sigma: 0.5,
            jitter_max: 0,
            key: [0u8; 16],
            plaintexts: vec![[0u8; 16]],
            repeats_per_plaintext: 500,
            leak_gain: 0.1,
            round_profile: default_round_profile(DEFAULT_ROUND_LEN),
            seed: 0,
            sample_rate_hz: 5e6,
            idle_level: 1.0,
            lead_in: 0,
        }
    }
}

impl SynthConfig {
    pub fn round_len(&self) -> usize {
        self.round_profile.len()
    }

    pub fn active_len(&self) -> usize {
        N_ROUNDS * self.round_len()
    }

    /// Offsets of the sixteen leaking samples, relative to the CP start.
    pub fn poi_offsets(&self) -> [usize; 16] {
        let r = self.round_len();
        let stride = (r / 20).max(1);
        let start = r / 10;
        std::array::from_fn(|b| self.idle_len + start + b * stride)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.period_samples.is_finite() && self.period_samples > 0.0) {
            return bad(format!(
                "period_samples must be positive, got {}",
                self.period_samples
            ));
        }
        if self.idle_len == 0 {
            return bad("idle_len must be positive".into());
        }
        if self.n_cps == 0 || self.repeats_per_plaintext == 0 {
            return bad("n_cps and repeats_per_plaintext must be positive".into());
        }
        if self.round_len() < 32 {
            return bad(format!(
                "round_profile needs at least 32 samples, got {}",
                self.round_len()
            ));
        }
        if self.round_profile.iter().any(|v| !v.is_finite()) {
            return bad("round_profile contains non-finite values".into());
        }
        if self.period_samples < (self.idle_len + self.active_len()) as f64 {
            return bad(format!(
                "period {} cannot hold idle ({}) plus ten rounds ({})",
                self.period_samples,
                self.idle_len,
                self.active_len()
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(self.leak_gain.is_finite() && self.leak_gain > 0.0) {
            return bad("leak_gain must be positive".into());
        }
        if self.plaintexts.is_empty() {
            return bad("at least one plaintext is required".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be positive".into());
        }
        if self.lead_in >= self.period_samples.floor() as usize {
            return bad("lead_in must be shorter than one period".into());
        }
        Ok(())
    }

    /// Noise-free value of a CP at local time `t` (jitter idle excluded).
    fn base_value(&self, t: usize, pois: &[usize; 16], leaks: &[f64; 16]) -> f64 {
        if t < self.idle_len {
            return self.idle_level;
        }
        if let Some(b) = pois.iter().position(|&p| p == t) {
            return leaks[b];
        }
        let tau = t - self.idle_len;
        let r = self.round_len();
        if tau < N_ROUNDS * r {
            self.idle_level + self.round_profile[tau % r]
        } else {
            self.idle_level + 1.5 + texture(0xB057, tau)
        }
    }

    /// Clean (noise-free, jitter-free) waveform of one CP for a plaintext.
    pub fn clean_cp(&self, plaintext: &[u8; 16], len: usize) -> Vec<f64> {
        let pois = self.poi_offsets();
        let leaks = self.leak_values(plaintext);
        (0..len)
            .map(|t| self.base_value(t, &pois, &leaks))
            .collect()
    }

    fn leak_values(&self, plaintext: &[u8; 16]) -> [f64; 16] {
        std::array::from_fn(|b| self.leak_gain * sbox_hw_oracle(plaintext[b], self.key[b]) as f64)
    }

    fn plaintext_for(&self, k: usize) -> &[u8; 16] {
        &self.plaintexts[(k / self.repeats_per_plaintext) % self.plaintexts.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cp_start_indices: Vec<usize>,
    pub true_period_samples: f64,
    #[serde(with = "hex16")]
    pub key: [u8; 16],
    #[serde(with = "hex16::vec")]
    pub cp_plaintexts: Vec<[u8; 16]>,
    /// Leaking-sample offsets relative to each CP start.
    pub poi_offsets: Vec<usize>,
    pub idle_len: usize,
    pub lead_in: usize,
}

/// Generate one synthetic trace and its manifest.
pub fn generate(config: &SynthConfig) -> Result<(Trace, GroundTruth)> {
    config.validate()?;
    let period = config.period_samples;
    let n = config.n_cps;

    let mut jitter_rng = SimRng::new(derive_seed(config.seed, "synth/jitter", 0));
    let jitters: Vec<usize> = (0..n)
        .map(|_| {
            if config.jitter_max == 0 {
                0
            } else {
                jitter_rng.below(config.jitter_max + 1)
            }
        })
        .collect();

    let mut starts = Vec::with_capacity(n + 1);
    let mut extra = 0;
    for (k, &j) in jitters.iter().enumerate() {
        starts.push(config.lead_in + cut_index(k, period) + extra);
        extra += j;
    }
    starts.push(config.lead_in + cut_index(n, period) + extra);
    let total = starts[n];

    let pois = config.poi_offsets();
    let mut samples = Vec::with_capacity(total);

    // partially captured CP before the first full one
    if config.lead_in > 0 {
        let prev_len = cut_index(1, period);
        let leaks = config.leak_values(config.plaintext_for(0));
        samples.extend(
            (prev_len - config.lead_in..prev_len).map(|t| config.base_value(t, &pois, &leaks)),
        );
    }
    for (k, &j) in jitters.iter().enumerate() {
        let leaks = config.leak_values(config.plaintext_for(k));
        let cp_len = cut_index(k + 1, period) - cut_index(k, period);
        samples.extend((0..cp_len).map(|t| config.base_value(t, &pois, &leaks)));
        samples.extend(std::iter::repeat_n(config.idle_level, j));
    }
    debug_assert_eq!(samples.len(), total);

    if config.noise_sigma > 0.0 {
        let mut rng = SimRng::new(derive_seed(config.seed, "synth/noise", 0));
        for s in samples.iter_mut() {
            *s += rng.normal(config.noise_sigma);
        }
    }

    let truth = GroundTruth {
        cp_start_indices: starts[..n].to_vec(),
        true_period_samples: period,
        key: config.key,
        cp_plaintexts: (0..n).map(|k| *config.plaintext_for(k)).collect(),
        poi_offsets: pois.to_vec(),
        idle_len: config.idle_len,
        lead_in: config.lead_in,
    };
    let trace = Trace::new(
        samples,
        config.sample_rate_hz,
        format!("synth:{}", config.seed),
    )?;
    Ok((trace, truth))
}
