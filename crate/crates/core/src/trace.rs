//! Sample-buffer types and raw trace file I/O.
//!
//! Trace files are headerless little-endian IEEE-754 float32:
//! `.iq32` holds interleaved `(I, Q)` pairs, `.f32` holds real samples.
//! Acquisition metadata lives next to the data in `<tracefile>.meta.json`.
//! Samples are held as `f64` in memory whatever the file width.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Start index of the `k`-th cut for a fractional period.
///
/// Nearest integer to `k * period`, exact halves rounding down. Every
/// fractional-period cut in the crate (generator and segmenter alike) goes
/// through this function so that the two agree bit for bit.
pub fn cut_index(k: usize, period: f64) -> usize {
    let x = k as f64 * period;
    (x - 0.5).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sample_rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_freq_hz: Option<f64>,
    #[serde(default)]
    pub notes: String,
}

impl TraceMeta {
    pub fn new(sample_rate_hz: f64) -> Self {
        TraceMeta {
            sample_rate_hz,
            center_freq_hz: None,
            notes: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::config(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        Ok(())
    }
}

/// One continuous record of real-valued samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    source_id: String,
}

impl Trace {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: f64,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data {
                index: 0,
                reason: "trace has no samples".into(),
            });
        }
        if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data {
                index,
                reason: "non-finite sample".into(),
            });
        }
        TraceMeta::new(sample_rate_hz).validate()?;
        Ok(Trace {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        })
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

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn meta(&self) -> TraceMeta {
        TraceMeta::new(self.sample_rate_hz)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// `N` equal-width rows cut from one trace, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatrix {
    data: Vec<f64>,
    width: usize,
    origin_offsets: Vec<usize>,
}

impl SegmentMatrix {
    /// Copy `width` samples at each offset out of `source`.
    pub fn from_source(source: &[f64], origin_offsets: Vec<usize>, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::contract("segment width must be positive"));
        }
        if origin_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "origin offsets must be strictly increasing",
            ));
        }
        if let Some(&last) = origin_offsets.last() {
            if last + width > source.len() {
                return Err(Error::Bounds {
                    reason: format!(
                        "row at {last} of width {width} exceeds source length {}",
                        source.len()
                    ),
                    max_feasible: origin_offsets
                        .iter()
                        .take_while(|&&o| o + width <= source.len())
                        .count(),
                });
            }
        }
        let mut data = Vec::with_capacity(origin_offsets.len() * width);
        for &o in &origin_offsets {
            data.extend_from_slice(&source[o..o + width]);
        }
        Ok(SegmentMatrix {
            data,
            width,
            origin_offsets,
        })
    }

    /// Build from already-materialised rows (all of equal width).
    pub fn from_rows(rows: Vec<Vec<f64>>, origin_offsets: Vec<usize>) -> Result<Self> {
        if rows.len() != origin_offsets.len() {
            return Err(Error::contract("one origin offset per row required"));
        }
        if origin_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "origin offsets must be strictly increasing",
            ));
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::contract("all rows must have identical width"));
        }
        Ok(SegmentMatrix {
            data: rows.into_iter().flatten().collect(),
            width,
            origin_offsets,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.origin_offsets.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero width; an empty matrix has no rows anyway
        self.data.chunks_exact(self.width.max(1))
    }

    pub fn origin_offsets(&self) -> &[usize] {
        &self.origin_offsets
    }

    /// Row-major sample storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// One averaged, rotation-normalised segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoisedSegment {
    pub samples: Vec<f64>,
    pub n_averaged: usize,
    pub rotation_phase: usize,
}

impl DenoisedSegment {
    pub fn new(samples: Vec<f64>, n_averaged: usize, rotation_phase: usize) -> Result<Self> {
        if n_averaged == 0 {
            return Err(Error::contract("n_averaged must be at least 1"));
        }
        if samples.is_empty() || rotation_phase >= samples.len() {
            return Err(Error::contract(format!(
                "rotation phase {rotation_phase} outside segment of length {}",
                samples.len()
            )));
        }
        Ok(DenoisedSegment {
            samples,
            n_averaged,
            rotation_phase,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn decode_f32(chunk: &[u8]) -> f32 {
    f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]])
}

/// Load interleaved float32 `(I, Q)` pairs and collapse them to magnitudes.
pub fn load_iq_trace(path: impl AsRef<Path>, meta: &TraceMeta) -> Result<Trace> {
    let path = path.as_ref();
    meta.validate()?;
    let bytes = read_bytes(path)?;
    if bytes.is_empty() || bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{}: IQ file length {} is not a positive multiple of 8 bytes",
            path.display(),
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(bytes.len() / 8);
    for (index, pair) in bytes.chunks_exact(8).enumerate() {
        let i = decode_f32(&pair[..4]);
        let q = decode_f32(&pair[4..]);
        if !(i.is_finite() && q.is_finite()) {
            return Err(Error::Data {
                index,
                reason: "non-finite IQ value".into(),
            });
        }
        samples.push((i as f64).hypot(q as f64));
    }
    Trace::new(samples, meta.sample_rate_hz, path.display().to_string())
}

/// Load float32 real samples verbatim.
pub fn load_real_trace(path: impl AsRef<Path>, meta: &TraceMeta) -> Result<Trace> {
    let path = path.as_ref();
    meta.validate()?;
    let bytes = read_bytes(path)?;
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: real file length {} is not a positive multiple of 4 bytes",
            path.display(),
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| decode_f32(c) as f64)
        .collect();
    Trace::new(samples, meta.sample_rate_hz, path.display().to_string())
}

/// Write samples as float32. Values that are not exactly representable in
/// float32 are rounded to nearest; anything loaded from a float32 file
/// round-trips bit-exactly.
pub fn save_real_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    write_f32(path.as_ref(), trace.samples())
}

pub(crate) fn write_f32(path: &Path, samples: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for &x in samples {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Path of the metadata sidecar for a trace file.
pub fn sidecar_path(trace_path: &Path) -> PathBuf {
    let mut name = trace_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_sidecar(trace_path: &Path, meta: &TraceMeta) -> Result<()> {
    let path = sidecar_path(trace_path);
    let json = serde_json::to_string_pretty(meta).expect("TraceMeta serialises");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_sidecar(trace_path: &Path) -> Result<TraceMeta> {
    let path = sidecar_path(trace_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: TraceMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    meta.validate()?;
    Ok(meta)
}

/// Load a trace using its sidecar, picking the decoder from the extension
/// (`.iq32` for IQ pairs, anything else as float32 reals).
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let meta = read_sidecar(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("iq32") => load_iq_trace(path, &meta),
        _ => load_real_trace(path, &meta),
    }
}

/// Save a real trace and its sidecar together.
pub fn save_trace_with_sidecar(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_real_trace(trace, path)?;
    write_sidecar(path, &trace.meta())
}
