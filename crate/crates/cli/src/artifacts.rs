//! Artifact files: CSV tables, float32 matrices with JSON sidecars, and
//! the gnuplot grid.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vtrig_core::period::DistancePoint;
use vtrig_core::synth::hex16;
use vtrig_core::{AttackReport, DenoisedSegment, Detection};

use crate::error::{CliError, CliResult};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serialises");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `trace.f32` -> `trace.truth.json`.
pub fn truth_path(trace_path: &Path) -> PathBuf {
    trace_path.with_extension("truth.json")
}

/// `x.bin` -> `x.bin.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixInfo {
    pub rows: usize,
    pub width: usize,
    /// Producer-specific provenance.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// Write rows as a row-major little-endian float32 matrix plus a sidecar.
pub fn write_matrix<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a [f64]>,
    provenance: serde_json::Value,
) -> CliResult<MatrixInfo> {
    let mut bytes = Vec::new();
    let mut n = 0;
    let mut width = None;
    for row in rows {
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(CliError::Data("matrix rows differ in length".into()));
        }
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        n += 1;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    let info = MatrixInfo {
        rows: n,
        width: width.unwrap_or(0),
        provenance,
    };
    write_json(&sidecar(path), &info)?;
    Ok(info)
}

pub fn read_matrix(path: &Path) -> CliResult<(MatrixInfo, Vec<Vec<f64>>)> {
    let info: MatrixInfo = read_json(&sidecar(path))?;
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if info.width == 0 || bytes.len() != info.rows * info.width * 4 {
        return Err(CliError::Data(format!(
            "{}: {} bytes do not hold {} x {} float32 values",
            path.display(),
            bytes.len(),
            info.rows,
            info.width
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CliError::Data(format!(
            "{}: non-finite value at {i}",
            path.display()
        )));
    }
    let rows = values.chunks(info.width).map(<[f64]>::to_vec).collect();
    Ok((info, rows))
}

/// Matrix rows as denoised segments (already rotated and averaged).
pub fn read_segments(path: &Path) -> CliResult<Vec<DenoisedSegment>> {
    let (_, rows) = read_matrix(path)?;
    rows.into_iter()
        .map(|r| DenoisedSegment::new(r, 1, 0).map_err(CliError::from))
        .collect()
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn put<I, T>(w: &mut csv::Writer<fs::File>, path: &Path, record: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(record).map_err(|e| CliError::io(path, e))
}

pub fn write_distance_curve(
    path: &Path,
    curve: &[DistancePoint],
    sample_rate_hz: f64,
) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    put(&mut w, path, ["delta_ns", "delta_samples", "l1"])?;
    for p in curve {
        let ns = p.delta_samples / sample_rate_hz * 1e9;
        put(
            &mut w,
            path,
            [
                ns.to_string(),
                p.delta_samples.to_string(),
                p.l1.to_string(),
            ],
        )?;
    }
    finish(w, path)
}

/// `step, byte, mean_pge`, where `step` is the number of attack traces used.
pub fn write_pge(path: &Path, report: &AttackReport) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    put(&mut w, path, ["step", "byte", "mean_pge"])?;
    for (row, &used) in report.pge.iter().zip(&report.traces_used) {
        for (b, v) in row.iter().enumerate() {
            put(
                &mut w,
                path,
                [used.to_string(), b.to_string(), v.to_string()],
            )?;
        }
    }
    finish(w, path)
}

/// Gnuplot `matrix nonuniform` layout: first line holds the column count
/// and the trace counts, then one line per key byte.
/// Plot with `plot 'pge_grid.dat' matrix nonuniform with image`.
pub fn write_pge_grid(path: &Path, report: &AttackReport) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&report.traces_used.len().to_string());
    for used in &report.traces_used {
        out.push_str(&format!(" {used}"));
    }
    out.push('\n');
    for b in 0..16 {
        out.push_str(&b.to_string());
        for row in &report.pge {
            out.push_str(&format!(" {}", row[b]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    put(&mut w, path, ["offset", "score"])?;
    for d in detections {
        put(&mut w, path, [d.offset.to_string(), d.score.to_string()])?;
    }
    finish(w, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelRow {
    plaintext: String,
    key: String,
}

/// Per-row plaintexts and the common key, as hex.
pub fn write_labels(path: &Path, plaintexts: &[[u8; 16]], key: &[u8; 16]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for p in plaintexts {
        w.serialize(LabelRow {
            plaintext: hex16::encode(p),
            key: hex16::encode(key),
        })
        .map_err(|e| CliError::io(path, e))?;
    }
    finish(w, path)
}

pub fn read_labels(path: &Path) -> CliResult<(Vec<[u8; 16]>, [u8; 16])> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut plaintexts = Vec::new();
    let mut key = None;
    for (i, row) in r.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| CliError::io(path, e))?;
        let bad = |e: String| CliError::Data(format!("{} row {i}: {e}", path.display()));
        plaintexts.push(hex16::decode(&row.plaintext).map_err(bad)?);
        let k = hex16::decode(&row.key).map_err(bad)?;
        if *key.get_or_insert(k) != k {
            return Err(bad("rows disagree on the key".into()));
        }
    }
    let key = key.ok_or_else(|| CliError::Data(format!("{}: no label rows", path.display())))?;
    Ok((plaintexts, key))
}

/// Append one line to a text file, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> CliResult<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| CliError::io(path, e))
}
