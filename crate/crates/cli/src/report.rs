//! Human-readable summaries of run directories.

use std::fmt::Write as _;
use std::path::Path;

use crate::artifacts::read_json;
use crate::error::{CliError, CliResult};
use crate::experiment::{Manifest, RunStatus, RunSummary, MANIFEST, SUMMARY};

pub fn load_manifest(run_dir: &Path) -> CliResult<Manifest> {
    let path = run_dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "no {MANIFEST} in {}",
            run_dir.display()
        )));
    }
    read_json(&path)
}

fn load_summary(run_dir: &Path) -> CliResult<Option<RunSummary>> {
    let path = run_dir.join(SUMMARY);
    if path.is_file() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn report(run_dir: &Path) -> CliResult<String> {
    let m = load_manifest(run_dir)?;
    let summary = load_summary(run_dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "run      {}", run_dir.display());
    let status = match m.status {
        RunStatus::Ok => "ok".to_string(),
        RunStatus::Running => format!(
            "incomplete (last stage started: {})",
            m.failed_stage.as_deref().unwrap_or("none")
        ),
        RunStatus::Failed => format!(
            "FAILED at stage '{}' (exit {}): {}",
            m.failed_stage.as_deref().unwrap_or("unknown"),
            m.exit_code,
            m.error.as_deref().unwrap_or("")
        ),
    };
    let _ = writeln!(out, "status   {status}");
    let _ = writeln!(out, "command  {}", m.command);
    let _ = writeln!(out, "config   {}  seed {}", m.config_hash, m.seed);
    let _ = writeln!(
        out,
        "version  vtrig {} (core {})",
        m.version, m.core_version
    );

    let _ = writeln!(out, "\n{:<28} {:>10}", "stage", "seconds");
    for s in &m.stages {
        let mark = if s.ok { "" } else { "  FAILED" };
        let _ = writeln!(out, "{:<28} {:>10.3}{mark}", s.name, s.seconds);
    }
    let total: f64 = m.stages.iter().map(|s| s.seconds).sum();
    let _ = writeln!(out, "{:<28} {:>10.3}", "total", total);

    if let Some(sum) = &summary {
        if let Some(p) = &sum.period {
            let _ = writeln!(
                out,
                "\nCP length: approximate {:.3}, sweep centre {}, refined {:.4}, device {:.4} samples",
                p.approx_samples, p.sweep_centre_samples, p.refined_samples, p.truth_samples
            );
        } else {
            let _ = writeln!(
                out,
                "\nCP length: {:.4} samples (configured)",
                sum.l_cp_samples
            );
        }
        let _ = writeln!(
            out,
            "\n{:<22} {:>11} {:>10} {:>11} {:>8} {:>14}",
            "branch", "l_cp", "final PGE", "unresolved", "success", "first success"
        );
        for b in &sum.branches {
            let _ = writeln!(
                out,
                "{:<22} {:>11.4} {:>10.2} {:>8}/16 {:>8} {:>14}",
                b.name,
                b.l_cp_samples,
                b.final_mean_pge,
                b.final_unresolved_bytes,
                if b.success { "yes" } else { "no" },
                b.first_success.map_or("-".to_string(), |s| s.to_string())
            );
        }
    }

    let _ = writeln!(out, "\nwarnings");
    if m.warnings.is_empty() {
        let _ = writeln!(out, "  none");
    }
    for w in &m.warnings {
        let _ = writeln!(out, "  - {w}");
    }
    Ok(out)
}

/// Per-stage timing table of run `b` against run `a`.
pub fn compare(a_dir: &Path, b_dir: &Path) -> CliResult<String> {
    let a = load_manifest(a_dir)?;
    let b = load_manifest(b_dir)?;
    let mut names: Vec<&str> = a.stages.iter().map(|s| s.name.as_str()).collect();
    for s in &b.stages {
        if !names.contains(&s.name.as_str()) {
            names.push(&s.name);
        }
    }
    let secs = |m: &Manifest, n: &str| m.stages.iter().find(|s| s.name == n).map(|s| s.seconds);
    let mut out = String::new();
    let _ = writeln!(out, "A = {}\nB = {}\n", a_dir.display(), b_dir.display());
    let _ = writeln!(
        out,
        "{:<28} {:>10} {:>10} {:>8}",
        "stage", "A (s)", "B (s)", "B/A"
    );
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for n in names {
        let (x, y) = (secs(&a, n), secs(&b, n));
        let ratio = match (x, y) {
            (Some(x), Some(y)) if x > 0.0 => format!("{:.2}", y / x),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "{:<28} {:>10} {:>10} {:>8}",
            n,
            cell(x),
            cell(y),
            ratio
        );
    }
    let ta: f64 = a.stages.iter().map(|s| s.seconds).sum();
    let tb: f64 = b.stages.iter().map(|s| s.seconds).sum();
    let ratio = if ta > 0.0 {
        format!("{:.2}", tb / ta)
    } else {
        "-".into()
    };
    let _ = writeln!(
        out,
        "{:<28} {:>10.3} {:>10.3} {:>8}",
        "total", ta, tb, ratio
    );
    Ok(out)
}
