//! Writing result files.
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! crashed run never leaves a half-written artifact behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::{ExperimentOutcome, RunRecord};

pub const LEDGER_HEADER: &str =
    "experiment,method,seed,alpha,beta,accuracy,diagonal_mass,p_t,p_s,p_n,final_train_loss,error";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn ledger_row(experiment: &str, r: &RunRecord) -> String {
    let m = r.metrics.as_ref();
    let field = |f: fn(&crate::experiments::RunMetrics) -> f64| opt(m.map(f));
    let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
    format!(
        "{experiment},{},{},{},{},{},{},{},{},{},{},{error}",
        r.method,
        r.seed,
        opt(r.alpha),
        opt(r.beta),
        field(|m| m.accuracy),
        field(|m| m.diagonal_mass),
        field(|m| m.p_t),
        field(|m| m.p_s),
        field(|m| m.p_n),
        field(|m| m.final_train_loss),
    )
}

/// Appends one row per run to the CSV ledger, creating it with a header.
///
/// Only the main thread calls this, after all runs have finished.
pub fn append_ledger(path: &Path, experiment: &str, runs: &[RunRecord]) -> Result<()> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => format!("{LEDGER_HEADER}\n"),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    for r in runs {
        text.push_str(&ledger_row(experiment, r));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_sha256: String,
    seeds: &'a [u64],
    version: &'a str,
    config: serde_json::Value,
}

/// The manifest leaves out the output directory, so identical runs written
/// to different places produce identical manifests.
pub fn write_manifest(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut config = serde_json::to_value(cfg)?;
    if let Some(map) = config.as_object_mut() {
        map.remove("output_dir");
    }
    let manifest = Manifest {
        experiment: cfg.experiment.name(),
        config_sha256: cfg.hash(),
        seeds: &cfg.seeds,
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Wall time lives apart from the deterministic outputs.
pub fn write_timing(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    #[derive(Serialize)]
    struct Timing<'a> {
        method: &'a str,
        seed: u64,
        alpha: Option<f64>,
        beta: Option<f64>,
        wall_time_secs: f64,
    }
    let rows: Vec<Timing> = outcome
        .runs
        .iter()
        .map(|r| Timing {
            method: &r.method,
            seed: r.seed,
            alpha: r.alpha,
            beta: r.beta,
            wall_time_secs: r.wall_time_secs,
        })
        .collect();
    write_json(&dir.join("timing.json"), &rows)
}

pub fn matrix_text<T: std::fmt::Display>(rows: &[Vec<T>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.txt");
        write_atomic(&path, b"hello").unwrap();
        write_atomic(&path, b"again").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "again");
        let names: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn ledger_appends_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        append_ledger(&path, "x", &[]).unwrap();
        append_ledger(&path, "x", &[]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.lines().next().unwrap(), LEDGER_HEADER);
    }

    #[test]
    fn matrix_rows() {
        assert_eq!(matrix_text(&[vec![1, 2], vec![3, 4]]), "1 2\n3 4\n");
    }
}
