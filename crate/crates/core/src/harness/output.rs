use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::SimConfig;
use super::sim::SweepResult;
use crate::channel::{N0_FORMULA, PILOT_SEED};
use crate::detectors::DetectorKind;
use crate::{Error, Result};

/// CSV text of the rows, header first. Same rows, same bytes.
pub fn csv_string(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in result.rows() {
        w.serialize(row).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(result: &SweepResult, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(result)?)?;
    Ok(())
}

pub fn config_hash(config: &SimConfig) -> String {
    Sha256::digest(config.to_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// `git rev-parse HEAD` of the working directory, or "unknown".
pub fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
struct PointMeta {
    detector: DetectorKind,
    ebn0_db: f64,
    n0: f64,
    wall_seconds: f64,
    gauss_map_clamped: u64,
    utilde_fallback: u64,
    smoother_repairs: u64,
    smoother_skipped: u64,
}

#[derive(Serialize)]
struct Meta<'a> {
    crate_version: &'static str,
    config: &'a SimConfig,
    config_sha256: String,
    seed: u64,
    git_revision: String,
    pilot_seed: String,
    n0_formula: &'static str,
    frame_len: usize,
    threads: usize,
    wall_seconds: f64,
    points: Vec<PointMeta>,
}

/// `<csv path>.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Run metadata: the full config and its hash, seeds, revision, timings
/// and detector diagnostics. Timings live here, not in the CSV.
pub fn meta_json(config: &SimConfig, frame_len: usize, result: &SweepResult) -> String {
    let points = result
        .points
        .iter()
        .map(|p| PointMeta {
            detector: p.row.detector,
            ebn0_db: p.row.ebn0_db,
            n0: p.n0,
            wall_seconds: p.wall_seconds,
            gauss_map_clamped: p.diagnostics.clamped,
            utilde_fallback: p.diagnostics.utilde_fallback,
            smoother_repairs: p.diagnostics.smoother.repairs,
            smoother_skipped: p.diagnostics.smoother.skipped,
        })
        .collect();
    let meta = Meta {
        crate_version: env!("CARGO_PKG_VERSION"),
        config,
        config_sha256: config_hash(config),
        seed: config.seed,
        git_revision: git_revision(),
        pilot_seed: format!("{PILOT_SEED:#018x}"),
        n0_formula: N0_FORMULA,
        frame_len,
        threads: rayon::current_num_threads(),
        wall_seconds: result.wall_seconds,
        points,
    };
    serde_json::to_string_pretty(&meta).expect("metadata serializes")
}

pub fn write_outputs(config: &SimConfig, frame_len: usize, result: &SweepResult, csv: &Path) -> Result<()> {
    write_csv(result, csv)?;
    let mut f = std::fs::File::create(meta_path(csv))?;
    f.write_all(meta_json(config, frame_len, result).as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
