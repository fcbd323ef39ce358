//! Files exchanged between commands, all inside the output directory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pdmpq::quantizer::io::{read_chain, write_chain};
use pdmpq::solver::{read_solve, write_solve};
use pdmpq::{Chain, Solution};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCALES: &str = "scales.json";
pub const GRIDS: &str = "grids.bin";
pub const GRIDS_JSON: &str = "grids.json";
pub const SOLVE: &str = "solve.bin";
pub const SOLVE_SUMMARY: &str = "solve_summary.json";
pub const OUTCOMES: &str = "outcomes.csv";
pub const SUMMARY: &str = "summary.json";
pub const SIMULATE_SUMMARY: &str = "simulate_summary.json";
pub const TRAJECTORIES: &str = "trajectories.json";
pub const TRAJECTORY_PATHS: &str = "trajectories.csv";
pub const HISTOGRAM: &str = "histogram.csv";
pub const QUANTILES: &str = "quantiles.csv";
pub const EXCEEDANCE: &str = "exceedance.csv";
pub const STOPPED_PATHS: &str = "stopped_paths.csv";
pub const REPORT: &str = "report.txt";
pub const CONVERGENCE: &str = "convergence.csv";
pub const CONVERGENCE_TABLE: &str = "convergence.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalesFile {
    pub config_hash: String,
    pub pilot: u64,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub config_hash: String,
    pub k: usize,
    pub horizon: usize,
    pub v0: f64,
    pub step_hours: f64,
    pub min_boundary_time_hours: f64,
    pub flagged_rows: usize,
}

/// One row of `outcomes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub run: u64,
    pub stop_time_hours: f64,
    pub stop_time_years: f64,
    pub reason: String,
    pub thickness_mm: f64,
    pub mode: u32,
    pub reward: f64,
    pub jumps_at_stop: usize,
    pub last_jump_time_hours: f64,
}

/// One sampled point of a thickness path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub run: u64,
    pub time_hours: f64,
    pub time_years: f64,
    pub thickness_mm: f64,
    pub mode: u32,
    /// `start`, `flow`, `jump` or `stop`.
    pub event: String,
}

pub fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn open(dir: &Path, name: &str, command: &'static str) -> Result<BufReader<File>, CliError> {
    let p = path(dir, name);
    match File::open(&p) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::Missing { path: p, command }),
        Err(e) => Err(CliError::io(&p, e)),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let p = path(dir, name);
    File::create(&p).map(BufWriter::new).map_err(|e| CliError::io(&p, e))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&path(dir, name), e))
}

pub fn read_json<T: DeserializeOwned>(dir: &Path, name: &str, command: &'static str) -> Result<T, CliError> {
    Ok(serde_json::from_reader(open(dir, name, command)?)?)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let p = path(dir, name);
    std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))
}

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(&path(dir, name), e))
}

pub fn read_csv<T: DeserializeOwned>(dir: &Path, name: &str, command: &'static str) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_reader(open(dir, name, command)?);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn check_hash(what: &str, found: &str, expected: &str) -> Result<(), CliError> {
    if found != expected {
        return Err(CliError::Mismatch(format!(
            "{what} was produced with config hash {found}, active config hashes to {expected}"
        )));
    }
    Ok(())
}

pub fn load_scales(dir: &Path, hash: &str) -> Result<ScalesFile, CliError> {
    let s: ScalesFile = read_json(dir, SCALES, "scales")?;
    check_hash(SCALES, &s.config_hash, hash)?;
    Ok(s)
}

pub fn save_chain(dir: &Path, chain: &Chain) -> Result<(), CliError> {
    let mut w = create(dir, GRIDS)?;
    write_chain(chain, &mut w)?;
    w.flush().map_err(|e| CliError::io(&path(dir, GRIDS), e))
}

pub fn load_chain(dir: &Path, hash: &str) -> Result<Chain, CliError> {
    let chain = read_chain(open(dir, GRIDS, "train")?)?;
    check_hash(GRIDS, &hex::encode(chain.meta.fingerprint), hash)?;
    Ok(chain)
}

pub fn save_solve(dir: &Path, solve: &Solution) -> Result<(), CliError> {
    let mut w = create(dir, SOLVE)?;
    write_solve(solve, &mut w)?;
    w.flush().map_err(|e| CliError::io(&path(dir, SOLVE), e))
}

pub fn load_solve(dir: &Path, hash: &str) -> Result<Solution, CliError> {
    let solve = read_solve(open(dir, SOLVE, "solve")?)?;
    check_hash(SOLVE, &hex::encode(solve.fingerprint), hash)?;
    Ok(solve)
}
