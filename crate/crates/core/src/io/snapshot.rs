//! Per-cycle particle tables (CSV), their JSON sidecars, and the run
//! manifest.
//!
//! Particle tables have the fixed header
//! `particle,<p1>,..,<pd>,<p1>_natural,..,<pd>_natural,log_lik,weight,metric`
//! and write every float in its shortest round-tripping decimal form, so a
//! table read back reproduces the swarm bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{ParamSpace, ParameterVector};
use crate::smc::{
    CalibrationResult, Counters, CycleRecord, Particle, SmcState, Snapshot, StageTiming,
    TemperState,
};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn snapshot_csv_path(dir: &Path, cycle: usize) -> PathBuf {
    dir.join(format!("cycle_{cycle:03}.csv"))
}

pub fn sidecar_path(dir: &Path, cycle: usize) -> PathBuf {
    dir.join(format!("cycle_{cycle:03}.json"))
}

/// JSON companion of a particle table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub cycle: usize,
    /// Increment of this cycle; absent for the prior swarm.
    pub gamma: Option<f64>,
    pub cumulative: f64,
    pub ess: Option<f64>,
    #[serde(with = "super::extended_float::vec")]
    pub db_trace: Vec<f64>,
    pub master_seed: u64,
    pub epsilon: f64,
    pub temper: TemperState,
    pub counters: Counters,
    /// Records of every cycle up to and including this one.
    pub history: Vec<CycleRecord>,
    pub timings: Vec<StageTiming>,
}

impl Sidecar {
    pub fn from_state(state: &SmcState, master_seed: u64) -> Self {
        let last = state.records.last().filter(|r| r.cycle == state.cycle);
        Self {
            cycle: state.cycle,
            gamma: last.map(|r| r.gamma),
            cumulative: state.temper.cumulative,
            ess: last.map(|r| r.ess),
            db_trace: last.map(|r| r.db_trace.clone()).unwrap_or_default(),
            master_seed,
            epsilon: state.epsilon,
            temper: state.temper.clone(),
            counters: state.counters,
            history: state.records.clone(),
            timings: state.timings.clone(),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

pub fn table_header(space: &ParamSpace) -> Vec<String> {
    let names = space.names();
    let mut h = vec!["particle".to_string()];
    h.extend(names.iter().cloned());
    h.extend(names.iter().map(|n| format!("{n}_natural")));
    h.extend(["log_lik", "weight", "metric"].map(String::from));
    h
}

/// Writes one row per particle to `path`.
pub fn write_particle_table(path: &Path, space: &ParamSpace, particles: &[Particle]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(table_header(space))
        .map_err(|e| csv_error(path, e))?;
    for (i, p) in particles.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(p.theta.iter().map(|x| x.to_string()));
        row.extend(space.to_natural(&p.theta).iter().map(|x| x.to_string()));
        row.extend([p.log_lik, p.weight, p.metric].map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a particle table written by [`write_particle_table`].
pub fn read_particle_table(path: &Path, space: &ParamSpace) -> Result<Vec<Particle>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header != table_header(space) {
        return Err(Error::Config(format!(
            "{}: header {header:?} does not match the parameter space",
            path.display()
        )));
    }
    let d = space.dim();
    let mut out = Vec::new();
    for (row_no, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let field = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|e| {
                Error::Config(format!(
                    "{} row {}: column `{}`: {e}",
                    path.display(),
                    row_no + 1,
                    header[j]
                ))
            })
        };
        let theta = (1..=d).map(field).collect::<Result<Vec<f64>>>()?;
        out.push(Particle {
            theta: ParameterVector::new(theta)?,
            log_lik: field(2 * d + 1)?,
            weight: field(2 * d + 2)?,
            metric: field(2 * d + 3)?,
        });
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes the particle table and sidecar of `state`'s latest cycle and
/// returns the table path.
pub fn write_cycle_snapshot(
    dir: &Path,
    space: &ParamSpace,
    state: &SmcState,
    master_seed: u64,
) -> Result<PathBuf> {
    create_dir(dir)?;
    let csv_path = snapshot_csv_path(dir, state.cycle);
    write_particle_table(&csv_path, space, &state.swarm)?;
    // the sidecar marks the cycle as complete, so it goes last
    write_json(&sidecar_path(dir, state.cycle), &Sidecar::from_state(state, master_seed))?;
    Ok(csv_path)
}

pub fn read_sidecar(dir: &Path, cycle: usize) -> Result<Sidecar> {
    read_json(&sidecar_path(dir, cycle))
}

/// Highest cycle with both a table and a sidecar in `dir`.
pub fn latest_cycle(dir: &Path) -> Result<Option<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut best = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(cycle) = name
            .to_str()
            .and_then(|s| s.strip_prefix("cycle_"))
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        if snapshot_csv_path(dir, cycle).exists() {
            best = best.max(Some(cycle));
        }
    }
    Ok(best)
}

/// Rebuilds the engine state from the latest complete snapshot in `dir`.
pub fn load_state(dir: &Path, space: &ParamSpace, master_seed: u64) -> Result<SmcState> {
    let cycle = latest_cycle(dir)?.ok_or_else(|| {
        Error::Config(format!("{} holds no completed cycle snapshot", dir.display()))
    })?;
    let sidecar = read_sidecar(dir, cycle)?;
    if sidecar.master_seed != master_seed {
        return Err(Error::Config(format!(
            "snapshot seed {} differs from configured seed {master_seed}",
            sidecar.master_seed
        )));
    }
    let snapshots = (0..=cycle)
        .map(|c| {
            Ok(Snapshot {
                cycle: c,
                particles: read_particle_table(&snapshot_csv_path(dir, c), space)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmcState {
        cycle,
        swarm: snapshots[cycle].particles.clone(),
        temper: sidecar.temper,
        records: sidecar.history,
        epsilon: sidecar.epsilon,
        counters: sidecar.counters,
        snapshots,
        timings: sidecar.timings,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: String,
    pub master_seed: u64,
    pub workers: usize,
    pub parameters: Vec<String>,
    pub cycles: usize,
    pub increments: Vec<f64>,
    pub ess: Vec<f64>,
    pub epsilon: f64,
    pub counters: Counters,
    pub records: Vec<CycleRecord>,
    pub timings: Vec<StageTiming>,
    pub snapshots: Vec<String>,
}

impl Manifest {
    pub fn for_smc(
        result: &CalibrationResult,
        space: &ParamSpace,
        master_seed: u64,
        workers: usize,
    ) -> Self {
        Self {
            mode: "smc".into(),
            master_seed,
            workers,
            parameters: space.names(),
            cycles: result.cycle_count(),
            increments: result.temper.increments.clone(),
            ess: result.cycles.iter().map(|r| r.ess).collect(),
            epsilon: result.epsilon,
            counters: result.counters,
            records: result.cycles.clone(),
            timings: result.timings.clone(),
            snapshots: result
                .snapshots
                .iter()
                .map(|s| format!("cycle_{:03}.csv", s.cycle))
                .collect(),
        }
    }
}

pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, manifest)?;
    Ok(path)
}
