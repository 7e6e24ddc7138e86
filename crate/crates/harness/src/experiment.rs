//! Monte Carlo sweeps, aggregation and CSV output.
//!
//! Three files are written to the output directory:
//!
//! `runs.csv`, one row per (run, power point):
//! `run,seed,tx_power_dbm,targets,matched,spurious_estimates,all_matched,pair_resolved,
//! dl_rate_bps_hz,ideal_dl_rate_bps_hz,rate_gap_bps_hz,feasible,alpha,certified,
//! max_residual_si_dbm,residual_si_dbm`
//! (`pair_resolved` is empty when no close pair is configured;
//! `residual_si_dbm` lists the per-chain values separated by `;`).
//!
//! `targets.csv`, one row per (run, power point, target):
//! `run,tx_power_dbm,target,dl_scatterer,true_doa_deg,true_range_m,true_velocity_mps,
//! matched,est_doa_deg,est_range_m,est_velocity_mps,doa_error_deg,range_error_m,
//! velocity_error_mps,rel_velocity_error` (estimates and errors are `NaN` for misses).
//!
//! `aggregate.csv`, one row per power point, see [`Aggregate`].

use std::fs;
use std::path::{Path, PathBuf};

use fdisac_core::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::pipeline::{Pipeline, RunRecord, TargetOutcome};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub tx_power_dbm: f64,
    pub targets: usize,
    pub matched: usize,
    pub spurious_estimates: usize,
    pub all_matched: bool,
    pub pair_resolved: Option<bool>,
    pub dl_rate_bps_hz: f64,
    pub ideal_dl_rate_bps_hz: f64,
    pub rate_gap_bps_hz: f64,
    pub feasible: bool,
    pub alpha: usize,
    pub certified: bool,
    pub max_residual_si_dbm: f64,
    pub residual_si_dbm: String,
}

impl From<&RunRecord> for RunRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            run: r.run,
            seed: r.seed,
            tx_power_dbm: r.tx_power_dbm,
            targets: r.targets.len(),
            matched: r.targets.iter().filter(|t| t.matched).count(),
            spurious_estimates: r.spurious_estimates,
            all_matched: r.all_matched,
            pair_resolved: r.pair_resolved,
            dl_rate_bps_hz: r.dl_rate_bps_hz,
            ideal_dl_rate_bps_hz: r.ideal_dl_rate_bps_hz,
            rate_gap_bps_hz: r.ideal_dl_rate_bps_hz - r.dl_rate_bps_hz,
            feasible: r.feasible,
            alpha: r.alpha,
            certified: r.certified,
            max_residual_si_dbm: r.residual_si_dbm.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            residual_si_dbm: r.residual_si_dbm.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub run: usize,
    pub tx_power_dbm: f64,
    #[serde(flatten)]
    pub outcome: TargetOutcome,
}

/// Per-power-point summary. Error statistics run over matched targets only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tx_power_dbm: f64,
    pub runs: usize,
    pub all_matched_fraction: f64,
    /// NaN when no close pair is configured.
    pub pair_resolved_fraction: f64,
    pub matched_targets: usize,
    pub total_targets: usize,
    pub rmse_doa_deg: f64,
    pub rmse_range_m: f64,
    pub rmse_velocity_mps: f64,
    pub median_range_error_m: f64,
    pub median_rel_velocity_error: f64,
    pub p90_rel_velocity_error: f64,
    pub mean_dl_rate_bps_hz: f64,
    pub mean_ideal_dl_rate_bps_hz: f64,
    pub mean_rate_gap_bps_hz: f64,
    pub feasible_fraction: f64,
    /// Feasible outputs that passed the constraint check, over all feasible.
    pub certified_fraction: f64,
}

/// Linear-interpolated quantile of `values` (NaN when empty).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn rms(values: &[f64]) -> f64 {
    mean(values.iter().map(|v| v * v)).sqrt()
}

fn fraction(flags: impl Iterator<Item = bool>) -> f64 {
    mean(flags.map(|b| if b { 1.0 } else { 0.0 }))
}

/// Summarize the rows of one power point from their CSV-level fields, so
/// the aggregate can be recomputed from the emitted files alone.
pub fn aggregate(tx_power_dbm: f64, runs: &[RunRow], targets: &[TargetRow]) -> Aggregate {
    let matched: Vec<&TargetOutcome> = targets.iter().map(|t| &t.outcome).filter(|t| t.matched).collect();
    let doa: Vec<f64> = matched.iter().map(|t| t.doa_error_deg).collect();
    let range: Vec<f64> = matched.iter().map(|t| t.range_error_m).collect();
    let vel: Vec<f64> = matched.iter().map(|t| t.velocity_error_mps).collect();
    let rel: Vec<f64> = matched.iter().map(|t| t.rel_velocity_error).collect();
    let pairs: Vec<bool> = runs.iter().filter_map(|r| r.pair_resolved).collect();
    let feasible: Vec<&RunRow> = runs.iter().filter(|r| r.feasible).collect();
    Aggregate {
        tx_power_dbm,
        runs: runs.len(),
        all_matched_fraction: fraction(runs.iter().map(|r| r.all_matched)),
        pair_resolved_fraction: fraction(pairs.into_iter()),
        matched_targets: matched.len(),
        total_targets: targets.len(),
        rmse_doa_deg: rms(&doa),
        rmse_range_m: rms(&range),
        rmse_velocity_mps: rms(&vel),
        median_range_error_m: median(&range),
        median_rel_velocity_error: median(&rel),
        p90_rel_velocity_error: quantile(&rel, 0.9),
        mean_dl_rate_bps_hz: mean(runs.iter().map(|r| r.dl_rate_bps_hz)),
        mean_ideal_dl_rate_bps_hz: mean(runs.iter().map(|r| r.ideal_dl_rate_bps_hz)),
        mean_rate_gap_bps_hz: mean(runs.iter().map(|r| r.rate_gap_bps_hz)),
        feasible_fraction: fraction(runs.iter().map(|r| r.feasible)),
        certified_fraction: fraction(feasible.iter().map(|r| r.certified)),
    }
}

/// All records of a sweep plus the per-power summaries.
#[derive(Debug, Clone)]
pub struct Report {
    pub records: Vec<RunRecord>,
    pub runs: Vec<RunRow>,
    pub targets: Vec<TargetRow>,
    pub aggregates: Vec<Aggregate>,
}

impl Report {
    pub fn records_at(&self, tx_power_dbm: f64) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(move |r| r.tx_power_dbm == tx_power_dbm)
    }

    pub fn aggregate_at(&self, tx_power_dbm: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.tx_power_dbm == tx_power_dbm)
    }
}

/// Seed of run `run` under master seed `master`; the scenario of a run is
/// shared by every power point.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, &[run as u64])
}

/// Execute every (run, power) pair. Results are ordered by power point,
/// then run, regardless of how the work is scheduled.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    let pipeline = Pipeline::new(config)?;
    let jobs: Vec<(usize, usize)> = (0..config.tx_power_sweep_dbm.len())
        .flat_map(|p| (0..config.runs).map(move |r| (p, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(p, r)| {
            let mut rec = pipeline.run_single(config.tx_power_sweep_dbm[p], run_seed(config.seed, r))?;
            rec.run = r;
            Ok(rec)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(build_report(config, records))
}

pub fn build_report(config: &ExperimentConfig, records: Vec<RunRecord>) -> Report {
    let runs: Vec<RunRow> = records.iter().map(RunRow::from).collect();
    let targets: Vec<TargetRow> = records
        .iter()
        .flat_map(|r| {
            r.targets.iter().map(move |t| TargetRow {
                run: r.run,
                tx_power_dbm: r.tx_power_dbm,
                outcome: t.clone(),
            })
        })
        .collect();
    let aggregates = config
        .tx_power_sweep_dbm
        .iter()
        .map(|&p| {
            let rr: Vec<RunRow> = runs.iter().filter(|r| r.tx_power_dbm == p).cloned().collect();
            let tt: Vec<TargetRow> = targets.iter().filter(|t| t.tx_power_dbm == p).cloned().collect();
            aggregate(p, &rr, &tt)
        })
        .collect();
    Report { records, runs, targets, aggregates }
}

/// Check the output directory, run the sweep and write its CSV files.
pub fn run_to_dir(config: &ExperimentConfig) -> Result<(Report, OutputFiles), HarnessError> {
    config.validate()?;
    let dir = PathBuf::from(&config.output_path);
    prepare_output(&dir)?;
    let report = run_experiment(config)?;
    let files = write_report(&report, &dir)?;
    Ok((report, files))
}

/// Create `dir` and prove it is writable before any work starts.
pub fn prepare_output(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| HarnessError::Io(format!("{} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let io = |e: csv::Error| HarnessError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let io = |e: csv::Error| HarnessError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().map(|row| row.map_err(io)).collect()
}

/// Paths of the files written by [`write_report`].
#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub runs: PathBuf,
    pub targets: PathBuf,
    pub aggregate: PathBuf,
}

impl OutputFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            runs: dir.join("runs.csv"),
            targets: dir.join("targets.csv"),
            aggregate: dir.join("aggregate.csv"),
        }
    }
}

pub fn write_report(report: &Report, dir: &Path) -> Result<OutputFiles, HarnessError> {
    prepare_output(dir)?;
    let files = OutputFiles::in_dir(dir);
    write_rows(&files.runs, &report.runs)?;
    // csv cannot serialize flattened structs, so targets go through a flat row
    let flat: Vec<FlatTargetRow> = report.targets.iter().map(FlatTargetRow::from).collect();
    write_rows(&files.targets, &flat)?;
    write_rows(&files.aggregate, &report.aggregates)?;
    Ok(files)
}

/// Read back `runs.csv` and `targets.csv` and recompute the aggregates.
pub fn reaggregate(dir: &Path, sweep: &[f64]) -> Result<Vec<Aggregate>, HarnessError> {
    let files = OutputFiles::in_dir(dir);
    let runs: Vec<RunRow> = read_rows(&files.runs)?;
    let flat: Vec<FlatTargetRow> = read_rows(&files.targets)?;
    let targets: Vec<TargetRow> = flat.into_iter().map(TargetRow::from).collect();
    Ok(sweep
        .iter()
        .map(|&p| {
            let rr: Vec<RunRow> = runs.iter().filter(|r| r.tx_power_dbm == p).cloned().collect();
            let tt: Vec<TargetRow> = targets.iter().filter(|t| t.tx_power_dbm == p).cloned().collect();
            aggregate(p, &rr, &tt)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlatTargetRow {
    run: usize,
    tx_power_dbm: f64,
    target: usize,
    dl_scatterer: bool,
    true_doa_deg: f64,
    true_range_m: f64,
    true_velocity_mps: f64,
    matched: bool,
    est_doa_deg: f64,
    est_range_m: f64,
    est_velocity_mps: f64,
    doa_error_deg: f64,
    range_error_m: f64,
    velocity_error_mps: f64,
    rel_velocity_error: f64,
}

impl From<&TargetRow> for FlatTargetRow {
    fn from(t: &TargetRow) -> Self {
        let o = &t.outcome;
        Self {
            run: t.run,
            tx_power_dbm: t.tx_power_dbm,
            target: o.target,
            dl_scatterer: o.dl_scatterer,
            true_doa_deg: o.true_doa_deg,
            true_range_m: o.true_range_m,
            true_velocity_mps: o.true_velocity_mps,
            matched: o.matched,
            est_doa_deg: o.est_doa_deg,
            est_range_m: o.est_range_m,
            est_velocity_mps: o.est_velocity_mps,
            doa_error_deg: o.doa_error_deg,
            range_error_m: o.range_error_m,
            velocity_error_mps: o.velocity_error_mps,
            rel_velocity_error: o.rel_velocity_error,
        }
    }
}

impl From<FlatTargetRow> for TargetRow {
    fn from(f: FlatTargetRow) -> Self {
        Self {
            run: f.run,
            tx_power_dbm: f.tx_power_dbm,
            outcome: TargetOutcome {
                target: f.target,
                dl_scatterer: f.dl_scatterer,
                true_doa_deg: f.true_doa_deg,
                true_range_m: f.true_range_m,
                true_velocity_mps: f.true_velocity_mps,
                matched: f.matched,
                est_doa_deg: f.est_doa_deg,
                est_range_m: f.est_range_m,
                est_velocity_mps: f.est_velocity_mps,
                doa_error_deg: f.doa_error_deg,
                range_error_m: f.range_error_m,
                velocity_error_mps: f.velocity_error_mps,
                rel_velocity_error: f.rel_velocity_error,
            },
        }
    }
}

/// Parse `start:step:stop` (inclusive stop) into power points.
pub fn parse_power_range(range: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = || HarnessError::Config(format!("power range `{range}` is not start:step:stop"));
    let parts: Vec<f64> = range
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, step, stop] = parts.as_slice() else {
        return Err(bad());
    };
    if !start.is_finite() || !stop.is_finite() || !(*step > 0.0) || stop < start {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + step * i as f64).collect())
}
