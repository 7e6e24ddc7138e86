use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fdisac_core::channels::Scenario;
use fdisac_harness::experiment::{build_report, parse_power_range, prepare_output, run_seed, run_to_dir, write_report};
use fdisac_harness::{ExperimentConfig, Pipeline, Report};

#[derive(Parser)]
#[command(name = "fdisac", version, about = "Full-duplex ISAC Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the power sweep given in the config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run with the power points replaced by `start:step:stop` (dBm).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        power: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the scenario drawn for one run to a file for later replay.
    Scenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a built-in configuration (`reference` or `desk`) as TOML.
    Preset { name: String },
    /// Re-run the pipeline on a stored scenario and dump its intermediates.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        /// Defaults to the reference configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        power: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, runs, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            sweep(cfg, out)
        }
        Command::Sweep { config, power, runs, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.tx_power_sweep_dbm = parse_power_range(&power)?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            sweep(cfg, out)
        }
        Command::Scenario { config, run, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let pipeline = Pipeline::new(&cfg)?;
            let scenario = pipeline.scenario(run_seed(cfg.seed, run))?;
            std::fs::write(&out, scenario.to_toml()?).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
        Command::Preset { name } => {
            let cfg = match name.as_str() {
                "reference" => ExperimentConfig::reference(),
                "desk" => ExperimentConfig::desk(),
                other => anyhow::bail!("unknown preset `{other}` (expected reference or desk)"),
            };
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Replay { scenario, config, power, out } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::reference(),
            };
            replay(cfg, &scenario, power, out)
        }
    }
}

fn sweep(mut cfg: ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    if let Some(dir) = out {
        cfg.output_path = dir.to_string_lossy().into_owned();
    }
    let (report, _) = run_to_dir(&cfg)?;
    print_summary(&report);
    Ok(())
}

fn replay(mut cfg: ExperimentConfig, scenario_path: &Path, power: Option<f64>, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(scenario_path).with_context(|| format!("reading {}", scenario_path.display()))?;
    let power = power.unwrap_or(*cfg.tx_power_sweep_dbm.last().context("empty power sweep")?);
    cfg.tx_power_sweep_dbm = vec![power];
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_path));
    prepare_output(&dir)?;
    let pipeline = Pipeline::new(&cfg)?;
    let scenario = Scenario::from_toml(&text, &pipeline.array)?;
    if scenario.targets.len() != cfg.scenario.k_targets {
        cfg.scenario.k_targets = scenario.targets.len();
        cfg.sensing.close_pair.retain(|&i| i < scenario.targets.len());
        if cfg.sensing.close_pair.len() != 2 {
            cfg.sensing.close_pair.clear();
        }
    }
    let pipeline = Pipeline::new(&cfg)?;
    let detail = pipeline.run_on_scenario(&scenario, power, scenario.seed)?;

    let spectrum_path = dir.join("spectrum.csv");
    let file = std::fs::File::create(&spectrum_path).with_context(|| format!("writing {}", spectrum_path.display()))?;
    detail.spectrum.write_csv(std::io::BufWriter::new(file))?;
    std::fs::write(dir.join("optimizer.toml"), detail.optimized.dump())?;
    let report = build_report(&cfg, vec![detail.record]);
    write_report(&report, &dir)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &Report) {
    println!(
        "{:>8} {:>5} {:>8} {:>8} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}",
        "P[dBm]", "runs", "all-det", "pair", "rmseDoA", "medRange", "medRelV", "rate", "ideal", "feasible"
    );
    for a in &report.aggregates {
        println!(
            "{:>8.1} {:>5} {:>8.2} {:>8.2} {:>9.3} {:>9.3} {:>9.4} {:>8.2} {:>8.2} {:>8.2}",
            a.tx_power_dbm,
            a.runs,
            a.all_matched_fraction,
            a.pair_resolved_fraction,
            a.rmse_doa_deg,
            a.median_range_error_m,
            a.median_rel_velocity_error,
            a.mean_dl_rate_bps_hz,
            a.mean_ideal_dl_rate_bps_hz,
            a.feasible_fraction
        );
    }
}
