//! One Monte Carlo run: sense with the first-slot beams, optimize, and score
//! the next slot's downlink.

use fdisac_core::array::ArrayConfig;
use fdisac_core::channels::{generate_scenario, Scenario};
use fdisac_core::linalg::{CMatrix, HermitianEigen};
use fdisac_core::ofdm::OfdmParams;
use fdisac_core::optimizer::{bootstrap_beamformers, check_constraints, optimize, Optimized};
use fdisac_core::rng::{complex_gaussian, derive_seed, stream, tag};
use fdisac_core::sensing::{
    associate_estimates, estimate_delay_doppler, music_spectrum, sample_covariance, DelayDopplerOptions,
    MusicSpectrum, SensingEstimate,
};
use fdisac_core::transceiver::{dl_rate, fd_receive_combined, make_symbol_grid, PrecodedSymbols};
use fdisac_core::units::{db_to_linear, dbm_to_watts, watts_to_dbm};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::HarnessError;

/// Sub-stream tags under a run seed.
mod stage {
    pub const SCENARIO: u64 = 100;
    pub const LINK: u64 = 101;
}

/// Per-target outcome. Estimated fields are NaN for a missed target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub target: usize,
    pub dl_scatterer: bool,
    pub true_doa_deg: f64,
    pub true_range_m: f64,
    pub true_velocity_mps: f64,
    pub matched: bool,
    pub est_doa_deg: f64,
    pub est_range_m: f64,
    pub est_velocity_mps: f64,
    pub doa_error_deg: f64,
    pub range_error_m: f64,
    pub velocity_error_mps: f64,
    pub rel_velocity_error: f64,
}

/// Everything recorded for one (run, power) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub tx_power_dbm: f64,
    pub targets: Vec<TargetOutcome>,
    pub spurious_estimates: usize,
    pub all_matched: bool,
    /// Whether both targets of the configured close pair were matched.
    pub pair_resolved: Option<bool>,
    pub dl_rate_bps_hz: f64,
    pub ideal_dl_rate_bps_hz: f64,
    pub feasible: bool,
    pub alpha: usize,
    /// The optimized set passed the independent constraint check.
    pub certified: bool,
    pub residual_si_dbm: Vec<f64>,
}

/// Intermediate products of a run, for inspection.
#[derive(Debug, Clone)]
pub struct RunDetail {
    pub record: RunRecord,
    pub scenario: Scenario,
    pub spectrum: MusicSpectrum,
    /// Eigenvalues of the sensing covariance, descending.
    pub covariance_eigenvalues: Vec<f64>,
    pub estimates: Vec<SensingEstimate>,
    pub optimized: Optimized,
}

/// Config-derived state shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub array: ArrayConfig,
    pub ofdm: OfdmParams,
}

impl Pipeline {
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            array: config.array_config()?,
            ofdm: config.ofdm_params()?,
        })
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario, HarnessError> {
        Ok(generate_scenario(
            &self.config.scenario,
            &self.array,
            &self.ofdm,
            derive_seed(seed, &[stage::SCENARIO]),
        )?)
    }

    /// Draw the scenario for `seed` and run it at `tx_power_dbm`.
    pub fn run_single(&self, tx_power_dbm: f64, seed: u64) -> Result<RunRecord, HarnessError> {
        let scenario = self.scenario(seed)?;
        Ok(self.run_on_scenario(&scenario, tx_power_dbm, seed)?.record)
    }

    /// What the optimizer is told about the SI channel.
    fn si_estimate(&self, scenario: &Scenario, seed: u64) -> CMatrix {
        let h = &scenario.si_channel;
        match self.config.optimizer.si_estimate_nmse_db {
            None => h.clone(),
            Some(nmse_db) => {
                let var = db_to_linear(nmse_db) * fdisac_core::linalg::fro2(h) / (h.len().max(1) as f64);
                let mut rng = stream(seed, &[tag::SI_ESTIMATE]);
                h.map(|z| z + complex_gaussian(&mut rng, var))
            }
        }
    }

    pub fn run_on_scenario(&self, scenario: &Scenario, tx_power_dbm: f64, seed: u64) -> Result<RunDetail, HarnessError> {
        let cfg = &self.config;
        let array = &self.array;
        let ofdm = &self.ofdm;
        let power_w = dbm_to_watts(tx_power_dbm);
        let link_seed = derive_seed(seed, &[stage::LINK, tx_power_dbm.to_bits()]);
        let opt_cfg = cfg.optimizer_config(power_w)?;
        let si_est = self.si_estimate(scenario, link_seed);

        // slot 0: fixed beams, sense
        let boot = bootstrap_beamformers(array, &opt_cfg, &cfg.optimizer.bootstrap, &si_est)?;
        let symbols = make_symbol_grid(ofdm, array.streams, link_seed)?;
        let y = fd_receive_combined(
            &symbols,
            &scenario.targets,
            &scenario.si_channel,
            &boot,
            array,
            ofdm,
            scenario.noise_floor_dbm,
            link_seed,
        )?;
        let cov = sample_covariance(&y)?;
        let k = cfg.scenario.k_targets;
        let spectrum = music_spectrum(&cov, &boot.w_rf, array, k, &cfg.music_options())?;
        let doas = spectrum.peak_angles();
        let precoder = boot.precoder();
        let tx = PrecodedSymbols { precoder: &precoder, symbols: &symbols };
        let dd_opts = DelayDopplerOptions {
            refine: cfg.sensing.refine_delay_doppler,
            ..Default::default()
        };
        let estimates: Vec<SensingEstimate> = if doas.is_empty() {
            Vec::new()
        } else {
            estimate_delay_doppler(&tx, &y, &boot.w_rf, array, &doas, ofdm, &dd_opts)?
                .into_iter()
                .zip(&doas)
                .map(|(dd, &doa)| SensingEstimate::new(doa, dd.delay, dd.doppler, array.wavelength))
                .collect()
        };
        let threshold = cfg.sensing.association_threshold_deg.to_radians();
        let assoc = associate_estimates(&estimates, &scenario.targets, threshold);

        // slot 1: optimize on the estimates; DL paths take the estimate
        // associated with each true scatterer
        let dl_doas: Vec<f64> = scenario
            .targets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_dl_scatterer)
            .map(|(i, t)| assoc.pair_for_truth(i).map_or(t.doa, |p| estimates[p.estimate].doa))
            .collect();
        let opt_doas = if doas.is_empty() { scenario.targets.iter().map(|t| t.doa).collect() } else { doas.clone() };
        let optimized = optimize(&opt_doas, &dl_doas, &si_est, array, &opt_cfg)?;
        let ue_noise = dbm_to_watts(cfg.optimizer.ue_noise_dbm);
        let rate = dl_rate(&scenario.dl_channel, &optimized.set, ue_noise)?;

        let mut ideal_cfg = opt_cfg.clone();
        ideal_cfg.n_taps = array.n_rf_tx * array.m_rf_rx;
        let no_si = CMatrix::zeros(array.m_rx, array.n_tx);
        let ideal = optimize(&opt_doas, &dl_doas, &no_si, array, &ideal_cfg)?;
        let ideal_rate = dl_rate(&scenario.dl_channel, &ideal.set, ue_noise)?;
        let certified = check_constraints(&optimized.set, &si_est, &opt_cfg).ok();

        let targets: Vec<TargetOutcome> = scenario
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let pair = assoc.pair_for_truth(i);
                let est = pair.map(|p| estimates[p.estimate]);
                TargetOutcome {
                    target: i,
                    dl_scatterer: t.is_dl_scatterer,
                    true_doa_deg: t.doa.to_degrees(),
                    true_range_m: t.range,
                    true_velocity_mps: t.velocity,
                    matched: pair.is_some(),
                    est_doa_deg: est.map_or(f64::NAN, |e| e.doa.to_degrees()),
                    est_range_m: est.map_or(f64::NAN, |e| e.range),
                    est_velocity_mps: est.map_or(f64::NAN, |e| e.velocity),
                    doa_error_deg: pair.map_or(f64::NAN, |p| p.doa_error.to_degrees()),
                    range_error_m: pair.map_or(f64::NAN, |p| p.range_error),
                    velocity_error_mps: pair.map_or(f64::NAN, |p| p.velocity_error),
                    rel_velocity_error: pair.map_or(f64::NAN, |p| p.relative_velocity_error),
                }
            })
            .collect();
        let pair_resolved = match cfg.sensing.close_pair.as_slice() {
            [a, b] => Some(targets[*a].matched && targets[*b].matched),
            _ => None,
        };
        let record = RunRecord {
            run: 0,
            seed,
            tx_power_dbm,
            all_matched: targets.iter().all(|t| t.matched),
            targets,
            spurious_estimates: assoc.unmatched_estimates.len(),
            pair_resolved,
            dl_rate_bps_hz: rate,
            ideal_dl_rate_bps_hz: ideal_rate,
            feasible: optimized.feasible,
            alpha: optimized.alpha,
            certified,
            residual_si_dbm: optimized.row_residuals.iter().map(|&w| watts_to_dbm(w)).collect(),
        };
        Ok(RunDetail {
            record,
            scenario: scenario.clone(),
            spectrum,
            covariance_eigenvalues: HermitianEigen::new(&cov).values,
            estimates,
            optimized,
        })
    }
}
