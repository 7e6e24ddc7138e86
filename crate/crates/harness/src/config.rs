//! Experiment configuration: a TOML file whose sections mirror the model.

use std::path::Path;

use fdisac_core::array::{dft_codebook, ArrayConfig};
use fdisac_core::channels::{PinnedTarget, ScenarioParams};
use fdisac_core::ofdm::OfdmParams;
use fdisac_core::optimizer::{BootstrapLayout, OptimizerConfig};
use fdisac_core::sensing::MusicOptions;
use fdisac_core::units::dbm_to_watts;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub tx_chains: usize,
    pub tx_per_chain: usize,
    pub rx_chains: usize,
    pub rx_per_chain: usize,
    pub ue_antennas: usize,
    pub streams: usize,
    pub carrier_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmSection {
    pub subcarriers: usize,
    /// Symbols in the sensing window (several slots).
    pub sense_symbols: usize,
    pub subcarrier_spacing_hz: f64,
    /// Full symbol duration including the cyclic prefix.
    pub symbol_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub n_taps: usize,
    pub si_threshold_dbm: f64,
    pub codebook_bits: u32,
    pub ue_noise_dbm: f64,
    /// Error of the SI channel estimate relative to its power, dB. `None`
    /// hands the optimizer the true SI channel.
    pub si_estimate_nmse_db: Option<f64>,
    /// Analog beams of the first slot.
    pub bootstrap: BootstrapLayout,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            n_taps: 16,
            si_threshold_dbm: -30.0,
            codebook_bits: 5,
            ue_noise_dbm: -90.0,
            si_estimate_nmse_db: None,
            bootstrap: BootstrapLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingSection {
    pub music_grid_deg: f64,
    pub normalize_music: bool,
    /// Interpolate delay and Doppler between likelihood bins.
    pub refine_delay_doppler: bool,
    /// Estimates further than this from every target count as misses.
    pub association_threshold_deg: f64,
    /// Indices of two closely spaced targets whose separation is scored.
    pub close_pair: Vec<usize>,
}

impl Default for SensingSection {
    fn default() -> Self {
        Self {
            music_grid_deg: 0.1,
            normalize_music: true,
            refine_delay_doppler: true,
            association_threshold_deg: 3.0,
            close_pair: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub seed: u64,
    pub tx_power_sweep_dbm: Vec<f64>,
    /// Directory for CSV output.
    pub output_path: String,
    pub array: ArraySection,
    pub ofdm: OfdmSection,
    #[serde(default)]
    pub scenario: ScenarioParams,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub sensing: SensingSection,
}

impl ExperimentConfig {
    /// 128x128 node, 8 chains of 16 elements, 792 subcarriers, 112-symbol
    /// sensing window, six targets of which two sit 2 degrees apart.
    pub fn reference() -> Self {
        Self {
            runs: 100,
            seed: 1,
            tx_power_sweep_dbm: vec![10.0, 30.0],
            output_path: "out".into(),
            array: ArraySection {
                tx_chains: 8,
                tx_per_chain: 16,
                rx_chains: 8,
                rx_per_chain: 16,
                ue_antennas: 4,
                streams: 4,
                carrier_hz: 28e9,
            },
            ofdm: OfdmSection {
                subcarriers: 792,
                sense_symbols: 112,
                subcarrier_spacing_hz: 120e3,
                symbol_duration_s: 8.92e-6,
            },
            scenario: ScenarioParams {
                pinned: vec![
                    PinnedTarget {
                        doa_deg: 10.0,
                        range_m: Some(40.0),
                        velocity_kmh: None,
                    },
                    PinnedTarget {
                        doa_deg: 12.0,
                        range_m: Some(44.0),
                        velocity_kmh: None,
                    },
                    PinnedTarget {
                        doa_deg: 3.0,
                        range_m: Some(80.0),
                        velocity_kmh: None,
                    },
                ],
                ..ScenarioParams::default()
            },
            optimizer: OptimizerSection::default(),
            sensing: SensingSection {
                close_pair: vec![0, 1],
                ..SensingSection::default()
            },
        }
    }

    /// 32x32 node with 4 chains of 8 elements, 128 subcarriers, 56 symbols.
    pub fn desk() -> Self {
        let mut cfg = Self::reference();
        cfg.array.tx_chains = 4;
        cfg.array.tx_per_chain = 8;
        cfg.array.rx_chains = 4;
        cfg.array.rx_per_chain = 8;
        cfg.ofdm.subcarriers = 128;
        cfg.ofdm.sense_symbols = 56;
        cfg.scenario.k_targets = 3;
        cfg.scenario.pinned.truncate(1);
        cfg.sensing.close_pair.clear();
        cfg.optimizer.n_taps = 8;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn array_config(&self) -> Result<ArrayConfig, HarnessError> {
        let a = &self.array;
        Ok(ArrayConfig::new(
            a.tx_chains,
            a.tx_per_chain,
            a.rx_chains,
            a.rx_per_chain,
            a.ue_antennas,
            a.streams,
            a.carrier_hz,
        )?)
    }

    pub fn ofdm_params(&self) -> Result<OfdmParams, HarnessError> {
        let o = &self.ofdm;
        Ok(OfdmParams::new(
            o.subcarriers,
            o.sense_symbols,
            o.subcarrier_spacing_hz,
            o.symbol_duration_s - 1.0 / o.subcarrier_spacing_hz,
        )?)
    }

    pub fn optimizer_config(&self, tx_power_w: f64) -> Result<OptimizerConfig, HarnessError> {
        let o = &self.optimizer;
        let a = &self.array;
        let cfg = OptimizerConfig {
            n_taps: o.n_taps,
            si_threshold_w: dbm_to_watts(o.si_threshold_dbm),
            tx_power_w,
            noise_var_w: dbm_to_watts(o.ue_noise_dbm),
            tx_codebook: dft_codebook(o.codebook_bits, a.tx_per_chain)?,
            rx_codebook: dft_codebook(o.codebook_bits, a.rx_per_chain)?,
        };
        cfg.validate(&self.array_config()?)?;
        Ok(cfg)
    }

    pub fn music_options(&self) -> MusicOptions {
        MusicOptions {
            grid_step: self.sensing.music_grid_deg.to_radians(),
            normalize: self.sensing.normalize_music,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if self.tx_power_sweep_dbm.is_empty() || self.tx_power_sweep_dbm.iter().any(|p| !p.is_finite()) {
            return Err(HarnessError::Config("power sweep must be non-empty and finite".into()));
        }
        let array = self.array_config()?;
        self.ofdm_params()?;
        self.scenario.limits.validate()?;
        if self.scenario.l_scatterers > self.scenario.k_targets {
            return Err(HarnessError::Config("more DL scatterers than targets".into()));
        }
        if self.scenario.k_targets >= array.m_rf_rx {
            return Err(HarnessError::Config(format!(
                "{} targets leave no noise subspace with {} RX chains",
                self.scenario.k_targets, array.m_rf_rx
            )));
        }
        self.optimizer_config(1.0)?;
        if !(self.sensing.music_grid_deg > 0.0) || !(self.sensing.association_threshold_deg > 0.0) {
            return Err(HarnessError::Config("MUSIC grid and association threshold must be positive".into()));
        }
        let pair = &self.sensing.close_pair;
        if !(pair.is_empty() || (pair.len() == 2 && pair[0] != pair[1] && pair.iter().all(|&i| i < self.scenario.k_targets))) {
            return Err(HarnessError::Config("close_pair must name two distinct targets".into()));
        }
        Ok(())
    }
}
