//! Array geometry, ULA steering vectors, DFT beam codebooks and the
//! partially-connected (block-diagonal) analog beamformer layout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{cis, CMatrix, CVector, ZERO};
use crate::units::SPEED_OF_LIGHT;

/// Antenna and RF-chain dimensions of the full-duplex node and the UE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    /// TX antennas at the base station.
    pub n_tx: usize,
    /// RX antennas at the base station.
    pub m_rx: usize,
    pub n_rf_tx: usize,
    pub m_rf_rx: usize,
    /// TX antennas behind each TX RF chain.
    pub n_per_chain_tx: usize,
    /// RX antennas behind each RX RF chain.
    pub m_per_chain_rx: usize,
    pub ue_antennas: usize,
    /// Number of spatial data streams.
    pub streams: usize,
    /// Element spacing, metres.
    pub element_spacing: f64,
    /// Carrier wavelength, metres.
    pub wavelength: f64,
}

impl ArrayConfig {
    /// Build a configuration with half-wavelength spacing at `carrier_hz`.
    pub fn new(
        rf_tx: usize,
        per_chain_tx: usize,
        rf_rx: usize,
        per_chain_rx: usize,
        ue_antennas: usize,
        streams: usize,
        carrier_hz: f64,
    ) -> Result<Self> {
        let wavelength = SPEED_OF_LIGHT / carrier_hz;
        let cfg = Self {
            n_tx: rf_tx * per_chain_tx,
            m_rx: rf_rx * per_chain_rx,
            n_rf_tx: rf_tx,
            m_rf_rx: rf_rx,
            n_per_chain_tx: per_chain_tx,
            m_per_chain_rx: per_chain_rx,
            ue_antennas,
            streams,
            element_spacing: wavelength / 2.0,
            wavelength,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 128x128 node with 8 RF chains of 16 elements, 4-antenna UE, 4 streams, 28 GHz.
    pub fn reference() -> Self {
        Self::new(8, 16, 8, 16, 4, 4, 28e9).expect("reference array is valid")
    }

    /// 32x32 node with 4 RF chains of 8 elements.
    pub fn desk() -> Self {
        Self::new(4, 8, 4, 8, 4, 4, 28e9).expect("desk array is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rf_tx == 0 || self.m_rf_rx == 0 || self.n_per_chain_tx == 0 || self.m_per_chain_rx == 0 {
            return Err(invalid("RF-chain and per-chain antenna counts must be positive"));
        }
        if self.n_tx != self.n_rf_tx * self.n_per_chain_tx {
            return Err(invalid(format!(
                "n_tx = {} but n_rf_tx * n_per_chain_tx = {}",
                self.n_tx,
                self.n_rf_tx * self.n_per_chain_tx
            )));
        }
        if self.m_rx != self.m_rf_rx * self.m_per_chain_rx {
            return Err(invalid(format!(
                "m_rx = {} but m_rf_rx * m_per_chain_rx = {}",
                self.m_rx,
                self.m_rf_rx * self.m_per_chain_rx
            )));
        }
        if self.ue_antennas == 0 || self.streams == 0 {
            return Err(invalid("UE antennas and streams must be positive"));
        }
        if self.streams > self.n_rf_tx.min(self.ue_antennas) {
            return Err(invalid(format!(
                "{} streams exceed min(n_rf_tx, ue_antennas) = {}",
                self.streams,
                self.n_rf_tx.min(self.ue_antennas)
            )));
        }
        if !(self.element_spacing > 0.0) || !(self.wavelength > 0.0) {
            return Err(invalid("element spacing and wavelength must be positive"));
        }
        Ok(())
    }

    pub fn tx_steering(&self, angle: f64) -> SteeringVector {
        steering_unchecked(angle, self.n_tx, self.element_spacing, self.wavelength)
    }

    pub fn rx_steering(&self, angle: f64) -> SteeringVector {
        steering_unchecked(angle, self.m_rx, self.element_spacing, self.wavelength)
    }

    pub fn ue_steering(&self, angle: f64) -> SteeringVector {
        steering_unchecked(angle, self.ue_antennas, self.element_spacing, self.wavelength)
    }
}

/// ULA response toward `angle`, unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub angle: f64,
    pub elements: CVector,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Element `m` is `exp(j 2pi/lambda m d sin(angle)) / sqrt(n)`.
///
/// Any finite angle is accepted; angles with equal sine give equal vectors.
pub fn steering_vector(angle: f64, n_elements: usize, spacing: f64, wavelength: f64) -> Result<SteeringVector> {
    if n_elements == 0 {
        return Err(invalid("steering vector needs at least one element"));
    }
    if !(spacing > 0.0) || !(wavelength > 0.0) {
        return Err(invalid("spacing and wavelength must be positive"));
    }
    if !angle.is_finite() {
        return Err(invalid("angle must be finite"));
    }
    Ok(steering_unchecked(angle, n_elements, spacing, wavelength))
}

pub(crate) fn steering_unchecked(angle: f64, n: usize, spacing: f64, wavelength: f64) -> SteeringVector {
    let amp = 1.0 / (n as f64).sqrt();
    let step = 2.0 * PI / wavelength * spacing * angle.sin();
    let elements = CVector::from_fn(n, |m, _| cis(step * m as f64) * amp);
    SteeringVector { angle, elements }
}

/// A finite set of constant-modulus analog beams.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCodebook {
    pub beams: Vec<CVector>,
    pub bits: u32,
}

impl BeamCodebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn beam_len(&self) -> usize {
        self.beams.first().map_or(0, |b| b.len())
    }

    /// Index of the codebook entry equal to `beam` within `tol` (max abs).
    pub fn index_of(&self, beam: &CVector, tol: f64) -> Option<usize> {
        self.beams.iter().position(|b| {
            b.len() == beam.len() && b.iter().zip(beam.iter()).all(|(x, y)| (x - y).norm() <= tol)
        })
    }
}

/// Oversampled DFT codebook: beam `b`, element `m` is
/// `exp(-j 2pi m b / 2^bits) / sqrt(n_elements)`.
pub fn dft_codebook(bits: u32, n_elements: usize) -> Result<BeamCodebook> {
    if bits == 0 {
        return Err(invalid("codebook needs at least one bit"));
    }
    if bits > 16 {
        return Err(invalid("codebook larger than 2^16 beams"));
    }
    if n_elements == 0 {
        return Err(invalid("codebook beams need at least one element"));
    }
    let size = 1usize << bits;
    let amp = 1.0 / (n_elements as f64).sqrt();
    let beams = (0..size)
        .map(|b| {
            CVector::from_fn(n_elements, |m, _| {
                // reduce the phase index first so large m*b stays exact
                let k = (m * b) % size;
                cis(-2.0 * PI * k as f64 / size as f64) * amp
            })
        })
        .collect();
    Ok(BeamCodebook { beams, bits })
}

/// Partially-connected analog beamformer: chain `j` drives antenna block `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogBeamformer {
    pub per_chain_beams: Vec<CVector>,
    /// `(chains * per_chain) x chains`, block diagonal.
    pub assembled: CMatrix,
}

impl AnalogBeamformer {
    pub fn chains(&self) -> usize {
        self.per_chain_beams.len()
    }

    pub fn per_chain(&self) -> usize {
        self.per_chain_beams.first().map_or(0, |b| b.len())
    }

    pub fn antennas(&self) -> usize {
        self.assembled.nrows()
    }

    /// Same beam index from `codebook` on every chain.
    pub fn uniform(codebook: &BeamCodebook, beam: usize, chains: usize) -> Result<Self> {
        Self::from_indices(codebook, &vec![beam; chains])
    }

    pub fn from_indices(codebook: &BeamCodebook, indices: &[usize]) -> Result<Self> {
        let beams = indices
            .iter()
            .map(|&i| {
                codebook
                    .beams
                    .get(i)
                    .cloned()
                    .ok_or_else(|| invalid(format!("beam index {i} outside codebook of {}", codebook.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        assemble_block_diagonal(beams)
    }
}

/// Stack per-chain beams into the block-diagonal analog matrix.
pub fn assemble_block_diagonal(per_chain_beams: Vec<CVector>) -> Result<AnalogBeamformer> {
    let chains = per_chain_beams.len();
    if chains == 0 {
        return Err(invalid("need at least one RF chain"));
    }
    let per = per_chain_beams[0].len();
    if per == 0 || per_chain_beams.iter().any(|b| b.len() != per) {
        return Err(invalid("per-chain beams must share one non-zero length"));
    }
    let mut assembled = CMatrix::from_element(chains * per, chains, ZERO);
    for (j, beam) in per_chain_beams.iter().enumerate() {
        assembled.view_mut((j * per, j), (per, 1)).copy_from(beam);
    }
    Ok(AnalogBeamformer { per_chain_beams, assembled })
}
