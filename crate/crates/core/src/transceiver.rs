//! Hybrid-precoded transmission, full-duplex reception with analog/digital
//! SI cancellation, UE reception and the achievable downlink rate.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;

use crate::array::{AnalogBeamformer, ArrayConfig};
use crate::channels::RadarTarget;
use crate::error::{invalid, Error, Result};
use crate::linalg::{cis, fro2, log2_abs_det, CMatrix, CVector, ZERO};
use crate::ofdm::{OfdmGrid, OfdmParams};
use crate::rng::{complex_gaussian, stream, tag};
use crate::units::dbm_to_watts;

/// Relative slack allowed on the transmit power budget.
pub const POWER_TOLERANCE: f64 = 1e-9;

/// Every matrix that shapes one transmission and its reception.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    /// `N_b x N_b^RF`
    pub v_rf: AnalogBeamformer,
    /// `N_b^RF x d_b`
    pub v_bb: CMatrix,
    /// `M_b x M_b^RF`
    pub w_rf: AnalogBeamformer,
    /// `M_u x d_b`
    pub w_ue: CMatrix,
    /// Analog canceller, `M_b^RF x N_b^RF`.
    pub c_analog: CMatrix,
    /// Digital canceller, `M_b^RF x N_b^RF`.
    pub d_digital: CMatrix,
    /// Watts.
    pub tx_power_w: f64,
}

impl BeamformerSet {
    /// `V^RF V^BB`, the end-to-end `N_b x d_b` precoder.
    pub fn precoder(&self) -> CMatrix {
        &self.v_rf.assembled * &self.v_bb
    }

    /// `||V^RF V^BB||_F^2`, the radiated power for unit-power symbols.
    pub fn radiated_power(&self) -> f64 {
        fro2(&self.precoder())
    }

    pub fn check_power(&self) -> Result<()> {
        check_power(&self.v_rf, &self.v_bb, self.tx_power_w)
    }

    /// `(W^RF)^H H V^RF`
    pub fn effective_si(&self, si: &CMatrix) -> CMatrix {
        self.w_rf.assembled.adjoint() * si * &self.v_rf.assembled
    }

    /// `(H~ + C + D) V^BB`, the SI left at the RF-chain outputs.
    pub fn residual_si_map(&self, si: &CMatrix) -> CMatrix {
        (self.effective_si(si) + &self.c_analog + &self.d_digital) * &self.v_bb
    }

    /// Per-RX-chain SI power after the analog stage only,
    /// `||[(H~ + C) V^BB]_(j,:)||^2`.
    pub fn analog_residual_per_chain(&self, si: &CMatrix) -> Vec<f64> {
        let m = (self.effective_si(si) + &self.c_analog) * &self.v_bb;
        m.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect()
    }

    pub fn validate_shapes(&self, array: &ArrayConfig) -> Result<()> {
        let ok = self.v_rf.assembled.shape() == (array.n_tx, array.n_rf_tx)
            && self.v_bb.shape() == (array.n_rf_tx, array.streams)
            && self.w_rf.assembled.shape() == (array.m_rx, array.m_rf_rx)
            && self.w_ue.shape() == (array.ue_antennas, array.streams)
            && self.c_analog.shape() == (array.m_rf_rx, array.n_rf_tx)
            && self.d_digital.shape() == (array.m_rf_rx, array.n_rf_tx);
        if ok {
            Ok(())
        } else {
            Err(invalid("beamformer set dimensions do not match the array configuration"))
        }
    }
}

fn check_power(v_rf: &AnalogBeamformer, v_bb: &CMatrix, budget: f64) -> Result<()> {
    let p = fro2(&(&v_rf.assembled * v_bb));
    if p > budget * (1.0 + POWER_TOLERANCE) + f64::MIN_POSITIVE {
        return Err(Error::ConstraintViolation(format!(
            "radiated power {p:.6e} W exceeds budget {budget:.6e} W"
        )));
    }
    Ok(())
}

const QPSK: [Complex64; 4] = [
    Complex64 { re: FRAC_1_SQRT_2, im: FRAC_1_SQRT_2 },
    Complex64 { re: -FRAC_1_SQRT_2, im: FRAC_1_SQRT_2 },
    Complex64 { re: -FRAC_1_SQRT_2, im: -FRAC_1_SQRT_2 },
    Complex64 { re: FRAC_1_SQRT_2, im: -FRAC_1_SQRT_2 },
];

/// Unit-energy QPSK symbols on every (subcarrier, symbol, stream).
pub fn make_symbol_grid(ofdm: &OfdmParams, streams: usize, seed: u64) -> Result<OfdmGrid> {
    if streams == 0 {
        return Err(invalid("at least one stream required"));
    }
    let mut rng = stream(seed, &[tag::SYMBOLS]);
    let data = (0..ofdm.cells() * streams).map(|_| QPSK[rng.random_range(0..4)]).collect();
    OfdmGrid::from_vec(ofdm.subcarriers, ofdm.symbols, streams, data)
}

/// `x = V^RF V^BB s` on every cell.
pub fn transmit(symbols: &OfdmGrid, v_rf: &AnalogBeamformer, v_bb: &CMatrix, tx_power_w: f64) -> Result<OfdmGrid> {
    if v_bb.nrows() != v_rf.chains() || v_bb.ncols() != symbols.space_dim() {
        return Err(invalid(format!(
            "precoder {}x{} incompatible with {} chains and {} streams",
            v_bb.nrows(),
            v_bb.ncols(),
            v_rf.chains(),
            symbols.space_dim()
        )));
    }
    check_power(v_rf, v_bb, tx_power_w)?;
    symbols.map_matrix(&(&v_rf.assembled * v_bb))
}

/// Full-duplex reception at the RF-chain outputs:
/// `(W^RF)^H (echo + H x + n) + (C + D) V^BB s`.
#[allow(clippy::too_many_arguments)]
pub fn fd_receive(
    x_grid: &OfdmGrid,
    echo: &OfdmGrid,
    si: &CMatrix,
    set: &BeamformerSet,
    symbols: &OfdmGrid,
    noise_floor_dbm: f64,
    seed: u64,
) -> Result<OfdmGrid> {
    let w = &set.w_rf.assembled;
    let m_rx = w.nrows();
    let n_tx = set.v_rf.assembled.nrows();
    if si.shape() != (m_rx, n_tx)
        || x_grid.space_dim() != n_tx
        || echo.space_dim() != m_rx
        || symbols.space_dim() != set.v_bb.ncols()
        || x_grid.subcarriers() != echo.subcarriers()
        || x_grid.symbols() != echo.symbols()
        || x_grid.subcarriers() != symbols.subcarriers()
        || x_grid.symbols() != symbols.symbols()
        || set.c_analog.shape() != (w.ncols(), set.v_rf.chains())
        || set.d_digital.shape() != set.c_analog.shape()
    {
        return Err(invalid("full-duplex receive dimensions are inconsistent"));
    }
    let at_antennas = echo
        .add(&x_grid.map_matrix(si)?)?;
    let at_antennas = crate::channels::add_noise(&at_antennas, noise_floor_dbm, seed);
    let combined = at_antennas.map_matrix(&w.adjoint())?;
    let cancel = symbols.map_matrix(&((&set.c_analog + &set.d_digital) * &set.v_bb))?;
    combined.add(&cancel)
}

/// UE reception `W_u^H (H x + z)`.
pub fn ue_receive(x_grid: &OfdmGrid, h_dl: &CMatrix, w_ue: &CMatrix, noise_floor_dbm: f64, seed: u64) -> Result<OfdmGrid> {
    if h_dl.ncols() != x_grid.space_dim() || w_ue.nrows() != h_dl.nrows() {
        return Err(invalid("UE receive dimensions are inconsistent"));
    }
    let at_ue = x_grid.map_matrix(h_dl)?;
    let var = dbm_to_watts(noise_floor_dbm);
    let mut noisy = at_ue;
    if var > 0.0 {
        let mut rng = stream(seed, &[tag::UE_NOISE]);
        for z in noisy.as_mut_slice() {
            *z += complex_gaussian(&mut rng, var);
        }
    }
    noisy.map_matrix(&w_ue.adjoint())
}

/// Achievable DL rate in bit/s/Hz:
/// `log2 det(I + W^H H V V^H H^H W (W^H W sigma^2)^-1)`.
pub fn dl_rate(h_dl: &CMatrix, set: &BeamformerSet, noise_var: f64) -> Result<f64> {
    dl_rate_with(h_dl, &set.precoder(), &set.w_ue, noise_var)
}

/// [`dl_rate`] for an explicit end-to-end precoder `V = V^RF V^BB`.
pub fn dl_rate_with(h_dl: &CMatrix, precoder: &CMatrix, w_ue: &CMatrix, noise_var: f64) -> Result<f64> {
    if h_dl.ncols() != precoder.nrows() || w_ue.nrows() != h_dl.nrows() {
        return Err(invalid("DL rate dimensions are inconsistent"));
    }
    if !(noise_var > 0.0) {
        return Err(invalid("noise variance must be positive"));
    }
    let d = w_ue.ncols();
    let gram = w_ue.adjoint() * w_ue * Complex64::new(noise_var, 0.0);
    let inv = gram
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::RankDeficient("W_u^H W_u is singular".into()))?;
    // the Cholesky of a numerically rank-deficient Gram can still succeed
    let cond = {
        let eig = crate::linalg::HermitianEigen::new(&gram);
        eig.values.last().copied().unwrap_or(0.0) / eig.values[0].max(f64::MIN_POSITIVE)
    };
    if !(cond > 1e-12) {
        return Err(Error::RankDeficient("W_u^H W_u is numerically singular".into()));
    }
    let g = w_ue.adjoint() * h_dl * precoder;
    let m = CMatrix::identity(d, d) + &g * g.adjoint() * inv;
    let rate = log2_abs_det(&m).ok_or_else(|| Error::RankDeficient("rate determinant vanished".into()))?;
    Ok(rate.max(0.0))
}

/// Transmit signal available to the radar receiver. Algorithm-level code only
/// needs the scalar projections `a^H x(p,q)`, which this trait exposes so the
/// full antenna grid never has to be materialized.
pub trait TxSignal {
    fn subcarriers(&self) -> usize;
    fn symbols(&self) -> usize;
    fn antennas(&self) -> usize;
    /// `a^H x(p, q)` for every cell in storage order.
    fn project(&self, a: &CVector) -> Vec<Complex64>;
}

impl TxSignal for OfdmGrid {
    fn subcarriers(&self) -> usize {
        OfdmGrid::subcarriers(self)
    }

    fn symbols(&self) -> usize {
        OfdmGrid::symbols(self)
    }

    fn antennas(&self) -> usize {
        self.space_dim()
    }

    fn project(&self, a: &CVector) -> Vec<Complex64> {
        self.iter_cells()
            .map(|x| a.iter().zip(x).map(|(ai, xi)| ai.conj() * xi).sum())
            .collect()
    }
}

/// `x = V s` kept in factored form.
#[derive(Debug, Clone, Copy)]
pub struct PrecodedSymbols<'a> {
    /// `N_b x d_b`
    pub precoder: &'a CMatrix,
    pub symbols: &'a OfdmGrid,
}

impl TxSignal for PrecodedSymbols<'_> {
    fn subcarriers(&self) -> usize {
        self.symbols.subcarriers()
    }

    fn symbols(&self) -> usize {
        self.symbols.symbols()
    }

    fn antennas(&self) -> usize {
        self.precoder.nrows()
    }

    fn project(&self, a: &CVector) -> Vec<Complex64> {
        let c = self.precoder.adjoint() * a; // V^H a
        self.symbols
            .iter_cells()
            .map(|s| c.iter().zip(s).map(|(ci, si)| ci.conj() * si).sum())
            .collect()
    }
}

/// Combined radar receive grid computed directly at the RF-chain outputs.
///
/// Equivalent to [`radar_echo`](crate::channels::radar_echo) followed by
/// [`fd_receive`], but works with `d_b`-dimensional symbols and
/// `M_b^RF`-dimensional outputs, so the antenna-level grids are never built.
/// Noise is drawn directly as `(W^RF)^H n`, which for orthonormal combiner
/// columns is CN(0, sigma^2 I).
#[allow(clippy::too_many_arguments)]
pub fn fd_receive_combined(
    symbols: &OfdmGrid,
    targets: &[RadarTarget],
    si: &CMatrix,
    set: &BeamformerSet,
    array: &ArrayConfig,
    ofdm: &OfdmParams,
    noise_floor_dbm: f64,
    seed: u64,
) -> Result<OfdmGrid> {
    set.validate_shapes(array)?;
    if !symbols.matches(ofdm) || symbols.space_dim() != array.streams || si.shape() != (array.m_rx, array.n_tx) {
        return Err(invalid("combined receive dimensions are inconsistent"));
    }
    let w = &set.w_rf.assembled;
    let v = set.precoder();
    let chains = array.m_rf_rx;
    let streams = array.streams;

    // per-target: combined RX response and TX projection row
    let rx: Vec<CVector> = targets.iter().map(|t| w.adjoint() * array.rx_steering(t.doa).elements).collect();
    let tx: Vec<CVector> = targets
        .iter()
        .map(|t| (v.adjoint() * array.tx_steering(t.doa).elements).map(|z| z.conj()))
        .collect();
    let si_map = set.residual_si_map(si);

    let var = dbm_to_watts(noise_floor_dbm);
    let noise_shape = if var > 0.0 {
        let gram = w.adjoint() * w;
        Some(
            gram.cholesky()
                .ok_or_else(|| invalid("combiner columns are linearly dependent"))?
                .l(),
        )
    } else {
        None
    };
    let mut rng = stream(seed, &[tag::BS_NOISE]);

    let mut out = OfdmGrid::zeros(ofdm.subcarriers, ofdm.symbols, chains);
    let mut white = vec![ZERO; chains];
    for q in 0..ofdm.symbols {
        for p in 0..ofdm.subcarriers {
            let s = symbols.cell(p, q);
            let mut acc = vec![ZERO; chains];
            for (k, t) in targets.iter().enumerate() {
                let proj: Complex64 = tx[k].iter().zip(s).map(|(c, si)| c * si).sum();
                let phase = 2.0 * PI * (q as f64 * ofdm.symbol_duration * t.doppler - p as f64 * t.delay * ofdm.subcarrier_spacing);
                let coef = t.reflection * cis(phase) * proj;
                for (y, r) in acc.iter_mut().zip(rx[k].iter()) {
                    *y += coef * r;
                }
            }
            for (j, y) in acc.iter_mut().enumerate() {
                for (i, si_) in s.iter().enumerate().take(streams) {
                    *y += si_map[(j, i)] * si_;
                }
            }
            if let Some(l) = &noise_shape {
                for z in white.iter_mut() {
                    *z = complex_gaussian(&mut rng, var);
                }
                for (j, y) in acc.iter_mut().enumerate() {
                    for (i, z) in white.iter().enumerate().take(j + 1) {
                        *y += l[(j, i)] * z;
                    }
                }
            }
            out.cell_mut(p, q).copy_from_slice(&acc);
        }
    }
    Ok(out)
}
