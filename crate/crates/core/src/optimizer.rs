//! Joint design of the analog beams, digital precoder, UE combiner and SI
//! cancellation for the next slot, given the DoAs sensed in this one.

use num_complex::Complex64;
use serde::Serialize;

use crate::array::{AnalogBeamformer, ArrayConfig, BeamCodebook};
use crate::error::{invalid, Error, Result};
use crate::linalg::{fro2, CMatrix, CVector, HermitianEigen, SortedSvd, ZERO};
use crate::transceiver::BeamformerSet;
use crate::units::{dbm_to_watts, watts_to_dbm};

/// Direction-only channel models built from estimated angles.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualChannels {
    /// `sum_k a_M(theta_k) a_N(theta_k)^H`, `M_b x N_b`.
    pub h_radar: CMatrix,
    /// `sum_l a_Mu(theta_l) a_N(theta_l)^H`, `M_u x N_b`.
    pub h_dl_virtual: CMatrix,
}

impl VirtualChannels {
    pub fn new(doas: &[f64], dl_doas: &[f64], array: &ArrayConfig) -> Self {
        let mut h_radar = CMatrix::zeros(array.m_rx, array.n_tx);
        for &th in doas {
            h_radar += array.rx_steering(th).elements * array.tx_steering(th).elements.adjoint();
        }
        let mut h_dl_virtual = CMatrix::zeros(array.ue_antennas, array.n_tx);
        for &th in dl_doas {
            h_dl_virtual += array.ue_steering(th).elements * array.tx_steering(th).elements.adjoint();
        }
        Self { h_radar, h_dl_virtual }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Analog SI cancellation taps `N`.
    pub n_taps: usize,
    /// Per-RX-chain residual SI ceiling after analog cancellation, watts.
    pub si_threshold_w: f64,
    pub tx_power_w: f64,
    /// UE noise variance used for power allocation, watts.
    pub noise_var_w: f64,
    pub tx_codebook: BeamCodebook,
    pub rx_codebook: BeamCodebook,
}

impl OptimizerConfig {
    /// 5-bit DFT codebooks, -30 dBm SI ceiling, -90 dBm noise.
    pub fn with_defaults(array: &ArrayConfig, n_taps: usize, tx_power_w: f64) -> Result<Self> {
        Ok(Self {
            n_taps,
            si_threshold_w: dbm_to_watts(-30.0),
            tx_power_w,
            noise_var_w: dbm_to_watts(-90.0),
            tx_codebook: crate::array::dft_codebook(5, array.n_per_chain_tx)?,
            rx_codebook: crate::array::dft_codebook(5, array.m_per_chain_rx)?,
        })
    }

    pub fn validate(&self, array: &ArrayConfig) -> Result<()> {
        if self.n_taps > array.n_rf_tx * array.m_rf_rx {
            return Err(invalid(format!(
                "{} taps exceed N_RF * M_RF = {}",
                self.n_taps,
                array.n_rf_tx * array.m_rf_rx
            )));
        }
        if self.n_taps % array.m_rf_rx != 0 {
            return Err(invalid(format!(
                "{} taps do not fill whole columns of {} RX chains",
                self.n_taps, array.m_rf_rx
            )));
        }
        if !(self.si_threshold_w > 0.0) || !(self.tx_power_w >= 0.0) || !(self.noise_var_w > 0.0) {
            return Err(invalid("SI threshold and noise variance must be positive, power non-negative"));
        }
        if self.tx_codebook.is_empty() || self.tx_codebook.beam_len() != array.n_per_chain_tx {
            return Err(invalid("TX codebook does not match the per-chain TX array"));
        }
        if self.rx_codebook.is_empty() || self.rx_codebook.beam_len() != array.m_per_chain_rx {
            return Err(invalid("RX codebook does not match the per-chain RX array"));
        }
        Ok(())
    }
}

/// `||(W^RF)^H H_R V^RF V^BB||^2 / (||(H~ + C + D) V^BB||^2 + ||W^RF||^2 sigma^2)`
/// with `si_effective = H~ = (W^RF)^H H_bb V^RF`.
pub fn radar_snr(set: &BeamformerSet, vc: &VirtualChannels, si_effective: &CMatrix, noise_var: f64) -> Result<f64> {
    let w = &set.w_rf.assembled;
    if vc.h_radar.shape() != (w.nrows(), set.v_rf.antennas())
        || si_effective.shape() != set.c_analog.shape()
        || set.d_digital.shape() != set.c_analog.shape()
    {
        return Err(invalid("radar SNR dimensions are inconsistent"));
    }
    let num = fro2(&(w.adjoint() * &vc.h_radar * set.precoder()));
    let den = fro2(&((si_effective + &set.c_analog + &set.d_digital) * &set.v_bb)) + fro2(w) * noise_var;
    if !(den > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    Ok(num / den)
}

/// `||W_u^H H_ub V^RF V^BB||^2 / (||W_u||^2 sigma^2)`.
pub fn dl_snr(set: &BeamformerSet, vc: &VirtualChannels, noise_var: f64) -> Result<f64> {
    let wu2 = fro2(&set.w_ue);
    if wu2 == 0.0 {
        return Err(invalid("UE combiner is zero"));
    }
    if vc.h_dl_virtual.shape() != (set.w_ue.nrows(), set.v_rf.antennas()) {
        return Err(invalid("DL SNR dimensions are inconsistent"));
    }
    let den = wu2 * noise_var;
    if !(den > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    Ok(fro2(&(set.w_ue.adjoint() * &vc.h_dl_virtual * set.precoder())) / den)
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Per-chain score tables: `tables[j][b]` for chain `j`, beam `b`.
type Scores = Vec<Vec<f64>>;

fn tx_scores(vc: &VirtualChannels, codebook: &BeamCodebook, array: &ArrayConfig) -> Scores {
    let per = array.n_per_chain_tx;
    (0..array.n_rf_tx)
        .map(|j| {
            let block = vc.h_radar.columns(j * per, per);
            codebook.beams.iter().map(|v| (block * v).norm_squared()).collect()
        })
        .collect()
}

/// Per-chain TX beams maximizing `||H_R V^RF||^2`. The block-diagonal
/// layout makes the objective a sum of per-chain terms, so the per-chain
/// search is the exact joint optimum.
pub fn select_tx_beams(vc: &VirtualChannels, codebook: &BeamCodebook, array: &ArrayConfig) -> Result<AnalogBeamformer> {
    if codebook.is_empty() || codebook.beam_len() != array.n_per_chain_tx {
        return Err(invalid("TX codebook does not match the per-chain TX array"));
    }
    let idx: Vec<usize> = tx_scores(vc, codebook, array).into_iter().map(argmax).collect();
    AnalogBeamformer::from_indices(codebook, &idx)
}

fn rx_scores(
    vc: &VirtualChannels,
    si_estimate: &CMatrix,
    v_rf: &AnalogBeamformer,
    codebook: &BeamCodebook,
    array: &ArrayConfig,
) -> (Scores, Scores) {
    let per = array.m_per_chain_rx;
    let hv = &vc.h_radar * &v_rf.assembled;
    let sv = si_estimate * &v_rf.assembled;
    let table = |m: &CMatrix| -> Scores {
        (0..array.m_rf_rx)
            .map(|j| {
                let block = m.rows(j * per, per);
                codebook
                    .beams
                    .iter()
                    .map(|w| (block.adjoint() * w).norm_squared())
                    .collect()
            })
            .collect()
    };
    (table(&hv), table(&sv))
}

/// Total-ratio order for the RX beam search: a zero denominator beats any positive one;
/// two zero denominators compare by numerator.
fn ratio_better(num_a: f64, den_a: f64, num_b: f64, den_b: f64) -> bool {
    match (den_a == 0.0, den_b == 0.0) {
        (true, true) => num_a > num_b,
        (true, false) => true,
        (false, true) => false,
        (false, false) => num_a * den_b > num_b * den_a,
    }
}

/// Maximize `sum_j num[j][b_j] / sum_j den[j][b_j]` over one choice per chain.
///
/// Dinkelbach iteration: for a fixed ratio `r` the surrogate
/// `sum_j (num - r den)` separates per chain, and the ratio of its maximizer
/// increases strictly until it reaches the joint optimum.
fn maximize_sum_ratio(num: &Scores, den: &Scores) -> Vec<usize> {
    let chains = num.len();
    // every chain can reach zero SI: the ratio is unbounded, maximize numerator
    if den.iter().all(|d| d.contains(&0.0)) {
        return (0..chains)
            .map(|j| argmax(num[j].iter().zip(&den[j]).map(|(&n, &d)| if d == 0.0 { n } else { f64::NEG_INFINITY })))
            .collect();
    }
    let totals = |pick: &[usize]| -> (f64, f64) {
        pick.iter()
            .enumerate()
            .fold((0.0, 0.0), |(n, d), (j, &b)| (n + num[j][b], d + den[j][b]))
    };
    let mut best = vec![0; chains];
    let (mut bn, mut bd) = totals(&best);
    let mut ratio = if bd > 0.0 { bn / bd } else { 0.0 };
    for _ in 0..1000 {
        let pick: Vec<usize> = (0..chains)
            .map(|j| argmax(num[j].iter().zip(&den[j]).map(|(&n, &d)| n - ratio * d)))
            .collect();
        let (n, d) = totals(&pick);
        if !ratio_better(n, d, bn, bd) {
            break;
        }
        best = pick;
        (bn, bd) = (n, d);
        ratio = bn / bd;
    }
    best
}

/// Per-chain RX beams maximizing
/// `||(W^RF)^H H_R V^RF||^2 / ||(W^RF)^H H_bb V^RF||^2`.
pub fn select_rx_beams(
    vc: &VirtualChannels,
    si_estimate: &CMatrix,
    v_rf: &AnalogBeamformer,
    codebook: &BeamCodebook,
    array: &ArrayConfig,
) -> Result<AnalogBeamformer> {
    if codebook.is_empty() || codebook.beam_len() != array.m_per_chain_rx {
        return Err(invalid("RX codebook does not match the per-chain RX array"));
    }
    if si_estimate.shape() != (array.m_rx, array.n_tx) || v_rf.antennas() != array.n_tx {
        return Err(invalid("SI estimate or TX beams do not match the array"));
    }
    let (num, den) = rx_scores(vc, si_estimate, v_rf, codebook, array);
    AnalogBeamformer::from_indices(codebook, &maximize_sum_ratio(&num, &den))
}

/// Analog taps cancel the first `N / M_RF` columns of the effective SI
/// channel; the digital stage removes the rest, so `C + D = -H~`.
pub fn design_cancellation(si_effective: &CMatrix, n_taps: usize) -> Result<(CMatrix, CMatrix)> {
    let (rows, cols) = si_effective.shape();
    if rows == 0 || n_taps % rows != 0 {
        return Err(invalid(format!("{n_taps} taps do not fill whole columns of {rows} RX chains")));
    }
    let k = n_taps / rows;
    if k > cols {
        return Err(invalid(format!("{n_taps} taps exceed {} available", rows * cols)));
    }
    let c = CMatrix::from_fn(rows, cols, |i, j| if j < k { -si_effective[(i, j)] } else { ZERO });
    let d = -(si_effective + &c);
    Ok((c, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    /// Power per mode, same order as the gains.
    pub powers: Vec<f64>,
    /// Water level `mu`; zero when no mode is active.
    pub level: f64,
}

/// Maximize `sum log2(1 + p_i g_i / noise)` subject to `sum p_i = total`.
/// Modes with zero gain get no power; with no usable mode nothing is spent.
pub fn water_filling(gains: &[f64], total_power: f64, noise_var: f64) -> Result<WaterFilling> {
    if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(invalid("mode gains must be finite and non-negative"));
    }
    if !(total_power >= 0.0) || !(noise_var > 0.0) {
        return Err(invalid("power must be non-negative and noise positive"));
    }
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    let mut powers = vec![0.0; gains.len()];
    if order.is_empty() || total_power == 0.0 {
        return Ok(WaterFilling { powers, level: 0.0 });
    }
    let floor = |i: usize| noise_var / gains[i];
    // largest active set whose weakest mode still sits below the water level
    let mut active = order.len();
    let mut level = 0.0;
    while active > 0 {
        let sum: f64 = order[..active].iter().map(|&i| floor(i)).sum();
        level = (total_power + sum) / active as f64;
        if level > floor(order[active - 1]) {
            break;
        }
        active -= 1;
    }
    for &i in &order[..active] {
        powers[i] = level - floor(i);
    }
    Ok(WaterFilling { powers, level })
}

/// Output of the null-space precoder search.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalDesign {
    /// `N_RF x d_b`
    pub v_bb: CMatrix,
    pub feasible: bool,
    /// Dimension of the SI subspace the accepted precoder lives in.
    pub alpha: usize,
    /// `||[(H~ + C) V^BB]_(j,:)||^2` per RX chain, watts.
    pub row_residuals: Vec<f64>,
}

fn row_powers(m: &CMatrix) -> Vec<f64> {
    m.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect()
}

/// Eigen-beamforming with water-filling on `h_eff` into at most `streams`
/// columns.
fn eigen_precoder(h_eff: &CMatrix, streams: usize, power: f64, noise_var: f64) -> Result<CMatrix> {
    let svd = SortedSvd::new(h_eff);
    let modes = streams.min(h_eff.ncols()).min(svd.values.len());
    let gains: Vec<f64> = svd.values[..modes].iter().map(|s| s * s).collect();
    let wf = water_filling(&gains, power, noise_var)?;
    let mut g = CMatrix::zeros(h_eff.ncols(), streams);
    for (i, p) in wf.powers.iter().enumerate() {
        if *p > 0.0 {
            g.set_column(i, &(svd.right.column(i) * Complex64::from(p.sqrt())));
        }
    }
    Ok(g)
}

/// Search the weakest-SI subspaces of `(H~ + C)`, from the full space down to
/// two dimensions, for a water-filled precoder that meets the per-chain SI
/// ceiling. If none does, the two-dimensional candidate is returned with its
/// power reduced until it meets the ceiling, flagged infeasible.
pub fn design_digital_precoder(
    si_analog_residual: &CMatrix,
    h_dl_effective: &CMatrix,
    streams: usize,
    config: &OptimizerConfig,
) -> Result<DigitalDesign> {
    let n_rf = si_analog_residual.ncols();
    if h_dl_effective.ncols() != n_rf || streams == 0 {
        return Err(invalid("precoder inputs are inconsistent"));
    }
    let b = SortedSvd::new(si_analog_residual).right;
    let lowest = n_rf.min(2);
    let mut last = None;
    for alpha in (lowest..=n_rf).rev() {
        let f = b.columns(n_rf - alpha, alpha).into_owned();
        let g = eigen_precoder(&(h_dl_effective * &f), streams, config.tx_power_w, config.noise_var_w)?;
        let v_bb = f * g;
        let rows = row_powers(&(si_analog_residual * &v_bb));
        if rows.iter().all(|&r| r <= config.si_threshold_w) {
            return Ok(DigitalDesign { v_bb, feasible: true, alpha, row_residuals: rows });
        }
        last = Some((alpha, v_bb, rows));
    }
    let (alpha, v_bb, rows) = last.expect("at least one subspace size is tried");
    let worst = rows.iter().cloned().fold(0.0, f64::max);
    let scale = (config.si_threshold_w / worst) * (1.0 - 1e-9);
    let v_bb = v_bb * Complex64::from(scale.sqrt());
    let row_residuals = rows.iter().map(|r| r * scale).collect();
    Ok(DigitalDesign { v_bb, feasible: false, alpha, row_residuals })
}

/// Everything the optimizer decided, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub set: BeamformerSet,
    pub feasible: bool,
    pub alpha: usize,
    pub tx_beams: Vec<usize>,
    pub rx_beams: Vec<usize>,
    /// Analog-stage residual SI per RX chain, watts.
    pub row_residuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct OptimizerDump {
    feasible: bool,
    alpha: usize,
    tx_beams: Vec<usize>,
    rx_beams: Vec<usize>,
    residual_si_dbm: Vec<f64>,
    radiated_power_dbm: f64,
}

impl Optimized {
    /// Beam indices, subspace size and residual SI as TOML.
    pub fn dump(&self) -> String {
        let d = OptimizerDump {
            feasible: self.feasible,
            alpha: self.alpha,
            tx_beams: self.tx_beams.clone(),
            rx_beams: self.rx_beams.clone(),
            residual_si_dbm: self.row_residuals.iter().map(|&w| watts_to_dbm(w)).collect(),
            radiated_power_dbm: watts_to_dbm(self.set.radiated_power()),
        };
        toml::to_string(&d).unwrap_or_default()
    }
}

fn beam_indices(bf: &AnalogBeamformer, codebook: &BeamCodebook) -> Vec<usize> {
    bf.per_chain_beams
        .iter()
        .map(|b| codebook.index_of(b, 1e-12).unwrap_or(usize::MAX))
        .collect()
}

/// `W_u`: the `d_b` dominant left singular vectors of the virtual DL channel.
pub fn ue_combiner(vc: &VirtualChannels, streams: usize) -> Result<CMatrix> {
    let h = &vc.h_dl_virtual;
    if h.nrows() < streams {
        return Err(invalid(format!("{} UE antennas cannot carry {streams} streams", h.nrows())));
    }
    // eigenvectors of H H^H stay orthonormal when H is rank deficient,
    // unlike the SVD's left factor
    let eig = HermitianEigen::new(&(h * h.adjoint()));
    Ok(eig.vectors.columns(0, streams).into_owned())
}

/// Full design for the next slot from the sensed DoAs.
pub fn optimize(
    doas: &[f64],
    dl_doas: &[f64],
    si_estimate: &CMatrix,
    array: &ArrayConfig,
    config: &OptimizerConfig,
) -> Result<Optimized> {
    if doas.is_empty() {
        return Err(invalid("no DoAs to optimize for"));
    }
    config.validate(array)?;
    let vc = VirtualChannels::new(doas, dl_doas, array);
    let w_ue = ue_combiner(&vc, array.streams)?;
    let v_rf = select_tx_beams(&vc, &config.tx_codebook, array)?;
    let w_rf = select_rx_beams(&vc, si_estimate, &v_rf, &config.rx_codebook, array)?;
    let si_eff = w_rf.assembled.adjoint() * si_estimate * &v_rf.assembled;
    let dl_eff = &vc.h_dl_virtual * &v_rf.assembled;
    let (c, d) = design_cancellation(&si_eff, config.n_taps)?;
    let design = design_digital_precoder(&(&si_eff + &c), &dl_eff, array.streams, config)?;
    let tx_beams = beam_indices(&v_rf, &config.tx_codebook);
    let rx_beams = beam_indices(&w_rf, &config.rx_codebook);
    Ok(Optimized {
        set: BeamformerSet {
            v_rf,
            v_bb: design.v_bb,
            w_rf,
            w_ue,
            c_analog: c,
            d_digital: d,
            tx_power_w: config.tx_power_w,
        },
        feasible: design.feasible,
        alpha: design.alpha,
        tx_beams,
        rx_beams,
        row_residuals: design.row_residuals,
    })
}

/// Result of checking a beamformer set against the design constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub row_residuals: Vec<f64>,
    pub radiated_power: f64,
    pub tx_in_codebook: bool,
    pub rx_in_codebook: bool,
    pub residual_ok: bool,
    pub power_ok: bool,
}

impl ConstraintReport {
    pub fn ok(&self) -> bool {
        self.residual_ok && self.power_ok && self.tx_in_codebook && self.rx_in_codebook
    }
}

/// Whether `m` is block diagonal with every block a codebook beam.
fn analog_in_codebook(m: &CMatrix, codebook: &BeamCodebook, chains: usize) -> bool {
    let per = codebook.beam_len();
    if m.shape() != (chains * per, chains) {
        return false;
    }
    (0..chains).all(|j| {
        let off_block_zero = (0..chains * per)
            .filter(|i| i / per != j)
            .all(|i| m[(i, j)] == ZERO);
        let block = CVector::from_fn(per, |i, _| m[(j * per + i, j)]);
        off_block_zero && codebook.index_of(&block, 1e-12).is_some()
    })
}

/// Re-derive the three design constraints from raw matrices with explicit
/// loops: per-chain analog residual `||[(W^H H V^RF + C) V^BB]_(j,:)||^2 <=
/// lambda`, radiated power `||V^RF V^BB||^2 <= P`, and codebook membership.
pub fn check_constraints(set: &BeamformerSet, si_estimate: &CMatrix, config: &OptimizerConfig) -> ConstraintReport {
    let w = &set.w_rf.assembled;
    let v = &set.v_rf.assembled;
    let (m_rx, m_rf) = w.shape();
    let (n_tx, n_rf) = v.shape();
    let streams = set.v_bb.ncols();
    let shapes_ok = si_estimate.shape() == (m_rx, n_tx)
        && set.c_analog.shape() == (m_rf, n_rf)
        && set.v_bb.nrows() == n_rf;

    let mut row_residuals = vec![f64::INFINITY; m_rf];
    if shapes_ok {
        for (j, out) in row_residuals.iter_mut().enumerate() {
            let mut total = 0.0;
            for s in 0..streams {
                let mut acc = ZERO;
                for i in 0..n_rf {
                    let mut h = ZERO;
                    for a in 0..m_rx {
                        for b in 0..n_tx {
                            h += w[(a, j)].conj() * si_estimate[(a, b)] * v[(b, i)];
                        }
                    }
                    acc += (h + set.c_analog[(j, i)]) * set.v_bb[(i, s)];
                }
                total += acc.norm_sqr();
            }
            *out = total;
        }
    }
    let mut radiated_power = 0.0;
    if v.ncols() == set.v_bb.nrows() {
        for a in 0..n_tx {
            for s in 0..streams {
                let mut acc = ZERO;
                for i in 0..n_rf {
                    acc += v[(a, i)] * set.v_bb[(i, s)];
                }
                radiated_power += acc.norm_sqr();
            }
        }
    } else {
        radiated_power = f64::INFINITY;
    }
    ConstraintReport {
        residual_ok: row_residuals.iter().all(|&r| r <= config.si_threshold_w),
        power_ok: radiated_power <= config.tx_power_w * (1.0 + crate::transceiver::POWER_TOLERANCE),
        tx_in_codebook: analog_in_codebook(v, &config.tx_codebook, n_rf),
        rx_in_codebook: analog_in_codebook(w, &config.rx_codebook, m_rf),
        row_residuals,
        radiated_power,
    }
}

/// Analog beam layout for the first slot, before any DoA is known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "beams")]
pub enum BootstrapLayout {
    /// Beam 0 on every chain.
    Broadside,
    /// Chains spread over the field of view: even chains step through the
    /// codebook in quarter turns, odd chains sit between them, so the chains
    /// point in distinct directions and the sub-array grating lobes differ.
    #[default]
    Staggered,
    /// Explicit beam index per chain, shared by TX and RX.
    Explicit(Vec<usize>),
}

impl BootstrapLayout {
    pub fn indices(&self, chains: usize, codebook_len: usize) -> Result<Vec<usize>> {
        match self {
            Self::Broadside => Ok(vec![0; chains]),
            Self::Staggered => {
                let step = codebook_len.div_ceil(chains).max(1);
                // odd offset keeps the two halves on opposite grating parities
                Ok((0..chains)
                    .map(|j| ((j / 2) * 2 * step + (j % 2) * (step | 1)) % codebook_len)
                    .collect())
            }
            Self::Explicit(v) => {
                if v.len() != chains || v.iter().any(|&b| b >= codebook_len) {
                    Err(invalid("explicit bootstrap beams do not match chains and codebook"))
                } else {
                    Ok(v.clone())
                }
            }
        }
    }
}

/// First-slot beamformers: a fixed analog layout, each TX chain carrying
/// stream `i mod d_b` at equal power, UE combiner `I`, and full digital SI
/// cancellation.
pub fn bootstrap_beamformers(
    array: &ArrayConfig,
    config: &OptimizerConfig,
    layout: &BootstrapLayout,
    si_estimate: &CMatrix,
) -> Result<BeamformerSet> {
    let tx_idx = layout.indices(array.n_rf_tx, config.tx_codebook.len())?;
    let rx_idx = layout.indices(array.m_rf_rx, config.rx_codebook.len())?;
    let v_rf = AnalogBeamformer::from_indices(&config.tx_codebook, &tx_idx)?;
    let w_rf = AnalogBeamformer::from_indices(&config.rx_codebook, &rx_idx)?;
    let amp = (config.tx_power_w / array.n_rf_tx as f64).sqrt();
    let v_bb = CMatrix::from_fn(array.n_rf_tx, array.streams, |i, s| {
        if i % array.streams == s {
            crate::linalg::ONE * amp
        } else {
            ZERO
        }
    });
    let si_eff = w_rf.assembled.adjoint() * si_estimate * &v_rf.assembled;
    Ok(BeamformerSet {
        v_rf,
        v_bb,
        w_rf,
        w_ue: CMatrix::identity(array.ue_antennas, array.streams),
        c_analog: CMatrix::zeros(array.m_rf_rx, array.n_rf_tx),
        d_digital: -si_eff,
        tx_power_w: config.tx_power_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::dft_codebook;
    use crate::channels::rician_si_channel;
    use crate::linalg::cis;
    use crate::rng::{complex_gaussian, stream};
    use crate::transceiver::dl_rate_with;
    use proptest::prelude::*;

    fn small() -> ArrayConfig {
        ArrayConfig::new(2, 4, 2, 4, 2, 2, 28e9).unwrap()
    }

    fn config(a: &ArrayConfig, taps: usize, power: f64, bits: u32) -> OptimizerConfig {
        OptimizerConfig {
            n_taps: taps,
            si_threshold_w: 1e-6,
            tx_power_w: power,
            noise_var_w: 1e-12,
            tx_codebook: dft_codebook(bits, a.n_per_chain_tx).unwrap(),
            rx_codebook: dft_codebook(bits, a.m_per_chain_rx).unwrap(),
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = stream(seed, &[42]);
        CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut rng, 1.0))
    }

    fn all_tuples(chains: usize, beams: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..chains {
            out = out
                .into_iter()
                .flat_map(|t| {
                    (0..beams).map(move |b| {
                        let mut t = t.clone();
                        t.push(b);
                        t
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn ue_combiner_orthonormal_with_fewer_paths_than_streams() {
        let a = ArrayConfig::new(4, 4, 4, 4, 4, 4, 28e9).unwrap();
        for dl in [vec![], vec![0.2], vec![0.2, -0.5]] {
            let vc = VirtualChannels::new(&[0.1, 0.3, 0.2], &dl, &a);
            let w = ue_combiner(&vc, 4).unwrap();
            let err = fro2(&(w.adjoint() * &w - CMatrix::identity(4, 4)));
            assert!(err < 1e-20, "paths {}: {err}", dl.len());
        }
    }

    #[test]
    fn tx_search_matches_brute_force() {
        let a = small();
        let cb = dft_codebook(3, 4).unwrap();
        for seed in 0..20u64 {
            let doas: Vec<f64> = (0..3).map(|k| -1.2 + 0.37 * (seed as f64 + 1.7 * k as f64) % 2.4).collect();
            let vc = VirtualChannels::new(&doas, &[], &a);
            let chosen = select_tx_beams(&vc, &cb, &a).unwrap();
            let score = |t: &[usize]| fro2(&(&vc.h_radar * AnalogBeamformer::from_indices(&cb, t).unwrap().assembled));
            let best = all_tuples(2, 8)
                .into_iter()
                .fold((vec![], f64::NEG_INFINITY), |acc, t| {
                    let s = score(&t);
                    if s > acc.1 {
                        (t, s)
                    } else {
                        acc
                    }
                });
            assert_eq!(beam_indices(&chosen, &cb), best.0);
        }
    }

    #[test]
    fn tx_search_broadside_and_zero_channel() {
        let a = ArrayConfig::reference();
        let cb = dft_codebook(5, 16).unwrap();
        let vc = VirtualChannels::new(&[0.0], &[], &a);
        assert_eq!(beam_indices(&select_tx_beams(&vc, &cb, &a).unwrap(), &cb), vec![0; 8]);
        let zero = VirtualChannels {
            h_radar: CMatrix::zeros(a.m_rx, a.n_tx),
            h_dl_virtual: CMatrix::zeros(a.ue_antennas, a.n_tx),
        };
        assert_eq!(beam_indices(&select_tx_beams(&zero, &cb, &a).unwrap(), &cb), vec![0; 8]);
    }

    #[test]
    fn tx_search_dominates_random_beams() {
        let a = ArrayConfig::reference();
        let cb = dft_codebook(5, 16).unwrap();
        let vc = VirtualChannels::new(&[0.3, -0.7, 1.1], &[], &a);
        let chosen = fro2(&(&vc.h_radar * select_tx_beams(&vc, &cb, &a).unwrap().assembled));
        let mut rng = stream(8, &[8]);
        use rand::Rng;
        for _ in 0..100 {
            let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..32)).collect();
            let s = fro2(&(&vc.h_radar * AnalogBeamformer::from_indices(&cb, &idx).unwrap().assembled));
            assert!(chosen >= s);
        }
    }

    #[test]
    fn rx_search_matches_brute_force() {
        let a = small();
        let cb = dft_codebook(3, 4).unwrap();
        for seed in 0..40u64 {
            let doas = [0.9 * ((seed as f64) * 0.61).sin(), -0.4 + 0.1 * seed as f64 % 1.0];
            let vc = VirtualChannels::new(&doas, &[], &a);
            let si = random_matrix(a.m_rx, a.n_tx, seed);
            let v = AnalogBeamformer::from_indices(&cb, &[seed as usize % 8, (seed as usize * 3) % 8]).unwrap();
            let chosen = select_rx_beams(&vc, &si, &v, &cb, &a).unwrap();
            let ratio = |w: &AnalogBeamformer| {
                fro2(&(w.assembled.adjoint() * &vc.h_radar * &v.assembled))
                    / fro2(&(w.assembled.adjoint() * &si * &v.assembled))
            };
            let best = all_tuples(2, 8)
                .into_iter()
                .map(|t| ratio(&AnalogBeamformer::from_indices(&cb, &t).unwrap()))
                .fold(f64::NEG_INFINITY, f64::max);
            let got = ratio(&chosen);
            assert!((got - best).abs() <= 1e-12 * best, "seed {seed}: {got} vs {best}");
        }
    }

    #[test]
    fn rx_search_degenerate_cases() {
        let a = small();
        let cb = dft_codebook(3, 4).unwrap();
        let vc = VirtualChannels::new(&[0.2, -0.5], &[], &a);
        let v = AnalogBeamformer::from_indices(&cb, &[1, 2]).unwrap();
        // identical numerator and denominator channels: ratio 1 everywhere
        let w = select_rx_beams(&vc, &vc.h_radar.clone(), &v, &cb, &a).unwrap();
        assert_eq!(beam_indices(&w, &cb), vec![0, 0]);
        // no SI: plain numerator maximization
        let zero = CMatrix::zeros(a.m_rx, a.n_tx);
        let w = select_rx_beams(&vc, &zero, &v, &cb, &a).unwrap();
        let hv = &vc.h_radar * &v.assembled;
        let expect: Vec<usize> = (0..2)
            .map(|j| argmax(cb.beams.iter().map(|b| (hv.rows(j * 4, 4).adjoint() * b).norm_squared())))
            .collect();
        assert_eq!(beam_indices(&w, &cb), expect);
    }

    #[test]
    fn cancellation_tap_slicing() {
        let h = random_matrix(8, 8, 1);
        let (c, d) = design_cancellation(&h, 64).unwrap();
        assert!((&c + &h).norm() == 0.0 && d.norm() == 0.0);
        let (c, d) = design_cancellation(&h, 0).unwrap();
        assert!(c.norm() == 0.0 && (&d + &h).norm() == 0.0);
        let (c, d) = design_cancellation(&h, 16).unwrap();
        for j in 0..8 {
            for i in 0..8 {
                if j < 2 {
                    assert_eq!(c[(i, j)], -h[(i, j)]);
                } else {
                    assert_eq!(c[(i, j)], ZERO);
                }
            }
        }
        assert!((&c + &d + &h).norm() < 1e-15);
        assert!(design_cancellation(&h, 12).is_err());
        assert!(design_cancellation(&h, 72).is_err());
    }

    fn kkt_residual(gains: &[f64], wf: &WaterFilling, total: f64, noise: f64) -> f64 {
        let mut worst = (wf.powers.iter().sum::<f64>() - total).abs();
        for (g, p) in gains.iter().zip(&wf.powers) {
            if *p > 0.0 {
                worst = worst.max((p + noise / g - wf.level).abs());
            } else if *g > 0.0 {
                // inactive modes sit at or above the water level
                worst = worst.max((wf.level - noise / g).max(0.0));
            }
        }
        worst
    }

    proptest! {
        #[test]
        fn water_filling_kkt(gains in proptest::collection::vec(0.0f64..10.0, 1..8), total in 0.01f64..5.0, noise in 0.01f64..2.0) {
            prop_assume!(gains.iter().any(|&g| g > 0.0));
            let wf = water_filling(&gains, total, noise).unwrap();
            prop_assert!(kkt_residual(&gains, &wf, total, noise) < 1e-9);
            prop_assert!(wf.powers.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn rx_search_optimal_on_random_instances(seed in any::<u64>()) {
            let a = small();
            let cb = dft_codebook(3, 4).unwrap();
            let mut rng = stream(seed, &[1]);
            use rand::Rng;
            let doas: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
            let vc = VirtualChannels::new(&doas, &[], &a);
            let si = random_matrix(a.m_rx, a.n_tx, seed);
            let v = AnalogBeamformer::from_indices(&cb, &[rng.random_range(0..8), rng.random_range(0..8)]).unwrap();
            let ratio = |w: &AnalogBeamformer| {
                fro2(&(w.assembled.adjoint() * &vc.h_radar * &v.assembled))
                    / fro2(&(w.assembled.adjoint() * &si * &v.assembled))
            };
            let got = ratio(&select_rx_beams(&vc, &si, &v, &cb, &a).unwrap());
            let best = all_tuples(2, 8)
                .into_iter()
                .map(|t| ratio(&AnalogBeamformer::from_indices(&cb, &t).unwrap()))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((got - best).abs() <= 1e-12 * best);
        }
    }

    #[test]
    fn water_filling_single_mode() {
        let wf = water_filling(&[0.0, 3.0, 0.0], 2.0, 0.5).unwrap();
        assert!(wf.powers[0] == 0.0 && wf.powers[2] == 0.0 && (wf.powers[1] - 2.0).abs() < 1e-12);
        let rate: f64 = (1.0 + 3.0 * 2.0 / 0.5f64).log2();
        let got: f64 = wf.powers.iter().zip([0.0, 3.0, 0.0]).map(|(p, g)| (1.0 + p * g / 0.5).log2()).sum();
        assert!((rate - got).abs() < 1e-12);
        assert_eq!(water_filling(&[0.0, 0.0], 1.0, 1.0).unwrap().powers, vec![0.0, 0.0]);
    }

    #[test]
    fn precoder_unconstrained_without_si() {
        let a = small();
        let cfg = config(&a, 0, 1.0, 3);
        let h = random_matrix(2, 2, 3);
        let design = design_digital_precoder(&CMatrix::zeros(2, 2), &h, 2, &cfg).unwrap();
        assert!(design.feasible);
        assert_eq!(design.alpha, 2);
        assert!((fro2(&design.v_bb) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precoder_infeasible_with_zero_threshold() {
        let a = ArrayConfig::new(4, 2, 4, 2, 2, 2, 28e9).unwrap();
        let mut cfg = config(&a, 0, 1.0, 2);
        cfg.si_threshold_w = 0.0;
        let r = random_matrix(4, 4, 7);
        let design = design_digital_precoder(&r, &random_matrix(2, 4, 8), 2, &cfg).unwrap();
        assert!(!design.feasible);
        assert_eq!(design.alpha, 2);
    }

    #[test]
    fn precoder_backs_off_power_when_infeasible() {
        let a = ArrayConfig::new(4, 2, 4, 2, 2, 2, 28e9).unwrap();
        let mut cfg = config(&a, 0, 1.0, 2);
        cfg.si_threshold_w = 1e-6;
        let r = random_matrix(4, 4, 9);
        let design = design_digital_precoder(&r, &random_matrix(2, 4, 10), 2, &cfg).unwrap();
        assert!(!design.feasible);
        let rows = row_powers(&(&r * &design.v_bb));
        assert!(rows.iter().all(|&x| x <= 1e-6));
        assert!(fro2(&design.v_bb) < 1.0);
    }

    #[test]
    fn subspace_selection_is_weakest() {
        // ||R F||_F over the last alpha columns of B is minimal among all alpha-subsets
        let r = random_matrix(4, 4, 11);
        let b = SortedSvd::new(&r).right;
        for alpha in 1..=4 {
            let last = fro2(&(&r * b.columns(4 - alpha, alpha)));
            for mask in 0u32..16 {
                if mask.count_ones() as usize != alpha {
                    continue;
                }
                let cols: Vec<usize> = (0..4).filter(|i| mask & (1 << i) != 0).collect();
                let f = CMatrix::from_fn(4, alpha, |i, k| b[(i, cols[k])]);
                assert!(last <= fro2(&(&r * f)) * (1.0 + 1e-12) + 1e-15);
            }
            let f = b.columns(4 - alpha, alpha);
            assert!((f.adjoint() * f - CMatrix::identity(alpha, alpha)).norm() < 1e-12);
        }
    }

    #[test]
    fn snr_objectives() {
        let a = small();
        let cfg = config(&a, 0, 1.0, 3);
        let si = CMatrix::zeros(a.m_rx, a.n_tx);
        let mut set = bootstrap_beamformers(&a, &cfg, &BootstrapLayout::Broadside, &si).unwrap();
        let vc = VirtualChannels::new(&[0.1], &[0.1], &a);
        let h_eff = set.effective_si(&si);
        let snr = radar_snr(&set, &vc, &h_eff, 1e-3).unwrap();
        // no SI: numerator over ||W||^2 sigma^2
        let num = fro2(&(set.w_rf.assembled.adjoint() * &vc.h_radar * set.precoder()));
        assert!((snr - num / (2.0 * 1e-3)).abs() < 1e-12 * snr);
        let d1 = dl_snr(&set, &vc, 1e-3).unwrap();
        set.w_ue *= crate::linalg::cis(0.4) * 3.0;
        assert!((dl_snr(&set, &vc, 1e-3).unwrap() - d1).abs() < 1e-12 * d1);
        set.v_bb = CMatrix::zeros(2, 2);
        assert_eq!(radar_snr(&set, &vc, &h_eff, 1e-3).unwrap(), 0.0);
        assert_eq!(dl_snr(&set, &vc, 1e-3).unwrap(), 0.0);
        assert!(matches!(radar_snr(&set, &vc, &h_eff, 0.0), Err(Error::DegenerateNoise)));
        set.w_ue = CMatrix::zeros(2, 2);
        assert!(dl_snr(&set, &vc, 1e-3).is_err());
    }

    #[test]
    fn dl_snr_aligned_rank_one() {
        // one path, beams on the path: |a_u^H a_u|^2 |a_N^H V^RF g|^2 / sigma^2
        let a = ArrayConfig::new(1, 8, 1, 8, 1, 1, 28e9).unwrap();
        let cfg = config(&a, 0, 2.0, 3);
        let cb = &cfg.tx_codebook;
        let v_rf = AnalogBeamformer::from_indices(cb, &[0]).unwrap();
        let set = BeamformerSet {
            v_rf: v_rf.clone(),
            v_bb: CMatrix::from_element(1, 1, crate::linalg::ONE * 2f64.sqrt()),
            w_rf: v_rf,
            w_ue: CMatrix::identity(1, 1),
            c_analog: CMatrix::zeros(1, 1),
            d_digital: CMatrix::zeros(1, 1),
            tx_power_w: 2.0,
        };
        let vc = VirtualChannels::new(&[], &[0.0], &a);
        // broadside beam on an 8-element array: |a^H v|^2 = 1
        assert!((dl_snr(&set, &vc, 0.5).unwrap() - 2.0 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_path_design_reaches_beamformed_rate() {
        let a = ArrayConfig::new(4, 8, 4, 8, 2, 2, 28e9).unwrap();
        let cfg = config(&a, 0, 1.0, 5);
        let theta = 0.25;
        let zero = CMatrix::zeros(a.m_rx, a.n_tx);
        let out = optimize(&[theta], &[theta], &zero, &a, &cfg).unwrap();
        assert!(out.feasible);
        // every TX chain takes the codebook beam closest to the target
        let beam = out.tx_beams[0];
        let target = a.tx_steering(theta).elements;
        let gain = |b: usize| (cfg.tx_codebook.beams[b].adjoint() * target.rows(0, 8))[(0, 0)].norm();
        assert!((0..32).all(|b| gain(beam) >= gain(b)));
        assert!(out.rx_beams.iter().all(|&b| b == beam));
        // rate on a unit-gain path equals log2(1 + P ||a_u||^2 ||V^RF^H a_N||^2 / sigma^2)
        let h = a.ue_steering(theta).elements * target.adjoint();
        let rate = dl_rate_with(&h, &out.set.precoder(), &out.set.w_ue, cfg.noise_var_w).unwrap();
        let g = (out.set.v_rf.assembled.adjoint() * &target).norm_squared();
        let expect = (1.0 + cfg.tx_power_w * g / cfg.noise_var_w).log2();
        assert!((rate - expect).abs() < 1e-6, "{rate} vs {expect}");
    }

    #[test]
    fn full_taps_match_si_free_rate() {
        let a = ArrayConfig::new(4, 8, 4, 8, 2, 2, 28e9).unwrap();
        let full = config(&a, 16, 1.0, 5);
        let si = rician_si_channel(&a, 35.0, 40.0, 3);
        let doas = [0.1, -0.4, 0.7];
        let dl = [0.1, 0.7];
        let with_si = optimize(&doas, &dl, &si, &a, &full).unwrap();
        let without = optimize(&doas, &dl, &CMatrix::zeros(a.m_rx, a.n_tx), &a, &full).unwrap();
        assert!(with_si.feasible && with_si.alpha == 4);
        let h = VirtualChannels::new(&doas, &dl, &a).h_dl_virtual * (cis(0.3) * 1e-5);
        let r1 = dl_rate_with(&h, &with_si.set.precoder(), &with_si.set.w_ue, full.noise_var_w).unwrap();
        let r2 = dl_rate_with(&h, &without.set.precoder(), &without.set.w_ue, full.noise_var_w).unwrap();
        assert!((r1 - r2).abs() < 1e-9, "{r1} vs {r2}");
    }

    #[test]
    fn optimized_sets_pass_checker() {
        let a = ArrayConfig::reference();
        for (taps, seed) in [(8usize, 1u64), (16, 2), (64, 3)] {
            let cfg = config(&a, taps, 1.0, 5);
            let si = rician_si_channel(&a, 35.0, 40.0, seed);
            let out = optimize(&[0.17, 0.21, 0.05, -0.9, 1.2, 0.6], &[0.05, 1.2], &si, &a, &cfg).unwrap();
            let report = check_constraints(&out.set, &si, &cfg);
            assert!(report.power_ok && report.tx_in_codebook && report.rx_in_codebook);
            // the checker and the optimizer agree on the residual
            for (x, y) in report.row_residuals.iter().zip(&out.row_residuals) {
                assert!((x - y).abs() <= 1e-9 * cfg.si_threshold_w + 1e-9 * x.abs());
            }
            assert_eq!(report.ok(), report.residual_ok);
            if out.feasible {
                assert!(report.ok());
            }
            assert!(!out.dump().is_empty());
        }
    }

    #[test]
    fn checker_catches_violations() {
        let a = small();
        let cfg = config(&a, 0, 1.0, 3);
        let si = rician_si_channel(&a, 35.0, 40.0, 1);
        let mut set = bootstrap_beamformers(&a, &cfg, &BootstrapLayout::Broadside, &si).unwrap();
        set.v_bb *= crate::linalg::ONE * 2.0;
        let r = check_constraints(&set, &si, &cfg);
        assert!(!r.power_ok && !r.residual_ok);
        let mut off = set.clone();
        off.v_rf.assembled[(0, 0)] *= crate::linalg::ONE * 1.5;
        assert!(!check_constraints(&off, &si, &cfg).tx_in_codebook);
        let mut leak = set;
        leak.w_rf.assembled[(5, 0)] = crate::linalg::ONE * 1e-3;
        assert!(!check_constraints(&leak, &si, &cfg).rx_in_codebook);
    }

    #[test]
    fn rx_search_beats_broadside_without_si() {
        // with no SI and orthogonal-column V^BB, the radar SNR objective
        // reduces to the RX search numerator up to a constant
        let a = ArrayConfig::reference();
        let cfg = config(&a, 0, 1.0, 5);
        let zero = CMatrix::zeros(a.m_rx, a.n_tx);
        for seed in 0..20u64 {
            let mut rng = stream(seed, &[3]);
            use rand::Rng;
            let doas: Vec<f64> = (0..4).map(|_| rng.random_range(-1.4..1.4)).collect();
            let vc = VirtualChannels::new(&doas, &[], &a);
            let mut set = bootstrap_beamformers(&a, &cfg, &BootstrapLayout::Broadside, &zero).unwrap();
            set.v_bb = CMatrix::identity(8, 8).columns(0, 4).into_owned() * Complex64::from(0.5);
            let base = radar_snr(&set, &vc, &CMatrix::zeros(8, 8), 1e-12).unwrap();
            set.w_rf = select_rx_beams(&vc, &zero, &set.v_rf, &cfg.rx_codebook, &a).unwrap();
            let tuned = radar_snr(&set, &vc, &CMatrix::zeros(8, 8), 1e-12).unwrap();
            assert!(tuned >= base * (1.0 - 1e-12));
        }
    }

    #[test]
    fn bootstrap_layouts() {
        assert_eq!(BootstrapLayout::Staggered.indices(8, 32).unwrap(), vec![0, 5, 8, 13, 16, 21, 24, 29]);
        assert_eq!(BootstrapLayout::Broadside.indices(3, 32).unwrap(), vec![0, 0, 0]);
        assert!(BootstrapLayout::Explicit(vec![1, 40]).indices(2, 32).is_err());
        let a = small();
        let cfg = config(&a, 0, 2.0, 3);
        let si = rician_si_channel(&a, 35.0, 40.0, 1);
        let set = bootstrap_beamformers(&a, &cfg, &BootstrapLayout::Staggered, &si).unwrap();
        assert!((set.radiated_power() - 2.0).abs() < 1e-12);
        assert!(set.residual_si_map(&si).norm() < 1e-15);
    }
}
