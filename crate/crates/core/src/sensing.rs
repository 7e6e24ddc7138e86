//! Radar parameter estimation from the combined receive grid: sample
//! covariance, beamspace MUSIC for the DoAs, and a per-DoA quotient /
//! 2-D DFT likelihood search for delay and Doppler.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::array::{AnalogBeamformer, ArrayConfig};
use crate::channels::RadarTarget;
use crate::error::{invalid, Error, Result};
use crate::linalg::{cis, hermitian_defect, CMatrix, CVector, HermitianEigen, ZERO};
use crate::ofdm::{OfdmGrid, OfdmParams};
use crate::transceiver::TxSignal;
use crate::units::{delay_to_range, doppler_to_velocity};

/// Relative tolerance on `||R - R^H|| / ||R||` before a covariance is rejected.
pub const HERMITIAN_TOLERANCE: f64 = 1e-8;

/// Reference entries below this fraction of the cell maximum are skipped.
pub const QUOTIENT_GUARD: f64 = 1e-9;

/// `R = (1/PQ) sum_(p,q) y y^H`.
pub fn sample_covariance(y_grid: &OfdmGrid) -> Result<CMatrix> {
    let dim = y_grid.space_dim();
    let cells = y_grid.cells();
    if cells == 0 || dim == 0 {
        return Err(invalid("covariance of an empty grid"));
    }
    if cells < dim {
        return Err(invalid(format!("{cells} snapshots cannot estimate a {dim}x{dim} covariance")));
    }
    let mut r = CMatrix::zeros(dim, dim);
    for y in y_grid.iter_cells() {
        for i in 0..dim {
            let yi = y[i];
            for j in 0..=i {
                r[(i, j)] += yi * y[j].conj();
            }
        }
    }
    let inv = 1.0 / cells as f64;
    for i in 0..dim {
        for j in 0..=i {
            let v = r[(i, j)] * inv;
            r[(i, j)] = v;
            r[(j, i)] = v.conj();
        }
        r[(i, i)].im = 0.0;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MusicOptions {
    /// Radians.
    pub grid_step: f64,
    /// Divide the pseudo-spectrum by `||W^H a||^2`, so that only the
    /// direction of the beamspace response matters. Without it, the
    /// pseudo-spectrum diverges wherever the combiner has a pattern null.
    pub normalize: bool,
}

impl Default for MusicOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.1_f64.to_radians(),
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicSpectrum {
    /// Radians, ascending over [-pi/2, pi/2].
    pub grid_angles: Vec<f64>,
    pub values: Vec<f64>,
    /// `(angle, value)`, strongest first.
    pub peaks: Vec<(f64, f64)>,
}

impl MusicSpectrum {
    pub fn peak_angles(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.0).collect()
    }

    /// CSV with header `angle_deg,value`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "angle_deg,value")?;
        for (a, v) in self.grid_angles.iter().zip(&self.values) {
            writeln!(out, "{:.4},{:.12e}", a.to_degrees(), v)?;
        }
        Ok(())
    }
}

/// Eigendecomposition of `cov` and its noise subspace (the eigenvectors
/// after the `k_targets` largest).
pub fn noise_subspace(cov: &CMatrix, k_targets: usize) -> Result<(HermitianEigen, CMatrix)> {
    let dims = cov.nrows();
    if cov.ncols() != dims || dims == 0 {
        return Err(invalid("covariance must be square and non-empty"));
    }
    if cov.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid("covariance has non-finite entries"));
    }
    if hermitian_defect(cov) > HERMITIAN_TOLERANCE {
        return Err(invalid("covariance is not Hermitian"));
    }
    if k_targets >= dims {
        return Err(Error::SubspaceExhausted { targets: k_targets, dims });
    }
    let eig = HermitianEigen::new(cov);
    let un = eig.vectors.columns(k_targets, dims - k_targets).into_owned();
    Ok((eig, un))
}

/// Beamspace MUSIC over [-90 deg, 90 deg].
pub fn music_spectrum(
    cov: &CMatrix,
    w_rf: &AnalogBeamformer,
    array: &ArrayConfig,
    k_targets: usize,
    opts: &MusicOptions,
) -> Result<MusicSpectrum> {
    if cov.nrows() != w_rf.chains() {
        return Err(invalid(format!(
            "{}x{} covariance for a combiner with {} chains",
            cov.nrows(),
            cov.ncols(),
            w_rf.chains()
        )));
    }
    if w_rf.antennas() != array.m_rx {
        return Err(invalid("combiner does not match the RX array"));
    }
    if !(opts.grid_step > 0.0) || opts.grid_step > PI / 2.0 {
        return Err(invalid("grid step must lie in (0, pi/2]"));
    }
    let (_, un) = noise_subspace(cov, k_targets)?;
    let wh = w_rf.assembled.adjoint();
    let unh = un.adjoint();

    let steps = (PI / opts.grid_step).round() as usize;
    let grid_angles: Vec<f64> = (0..=steps).map(|i| -PI / 2.0 + PI * i as f64 / steps as f64).collect();
    let values: Vec<f64> = grid_angles
        .iter()
        .map(|&th| {
            let b = &wh * array.rx_steering(th).elements;
            let den = (&unh * &b).norm_squared();
            let num = if opts.normalize { b.norm_squared() } else { 1.0 };
            if num == 0.0 {
                0.0
            } else {
                num / den.max(1e-300)
            }
        })
        .collect();
    let peaks = pick_peaks(&grid_angles, &values, k_targets);
    Ok(MusicSpectrum { grid_angles, values, peaks })
}

/// The `k` largest local maxima, refined by a parabola through the
/// log-spectrum at each peak and its two neighbours.
fn pick_peaks(angles: &[f64], values: &[f64], k: usize) -> Vec<(f64, f64)> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] > values[i - 1];
            let right = i + 1 == n || values[i] >= values[i + 1];
            left && right
        })
        .collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter()
        .map(|i| {
            if i == 0 || i + 1 == n || values[i - 1] <= 0.0 || values[i + 1] <= 0.0 {
                return (angles[i], values[i]);
            }
            let (l, c, r) = (values[i - 1].ln(), values[i].ln(), values[i + 1].ln());
            let curv = l - 2.0 * c + r;
            if !(curv < 0.0) {
                return (angles[i], values[i]);
            }
            let delta = (0.5 * (l - r) / curv).clamp(-0.5, 0.5);
            let step = angles[i + 1] - angles[i];
            let peak = c - 0.25 * (l - r) * delta;
            (angles[i] + delta * step, peak.exp())
        })
        .collect()
}

/// How the likelihood map is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodMethod {
    /// Literal double sum, `O(P^2 Q^2)`; for validation on small grids.
    Direct,
    #[default]
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DelayDopplerOptions {
    pub method: LikelihoodMethod,
    /// Interpolate between bins around the likelihood peak.
    pub refine: bool,
}

/// One delay/Doppler estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDoppler {
    /// Seconds, in `[0, 1/df)`.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
    /// Peak delay index `n*`.
    pub delay_index: usize,
    /// Peak Doppler index `m*`, in `[-Q/2, Q/2)`.
    pub doppler_index: i64,
    /// `|A(n*, m*)|^2`.
    pub peak_power: f64,
}

/// 2-D likelihood map; entry `(n, m)` lives at `n * Q + (m - m_min)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMap {
    pub subcarriers: usize,
    pub symbols: usize,
    pub values: Vec<Complex64>,
}

impl LikelihoodMap {
    /// Smallest Doppler index, `-floor(Q/2)`.
    pub fn doppler_min(&self) -> i64 {
        -((self.symbols / 2) as i64)
    }

    pub fn get(&self, n: usize, m: i64) -> Complex64 {
        let col = (m - self.doppler_min()) as usize;
        self.values[n * self.symbols + col]
    }

    /// Index of the largest `|A|^2`; ties go to the first in storage order.
    pub fn argmax(&self) -> (usize, i64, f64) {
        let mut best = (0, 0.0);
        for (i, z) in self.values.iter().enumerate() {
            let p = z.norm_sqr();
            if p > best.1 {
                best = (i, p);
            }
        }
        let n = best.0 / self.symbols;
        let m = (best.0 % self.symbols) as i64 + self.doppler_min();
        (n, m, best.1)
    }
}

/// `A(n, m) = sum_p (sum_q z(p,q) e^{-j2pi qm/Q}) e^{+j2pi pn/P}` with
/// `z` stored symbol-major (`z[q * P + p]`), as in [`OfdmGrid`].
pub fn likelihood_map(z: &[Complex64], subcarriers: usize, symbols: usize, method: LikelihoodMethod) -> Result<LikelihoodMap> {
    let (np, nq) = (subcarriers, symbols);
    if np == 0 || nq == 0 || z.len() != np * nq {
        return Err(invalid("quotient grid does not match P x Q"));
    }
    let m_min = -((nq / 2) as i64);
    let mut values = vec![ZERO; np * nq];
    match method {
        LikelihoodMethod::Direct => {
            for n in 0..np {
                for (col, m) in (m_min..m_min + nq as i64).enumerate() {
                    let mut acc = ZERO;
                    for p in 0..np {
                        let mut inner = ZERO;
                        for q in 0..nq {
                            let k = (q as i64 * m).rem_euclid(nq as i64) as f64;
                            inner += z[q * np + p] * cis(-2.0 * PI * k / nq as f64);
                        }
                        let k = ((p * n) % np) as f64;
                        acc += inner * cis(2.0 * PI * k / np as f64);
                    }
                    values[n * nq + col] = acc;
                }
            }
        }
        LikelihoodMethod::Fft => {
            let mut planner = FftPlanner::<f64>::new();
            let fwd = planner.plan_fft_forward(nq);
            let inv = planner.plan_fft_inverse(np);
            // rows[p][k]: DFT over symbols
            let mut rows = vec![ZERO; np * nq];
            for p in 0..np {
                let row = &mut rows[p * nq..(p + 1) * nq];
                for q in 0..nq {
                    row[q] = z[q * np + p];
                }
                fwd.process(row);
            }
            let mut col = vec![ZERO; np];
            for (c, m) in (m_min..m_min + nq as i64).enumerate() {
                let k = m.rem_euclid(nq as i64) as usize;
                for p in 0..np {
                    col[p] = rows[p * nq + k];
                }
                inv.process(&mut col);
                for n in 0..np {
                    values[n * nq + c] = col[n];
                }
            }
        }
    }
    Ok(LikelihoodMap { subcarriers: np, symbols: nq, values })
}

/// Quotient `z(p,q) = (1/|I|) sum_(i in I) [W y]_i / [g]_i` with reference
/// `g = a_M(doa) a_N(doa)^H x(p,q)`. `I` holds the antennas whose reference
/// clears [`QUOTIENT_GUARD`]; cells with a vanishing reference give zero.
pub fn quotient(
    tx: &impl TxSignal,
    y_grid: &OfdmGrid,
    w_rf: &AnalogBeamformer,
    array: &ArrayConfig,
    doa: f64,
) -> Result<Vec<Complex64>> {
    if y_grid.space_dim() != w_rf.chains()
        || w_rf.antennas() != array.m_rx
        || tx.antennas() != array.n_tx
        || tx.subcarriers() != y_grid.subcarriers()
        || tx.symbols() != y_grid.symbols()
    {
        return Err(invalid("delay/Doppler inputs have inconsistent dimensions"));
    }
    let a_rx = array.rx_steering(doa).elements;
    let a_tx = array.tx_steering(doa).elements;
    // [g]_i = a_i c, so the per-cell guard reduces to a test on |a_i|
    let a_max = a_rx.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let used: Vec<usize> = (0..a_rx.len()).filter(|&i| a_rx[i].norm() >= QUOTIENT_GUARD * a_max).collect();
    if used.is_empty() {
        return Err(Error::DegenerateReference { doa_rad: doa });
    }
    // z = (h^T y) / c with h_j = (1/|I|) sum_(i in I) W_ij / a_i
    let w = &w_rf.assembled;
    let h: Vec<Complex64> = (0..w.ncols())
        .map(|j| used.iter().map(|&i| w[(i, j)] / a_rx[i]).sum::<Complex64>() / used.len() as f64)
        .collect();
    let c = tx.project(&a_tx);
    let mut any = false;
    let z = c
        .iter()
        .zip(y_grid.iter_cells())
        .map(|(&ci, y)| {
            if ci.norm() == 0.0 {
                return ZERO;
            }
            let num: Complex64 = h.iter().zip(y).map(|(hj, yj)| hj * yj).sum();
            let v = num / ci;
            if v.re.is_finite() && v.im.is_finite() {
                any = true;
                v
            } else {
                ZERO
            }
        })
        .collect();
    if !any {
        return Err(Error::DegenerateReference { doa_rad: doa });
    }
    Ok(z)
}

/// Sub-bin offset of a spectral peak from the complex DFT samples at bins
/// `k-1, k, k+1` of an `n`-point transform (bias-corrected three-sample
/// estimator). Returns a value in `[-0.5, 0.5]`.
pub fn interpolate_peak(prev: Complex64, peak: Complex64, next: Complex64, n: usize) -> f64 {
    let den = 2.0 * peak - prev - next;
    if den.norm() == 0.0 || n < 3 {
        return 0.0;
    }
    let ratio = ((prev - next) / den).re;
    let t = (PI / n as f64).tan();
    let d = (n as f64 / PI) * (t * ratio).atan();
    if d.is_finite() {
        d.clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Delay and Doppler of the echo arriving from each DoA.
pub fn estimate_delay_doppler(
    tx: &impl TxSignal,
    y_grid: &OfdmGrid,
    w_rf: &AnalogBeamformer,
    array: &ArrayConfig,
    doas: &[f64],
    ofdm: &OfdmParams,
    opts: &DelayDopplerOptions,
) -> Result<Vec<DelayDoppler>> {
    if doas.is_empty() {
        return Err(invalid("no DoAs to search"));
    }
    if !y_grid.matches(ofdm) {
        return Err(invalid("receive grid does not match the OFDM numerology"));
    }
    let (np, nq) = (ofdm.subcarriers, ofdm.symbols);
    doas.iter()
        .map(|&doa| {
            let z = quotient(tx, y_grid, w_rf, array, doa)?;
            let map = likelihood_map(&z, np, nq, opts.method)?;
            let (n, m, power) = map.argmax();
            let (mut n_hat, mut m_hat) = (n as f64, m as f64);
            if opts.refine {
                let n_prev = (n + np - 1) % np;
                let n_next = (n + 1) % np;
                n_hat += interpolate_peak(map.get(n_prev, m), map.get(n, m), map.get(n_next, m), np);
                let m_min = map.doppler_min();
                let wrap = |k: i64| (k - m_min).rem_euclid(nq as i64) + m_min;
                m_hat += interpolate_peak(map.get(n, wrap(m - 1)), map.get(n, m), map.get(n, wrap(m + 1)), nq);
                n_hat = n_hat.rem_euclid(np as f64);
                if n_hat >= np as f64 {
                    n_hat = 0.0;
                }
                m_hat = m_hat.clamp(m_min as f64, (m_min + nq as i64 - 1) as f64);
            }
            Ok(DelayDoppler {
                delay: n_hat * ofdm.delay_bin(),
                doppler: m_hat * ofdm.doppler_bin(),
                delay_index: n,
                doppler_index: m,
                peak_power: power,
            })
        })
        .collect()
}

/// Estimated parameters of one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingEstimate {
    /// Radians.
    pub doa: f64,
    /// Seconds.
    pub delay: f64,
    /// Hz.
    pub doppler: f64,
    /// Metres.
    pub range: f64,
    /// m/s, positive when approaching.
    pub velocity: f64,
}

impl SensingEstimate {
    pub fn new(doa: f64, delay: f64, doppler: f64, wavelength: f64) -> Self {
        Self {
            doa,
            delay,
            doppler,
            range: delay_to_range(delay),
            velocity: doppler_to_velocity(doppler, wavelength),
        }
    }
}

/// One estimate paired with one true target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub estimate: usize,
    pub truth: usize,
    /// Radians, absolute.
    pub doa_error: f64,
    /// Metres, absolute.
    pub range_error: f64,
    /// m/s, absolute.
    pub velocity_error: f64,
    /// `|v_hat - v| / |v|`; zero or infinite for a static target.
    pub relative_velocity_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// Sorted by truth index.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_estimates: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

impl Association {
    pub fn pair_for_truth(&self, truth: usize) -> Option<&MatchedPair> {
        self.pairs.iter().find(|p| p.truth == truth)
    }
}

/// Greedy nearest-DoA matching without replacement. Pairs further apart
/// than `max_doa_error` (radians) are never formed.
pub fn associate_estimates(estimates: &[SensingEstimate], truth: &[RadarTarget], max_doa_error: f64) -> Association {
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(estimates.len() * truth.len());
    for (e, est) in estimates.iter().enumerate() {
        for (t, tgt) in truth.iter().enumerate() {
            let d = (est.doa - tgt.doa).abs();
            if d <= max_doa_error {
                cand.push((d, t, e));
            }
        }
    }
    // tie-break on the estimate's value, not its position, so that the
    // result does not depend on the order estimates arrive in
    cand.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(estimates[a.2].doa.total_cmp(&estimates[b.2].doa))
            .then(a.2.cmp(&b.2))
    });
    let mut est_used = vec![false; estimates.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (d, t, e) in cand {
        if est_used[e] || truth_used[t] {
            continue;
        }
        est_used[e] = true;
        truth_used[t] = true;
        let (est, tgt) = (&estimates[e], &truth[t]);
        let velocity_error = (est.velocity - tgt.velocity).abs();
        let relative_velocity_error = if tgt.velocity != 0.0 {
            velocity_error / tgt.velocity.abs()
        } else if velocity_error == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        pairs.push(MatchedPair {
            estimate: e,
            truth: t,
            doa_error: d,
            range_error: (est.range - tgt.range).abs(),
            velocity_error,
            relative_velocity_error,
        });
    }
    pairs.sort_by_key(|p| p.truth);
    Association {
        pairs,
        unmatched_estimates: (0..estimates.len()).filter(|&e| !est_used[e]).collect(),
        unmatched_truth: (0..truth.len()).filter(|&t| !truth_used[t]).collect(),
    }
}

/// Full-digital combiner (identity) for `m` antennas.
pub fn identity_combiner(m: usize) -> Result<AnalogBeamformer> {
    crate::array::assemble_block_diagonal(vec![CVector::from_element(1, Complex64::new(1.0, 0.0)); m])
}
