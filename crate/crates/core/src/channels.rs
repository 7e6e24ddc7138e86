//! Ground-truth scenarios and the three propagation channels: monostatic
//! radar echoes, the Rician self-interference channel and the clustered
//! downlink channel.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{steering_unchecked, ArrayConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cis, CMatrix, ZERO};
use crate::ofdm::{OfdmGrid, OfdmParams};
use crate::rng::{complex_gaussian, stream, tag};
use crate::units::{
    db_to_linear, dbm_to_watts, delay_to_range, doppler_to_velocity, kmh_to_mps, range_to_delay, velocity_to_doppler,
};

/// One point scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarTarget {
    /// Direction of arrival, radians from broadside.
    pub doa: f64,
    /// Two-way delay, seconds.
    pub delay: f64,
    /// Two-way Doppler shift, Hz.
    pub doppler: f64,
    pub reflection: Complex64,
    pub range: f64,
    pub velocity: f64,
    pub is_dl_scatterer: bool,
}

impl RadarTarget {
    /// Target with delay and Doppler derived from range and velocity.
    pub fn new(doa: f64, range: f64, velocity: f64, reflection: Complex64, wavelength: f64) -> Self {
        Self {
            doa,
            delay: range_to_delay(range),
            doppler: velocity_to_doppler(velocity, wavelength),
            reflection,
            range,
            velocity,
            is_dl_scatterer: false,
        }
    }
}

/// Sampling bounds for random targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioLimits {
    pub doa_min_deg: f64,
    pub doa_max_deg: f64,
    /// Ranges are drawn from `(range_min_m, range_max_m]`.
    pub range_min_m: f64,
    pub range_max_m: f64,
    /// Velocities are drawn from `[-speed_max_kmh, speed_max_kmh]`.
    pub speed_max_kmh: f64,
}

impl Default for ScenarioLimits {
    fn default() -> Self {
        Self {
            doa_min_deg: -90.0,
            doa_max_deg: 90.0,
            range_min_m: 0.0,
            range_max_m: 80.0,
            speed_max_kmh: 100.0,
        }
    }
}

impl ScenarioLimits {
    pub fn validate(&self) -> Result<()> {
        let ok = self.doa_min_deg <= self.doa_max_deg
            && self.doa_min_deg >= -90.0
            && self.doa_max_deg <= 90.0
            && self.range_min_m >= 0.0
            && self.range_min_m <= self.range_max_m
            && self.range_max_m > 0.0
            && self.speed_max_kmh >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("empty or out-of-range scenario bounds: {self:?}")))
        }
    }
}

/// A target with some fields fixed instead of drawn.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PinnedTarget {
    pub doa_deg: f64,
    pub range_m: Option<f64>,
    pub velocity_kmh: Option<f64>,
}

/// Everything needed to draw a scenario besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub k_targets: usize,
    pub l_scatterers: usize,
    pub limits: ScenarioLimits,
    /// Overrides for the first targets, in order.
    pub pinned: Vec<PinnedTarget>,
    /// Radar cross section, m^2.
    pub rcs_m2: f64,
    /// Carry the TX and RX array gains in the reflection coefficient so the
    /// unit-norm steering vectors yield radar-equation echo power.
    pub echo_array_gain: bool,
    pub dl_pathloss_db: f64,
    pub si_rician_k_db: f64,
    pub si_pathloss_db: f64,
    /// Distance between the parallel TX and RX arrays, metres.
    pub si_separation_m: f64,
    pub noise_floor_dbm: f64,
    /// Snap delays and Dopplers to the centres of the estimator's bins.
    pub on_grid: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            k_targets: 6,
            l_scatterers: 2,
            limits: ScenarioLimits::default(),
            pinned: Vec::new(),
            rcs_m2: 1.0,
            echo_array_gain: true,
            dl_pathloss_db: 100.0,
            si_rician_k_db: 35.0,
            si_pathloss_db: 40.0,
            si_separation_m: 0.1,
            noise_floor_dbm: -90.0,
            on_grid: false,
        }
    }
}

/// A drawn environment: targets plus the realized SI and DL channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub targets: Vec<RadarTarget>,
    pub dl_scatterer_count: usize,
    /// `M_b x N_b`
    pub si_channel: CMatrix,
    /// `M_u x N_b`
    pub dl_channel: CMatrix,
    pub dl_pathloss_db: f64,
    pub si_rician_k_db: f64,
    pub si_pathloss_db: f64,
    pub si_separation_m: f64,
    pub noise_floor_dbm: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn dl_scatterers(&self) -> Vec<RadarTarget> {
        self.targets.iter().copied().filter(|t| t.is_dl_scatterer).collect()
    }

    /// Rebuild a scenario from explicit targets; channels are regenerated from `seed`.
    pub fn from_targets(
        targets: Vec<RadarTarget>,
        array: &ArrayConfig,
        dl_pathloss_db: f64,
        si_rician_k_db: f64,
        si_pathloss_db: f64,
        si_separation_m: f64,
        noise_floor_dbm: f64,
        seed: u64,
    ) -> Result<Self> {
        let dl: Vec<RadarTarget> = targets.iter().copied().filter(|t| t.is_dl_scatterer).collect();
        let dl_channel = if dl.is_empty() {
            CMatrix::zeros(array.ue_antennas, array.n_tx)
        } else {
            dl_channel(&dl, array, dl_pathloss_db, seed)?
        };
        let si_channel = rician_si_channel_at(array, si_rician_k_db, si_pathloss_db, si_separation_m, seed);
        Ok(Self {
            dl_scatterer_count: dl.len(),
            targets,
            si_channel,
            dl_channel,
            dl_pathloss_db,
            si_rician_k_db,
            si_pathloss_db,
            si_separation_m,
            noise_floor_dbm,
            seed,
        })
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            seed: self.seed,
            dl_pathloss_db: self.dl_pathloss_db,
            k_factor_db: self.si_rician_k_db,
            si_pathloss_db: self.si_pathloss_db,
            si_separation_m: self.si_separation_m,
            noise_floor_dbm: self.noise_floor_dbm,
            targets: self.targets.iter().map(TargetRecord::from).collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_file()).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(text: &str, array: &ArrayConfig) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        file.into_scenario(array)
    }
}

/// On-disk scenario layout. Channel matrices are not stored; they are
/// regenerated from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub seed: u64,
    pub dl_pathloss_db: f64,
    pub k_factor_db: f64,
    pub si_pathloss_db: f64,
    #[serde(default = "default_separation")]
    pub si_separation_m: f64,
    pub noise_floor_dbm: f64,
    pub targets: Vec<TargetRecord>,
}

fn default_separation() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub doa_deg: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub reflection_re: f64,
    pub reflection_im: f64,
    pub dl_scatterer: bool,
}

impl From<&RadarTarget> for TargetRecord {
    fn from(t: &RadarTarget) -> Self {
        Self {
            doa_deg: t.doa.to_degrees(),
            range_m: t.range,
            velocity_mps: t.velocity,
            delay_s: t.delay,
            doppler_hz: t.doppler,
            reflection_re: t.reflection.re,
            reflection_im: t.reflection.im,
            dl_scatterer: t.is_dl_scatterer,
        }
    }
}

impl ScenarioFile {
    pub fn into_scenario(self, array: &ArrayConfig) -> Result<Scenario> {
        let targets = self
            .targets
            .iter()
            .map(|r| RadarTarget {
                doa: r.doa_deg.to_radians(),
                delay: r.delay_s,
                doppler: r.doppler_hz,
                reflection: Complex64::new(r.reflection_re, r.reflection_im),
                range: r.range_m,
                velocity: r.velocity_mps,
                is_dl_scatterer: r.dl_scatterer,
            })
            .collect();
        Scenario::from_targets(
            targets,
            array,
            self.dl_pathloss_db,
            self.k_factor_db,
            self.si_pathloss_db,
            self.si_separation_m,
            self.noise_floor_dbm,
            self.seed,
        )
    }
}

/// Radar-equation reflection magnitude `sqrt(g lambda^2 rcs / ((4 pi)^3 R^4))`.
pub fn reflection_magnitude(range: f64, rcs: f64, wavelength: f64, gain: f64) -> f64 {
    (gain * wavelength * wavelength * rcs / ((4.0 * PI).powi(3) * range.powi(4))).sqrt()
}

/// Draw a random scenario. Deterministic in `seed`.
pub fn generate_scenario(
    params: &ScenarioParams,
    array: &ArrayConfig,
    ofdm: &OfdmParams,
    seed: u64,
) -> Result<Scenario> {
    params.limits.validate()?;
    if params.l_scatterers > params.k_targets {
        return Err(invalid(format!(
            "{} DL scatterers requested from only {} targets",
            params.l_scatterers, params.k_targets
        )));
    }
    if params.pinned.len() > params.k_targets {
        return Err(invalid("more pinned targets than targets"));
    }
    let lim = &params.limits;
    let lambda = array.wavelength;
    let gain = if params.echo_array_gain {
        (array.n_tx * array.m_rx) as f64
    } else {
        1.0
    };
    let mut rng = stream(seed, &[tag::TARGETS]);
    let mut targets = Vec::with_capacity(params.k_targets);
    for k in 0..params.k_targets {
        let doa_deg = rng.random_range(lim.doa_min_deg..=lim.doa_max_deg);
        let u: f64 = rng.random();
        let range = lim.range_max_m - u * (lim.range_max_m - lim.range_min_m);
        let speed_kmh = rng.random_range(-lim.speed_max_kmh..=lim.speed_max_kmh);
        let phase = rng.random_range(0.0..2.0 * PI);

        let pin = params.pinned.get(k);
        let doa = pin.map_or(doa_deg, |p| p.doa_deg).to_radians();
        let range = pin.and_then(|p| p.range_m).unwrap_or(range);
        let velocity = kmh_to_mps(pin.and_then(|p| p.velocity_kmh).unwrap_or(speed_kmh));
        if !(range > 0.0) {
            return Err(invalid("target range must be positive"));
        }
        let mut delay = range_to_delay(range);
        let mut doppler = velocity_to_doppler(velocity, lambda);
        if params.on_grid {
            let db = ofdm.delay_bin();
            let fb = ofdm.doppler_bin();
            let half = (ofdm.symbols / 2) as f64;
            delay = ((delay / db).round().clamp(0.0, (ofdm.subcarriers - 1) as f64)) * db;
            doppler = (doppler / fb).round().clamp(-half, half - 1.0) * fb;
        }
        let range = delay_to_range(delay);
        let velocity = doppler_to_velocity(doppler, lambda);
        let reflection = cis(phase) * reflection_magnitude(range.max(f64::MIN_POSITIVE), params.rcs_m2, lambda, gain);
        targets.push(RadarTarget {
            doa,
            delay,
            doppler,
            reflection,
            range,
            velocity,
            is_dl_scatterer: false,
        });
    }
    // choose L of K without replacement (partial Fisher-Yates)
    let mut idx: Vec<usize> = (0..params.k_targets).collect();
    for i in 0..params.l_scatterers {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
        targets[idx[i]].is_dl_scatterer = true;
    }

    Scenario::from_targets(
        targets,
        array,
        params.dl_pathloss_db,
        params.si_rician_k_db,
        params.si_pathloss_db,
        params.si_separation_m,
        params.noise_floor_dbm,
        seed,
    )
}

/// Monostatic echo through every target, per subcarrier and symbol:
/// `sum_k alpha_k e^{j2pi(q Ts fD - p tau df)} a_M(theta_k) a_N(theta_k)^H x(p,q)`.
pub fn radar_echo(x_grid: &OfdmGrid, targets: &[RadarTarget], array: &ArrayConfig, ofdm: &OfdmParams) -> Result<OfdmGrid> {
    if x_grid.space_dim() != array.n_tx || !x_grid.matches(ofdm) {
        return Err(invalid(format!(
            "TX grid {}x{}x{} does not match {}x{} symbols over {} antennas",
            x_grid.subcarriers(),
            x_grid.symbols(),
            x_grid.space_dim(),
            ofdm.subcarriers,
            ofdm.symbols,
            array.n_tx
        )));
    }
    let mut out = OfdmGrid::zeros(ofdm.subcarriers, ofdm.symbols, array.m_rx);
    let tx: Vec<_> = targets.iter().map(|t| array.tx_steering(t.doa).elements).collect();
    let rx: Vec<_> = targets.iter().map(|t| array.rx_steering(t.doa).elements).collect();
    for q in 0..ofdm.symbols {
        for p in 0..ofdm.subcarriers {
            let x = x_grid.cell(p, q);
            let mut acc = vec![ZERO; array.m_rx];
            for (k, t) in targets.iter().enumerate() {
                let proj: Complex64 = tx[k].iter().zip(x).map(|(a, xi)| a.conj() * xi).sum();
                let phase = 2.0 * PI * (q as f64 * ofdm.symbol_duration * t.doppler - p as f64 * t.delay * ofdm.subcarrier_spacing);
                let coef = t.reflection * cis(phase) * proj;
                for (y, a) in acc.iter_mut().zip(rx[k].iter()) {
                    *y += coef * a;
                }
            }
            out.cell_mut(p, q).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Rician SI channel with the default 0.1 m array separation.
pub fn rician_si_channel(array: &ArrayConfig, k_factor_db: f64, pathloss_db: f64, seed: u64) -> CMatrix {
    rician_si_channel_at(array, k_factor_db, pathloss_db, 0.1, seed)
}

/// `sqrt(PL) (sqrt(k/(k+1)) H_los + sqrt(1/(k+1)) H_nlos)`.
///
/// `H_los[m, n] = exp(j 2pi r_mn / lambda)` for parallel TX/RX ULAs
/// `separation_m` apart; `H_nlos` is i.i.d. CN(0, 1).
pub fn rician_si_channel_at(
    array: &ArrayConfig,
    k_factor_db: f64,
    pathloss_db: f64,
    separation_m: f64,
    seed: u64,
) -> CMatrix {
    let kappa = db_to_linear(k_factor_db);
    let (w_los, w_nlos) = if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    };
    let amp = db_to_linear(-pathloss_db).sqrt();
    let d = array.element_spacing;
    let lambda = array.wavelength;
    let mut rng = stream(seed, &[tag::SI_CHANNEL]);
    let mut h = CMatrix::from_element(array.m_rx, array.n_tx, ZERO);
    for n in 0..array.n_tx {
        for m in 0..array.m_rx {
            let dy = (m as f64 - n as f64) * d;
            let r = (separation_m * separation_m + dy * dy).sqrt();
            let los = cis(2.0 * PI * r / lambda);
            let nlos = complex_gaussian(&mut rng, 1.0);
            h[(m, n)] = (los * w_los + nlos * w_nlos) * amp;
        }
    }
    h
}

/// Clustered DL channel `sum_l beta_l a_Mu(theta_l) a_Nb(theta_l)^H` with
/// unit-modulus random-phase `beta_l` scaled to total power `10^(-PL/10)`.
pub fn dl_channel(scatterers: &[RadarTarget], array: &ArrayConfig, pathloss_db: f64, seed: u64) -> Result<CMatrix> {
    if scatterers.is_empty() {
        return Err(invalid("DL channel needs at least one scatterer"));
    }
    let amp = (db_to_linear(-pathloss_db) / scatterers.len() as f64).sqrt();
    let mut rng = stream(seed, &[tag::DL_CHANNEL]);
    let mut h = CMatrix::from_element(array.ue_antennas, array.n_tx, ZERO);
    for t in scatterers {
        let beta = cis(rng.random_range(0.0..2.0 * PI)) * amp;
        let a_ue = steering_unchecked(t.doa, array.ue_antennas, array.element_spacing, array.wavelength).elements;
        let a_bs = array.tx_steering(t.doa).elements;
        h += (a_ue * a_bs.adjoint()) * beta;
    }
    Ok(h)
}

/// Add i.i.d. CN(0, sigma^2) to every entry, sigma^2 from `noise_floor_dbm`.
pub fn add_noise(grid: &OfdmGrid, noise_floor_dbm: f64, seed: u64) -> OfdmGrid {
    let var = dbm_to_watts(noise_floor_dbm);
    let mut out = grid.clone();
    if var > 0.0 {
        let mut rng = stream(seed, &[tag::BS_NOISE]);
        for z in out.as_mut_slice() {
            *z += complex_gaussian(&mut rng, var);
        }
    }
    out
}
