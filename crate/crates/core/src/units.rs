//! Physical constants and dB conversions.

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// dBm to watts (1 mW reference). `-inf` maps to 0 W.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn kmh_to_mps(v: f64) -> f64 {
    v / 3.6
}

/// Monostatic two-way delay for a target at `range_m`.
pub fn range_to_delay(range_m: f64) -> f64 {
    2.0 * range_m / SPEED_OF_LIGHT
}

pub fn delay_to_range(delay_s: f64) -> f64 {
    SPEED_OF_LIGHT * delay_s / 2.0
}

/// Monostatic two-way Doppler shift for radial velocity `v_mps`.
pub fn velocity_to_doppler(v_mps: f64, wavelength: f64) -> f64 {
    2.0 * v_mps / wavelength
}

pub fn doppler_to_velocity(f_hz: f64, wavelength: f64) -> f64 {
    f_hz * wavelength / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert!((dbm_to_watts(-90.0) - 1e-12).abs() < 1e-24);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert_eq!(dbm_to_watts(f64::NEG_INFINITY), 0.0);
        assert!((watts_to_dbm(1e-6) + 30.0).abs() < 1e-9);
        assert!((db_to_linear(35.0) - 3162.2776601683795).abs() < 1e-9);
    }

    #[test]
    fn fifty_metre_delay() {
        // 2 * 50 / c
        let tau = range_to_delay(50.0);
        assert!((tau - 333.564_095e-9).abs() < 1e-15, "{tau}");
        assert!((delay_to_range(tau) - 50.0).abs() < 1e-9);
    }
}
