//! Atmospheric absorption after ISO 9613-1 (pure-tone, still air,
//! 1 atm), returned in Np/m. The classical + rotational term and the O2
//! and N2 vibrational relaxation terms are evaluated from temperature
//! and relative humidity; `alpha_override` on the medium bypasses the
//! model entirely.

use crate::model::MediumParams;
use thiserror::Error;

const T_REF: f64 = 293.15; // K
const T_TRIPLE: f64 = 273.16; // K, water triple point

#[derive(Debug, Error, PartialEq)]
pub enum AbsorptionError {
    #[error("frequency must be positive and finite, got {0}")]
    InvalidFrequency(f64),
}

/// Absorption coefficient alpha in Np/m at frequency `f_hz`.
pub fn absorption_coefficient(medium: &MediumParams, f_hz: f64) -> Result<f64, AbsorptionError> {
    if !(f_hz > 0.0) || !f_hz.is_finite() {
        return Err(AbsorptionError::InvalidFrequency(f_hz));
    }
    if let Some(a) = medium.alpha_override {
        return Ok(a);
    }
    let t = 273.15 + medium.temperature;
    let tr = t / T_REF;
    // molar concentration of water vapor, percent (ambient pressure = reference)
    let p_sat_rel = 10f64.powf(-6.8346 * (T_TRIPLE / t).powf(1.261) + 4.6151);
    let h = medium.humidity * p_sat_rel;
    // relaxation frequencies of oxygen and nitrogen, Hz
    let fr_o = 24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h);
    let fr_n = tr.powf(-0.5) * (9.0 + 280.0 * h * (-4.170 * (tr.powf(-1.0 / 3.0) - 1.0)).exp());
    let f2 = f_hz * f_hz;
    let alpha = f2
        * (1.84e-11 * tr.sqrt()
            + tr.powf(-2.5)
                * (0.01275 * (-2239.1 / t).exp() / (fr_o + f2 / fr_o)
                    + 0.1068 * (-3352.0 / t).exp() / (fr_n + f2 / fr_n)));
    Ok(alpha)
}
