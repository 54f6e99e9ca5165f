//! Bessel J0/Y0 and the Hankel function H0(1) for the field kernels.
//!
//! Two evaluation branches: an ascending power series below
//! [`SWITCH_RADIUS`] and the Hankel asymptotic expansion above it. Both
//! accept complex arguments in the closed upper half plane, which is all
//! the propagation kernels need (wavenumbers are `omega/c0 + i*alpha`
//! with `alpha >= 0`). At the switch radius the series still has ~3e-12
//! absolute accuracy and the asymptotic tail error is ~e^(-2|z|), so the
//! branches overlap well inside the 1e-8 agreement budget.

use num_complex::Complex64;
use thiserror::Error;

/// Branch switch point between the power series and the asymptotic
/// expansion. Chosen so both branches are comfortably below 1e-10
/// absolute error on either side.
pub const SWITCH_RADIUS: f64 = 14.0;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const FRAC_2_PI: f64 = core::f64::consts::FRAC_2_PI;

#[derive(Debug, Error, PartialEq)]
pub enum SpecialFnError {
    #[error("argument must be finite, got {0}")]
    NonFinite(f64),
    #[error("bessel_j0 requires x >= 0, got {0}")]
    NegativeArgument(f64),
    #[error("bessel_y0 requires x > 0, got {0}")]
    NonPositiveArgument(f64),
    #[error("hankel1_0 is singular at z = 0")]
    SingularOrigin,
    #[error("hankel1_0 supports Im(z) >= 0 only, got Im(z) = {0}")]
    LowerHalfPlane(f64),
}

/// Bessel function of the first kind, order zero, real non-negative argument.
pub fn bessel_j0(x: f64) -> Result<f64, SpecialFnError> {
    if !x.is_finite() {
        return Err(SpecialFnError::NonFinite(x));
    }
    if x < 0.0 {
        return Err(SpecialFnError::NegativeArgument(x));
    }
    if x <= SWITCH_RADIUS {
        Ok(series_j0(Complex64::new(x, 0.0)).re)
    } else {
        Ok(hankel_asymptotic(Complex64::new(x, 0.0)).re)
    }
}

/// Bessel function of the second kind, order zero, real positive argument.
/// Diverges to -inf as x -> 0+.
pub fn bessel_y0(x: f64) -> Result<f64, SpecialFnError> {
    if !x.is_finite() {
        return Err(SpecialFnError::NonFinite(x));
    }
    if x <= 0.0 {
        return Err(SpecialFnError::NonPositiveArgument(x));
    }
    if x <= SWITCH_RADIUS {
        let (j0, y0) = series_j0y0(Complex64::new(x, 0.0));
        let _ = j0;
        Ok(y0.re)
    } else {
        Ok(hankel_asymptotic(Complex64::new(x, 0.0)).im)
    }
}

/// Hankel function of the first kind, order zero, for Im(z) >= 0.
///
/// On the real axis this is J0(x) + i*Y0(x); for Im(z) > 0 the magnitude
/// decays like exp(-Im z), which is the outgoing-wave attenuation the
/// absorbing wavenumber encodes.
pub fn hankel1_0(z: Complex64) -> Result<Complex64, SpecialFnError> {
    if !z.re.is_finite() {
        return Err(SpecialFnError::NonFinite(z.re));
    }
    if !z.im.is_finite() {
        return Err(SpecialFnError::NonFinite(z.im));
    }
    if z.re == 0.0 && z.im == 0.0 {
        return Err(SpecialFnError::SingularOrigin);
    }
    if z.im < 0.0 {
        return Err(SpecialFnError::LowerHalfPlane(z.im));
    }
    Ok(hankel1_0_unchecked(z))
}

/// Hot-path evaluation without domain checks. Callers guarantee z != 0
/// and Im(z) >= 0.
#[inline]
pub(crate) fn hankel1_0_unchecked(z: Complex64) -> Complex64 {
    if z.norm_sqr() <= SWITCH_RADIUS * SWITCH_RADIUS {
        let (j0, y0) = series_j0y0(z);
        Complex64::new(j0.re - y0.im, j0.im + y0.re)
    } else {
        hankel_asymptotic(z)
    }
}

/// Ascending series for J0: sum_k (-1)^k (z^2/4)^k / (k!)^2.
fn series_j0(z: Complex64) -> Complex64 {
    let q = z * z * 0.25;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    for k in 1..=70u32 {
        term = -term * q / ((k * k) as f64);
        sum += term;
        if term.norm_sqr() < 1e-36 * sum.norm_sqr() {
            break;
        }
    }
    sum
}

/// J0 and Y0 together from the ascending series:
/// Y0 = (2/pi) [ (ln(z/2) + gamma) J0 + sum_{k>=1} (-1)^(k+1) H_k q^k/(k!)^2 ]
/// with q = z^2/4 and H_k the k-th harmonic number.
fn series_j0y0(z: Complex64) -> (Complex64, Complex64) {
    let q = z * z * 0.25;
    let mut term = Complex64::new(1.0, 0.0);
    let mut j_sum = term;
    let mut y_sum = Complex64::new(0.0, 0.0);
    let mut harmonic = 0.0;
    for k in 1..=70u32 {
        term = -term * q / ((k * k) as f64);
        harmonic += 1.0 / k as f64;
        j_sum += term;
        // (-1)^(k+1) H_k q^k/(k!)^2 = -H_k * term
        y_sum -= term * harmonic;
        if term.norm_sqr() < 1e-36 * (j_sum.norm_sqr() + 1e-300) {
            break;
        }
    }
    let log_part = ((z * 0.5).ln() + EULER_GAMMA) * j_sum;
    let y0 = (log_part + y_sum) * FRAC_2_PI;
    (j_sum, y0)
}

/// Hankel asymptotic expansion for |z| above the switch radius:
/// H0(1)(z) = sqrt(2/(pi z)) exp(i(z - pi/4)) sum_k c_k,
/// c_0 = 1, c_{k+1} = -i c_k (k + 1/2)^2 / (2 z (k + 1)).
/// The sum is truncated at the smallest term (classic asymptotic rule).
fn hankel_asymptotic(z: Complex64) -> Complex64 {
    let inv_2z = 0.5 / z;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    let mut prev_mag = f64::INFINITY;
    for k in 0..30u32 {
        let kf = k as f64;
        let factor = (kf + 0.5) * (kf + 0.5) / (kf + 1.0);
        term *= Complex64::new(0.0, -1.0) * inv_2z * factor;
        let mag = term.norm_sqr();
        if mag >= prev_mag {
            break; // divergent tail reached
        }
        sum += term;
        prev_mag = mag;
        if mag < 1e-34 * sum.norm_sqr() {
            break;
        }
    }
    let phase = Complex64::new(0.0, 1.0) * (z - core::f64::consts::FRAC_PI_4);
    let amp = (Complex64::new(core::f64::consts::FRAC_2_PI, 0.0) / z).sqrt();
    amp * phase.exp() * sum
}
