//! Zero-order-hold discretization of a diagonal continuous-time SSM.

use super::NnError;

/// Below this `|delta * a|` the closed forms lose precision and the Taylor
/// series takes over.
const SERIES_CUTOFF: f64 = 1e-6;
const DPHI_SERIES_CUTOFF: f64 = 1e-3;

/// `phi(z) = (exp(z) - 1) / z`, given `e = exp(z)`.
#[inline]
pub(crate) fn phi(z: f64, e: f64) -> f64 {
    if z.abs() < SERIES_CUTOFF {
        1.0 + 0.5 * z
    } else {
        (e - 1.0) / z
    }
}

/// `phi'(z) = (z exp(z) - exp(z) + 1) / z^2`, given `e = exp(z)`.
#[inline]
pub(crate) fn phi_prime(z: f64, e: f64) -> f64 {
    if z.abs() < DPHI_SERIES_CUTOFF {
        0.5 + z / 3.0 + z * z / 8.0
    } else {
        (z * e - e + 1.0) / (z * z)
    }
}

/// `abar = exp(delta * a)`, `bbar = (delta * a)^-1 (exp(delta * a) - 1) delta * b`.
pub fn discretize(a: f64, b: f64, delta: f64) -> Result<(f64, f64), NnError> {
    if !(delta > 0.0) {
        return Err(NnError::NonPositiveDelta(delta));
    }
    let z = delta * a;
    let abar = z.exp();
    Ok((abar, delta * b * phi(z, abar)))
}
