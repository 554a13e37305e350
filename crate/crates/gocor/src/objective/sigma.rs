//! The asymmetric penalty function and its derivative.
//!
//! Correlation values are mapped with separate slopes `vp` for positive and
//! `vn` for negative values; `eta` smooths the kink at zero. Setting
//! `eta = 0` recovers the piecewise-linear original.

/// `sigma_eta(c) = (vp - vn)/2 * (sqrt(c^2 + eta^2) - eta) + (vp + vn)/2 * c`.
#[inline]
pub fn sigma_eta(c: f64, vp: f64, vn: f64, eta: f64) -> f64 {
    0.5 * (vp - vn) * ((c * c + eta * eta).sqrt() - eta) + 0.5 * (vp + vn) * c
}

/// Derivative of [`sigma_eta`] in `c`.
///
/// At the `eta = 0` kink (`c = 0`) this returns the subgradient midpoint
/// `(vp + vn) / 2`, the limit of the smooth derivative as `eta -> 0`.
#[inline]
pub fn sigma_eta_prime(c: f64, vp: f64, vn: f64, eta: f64) -> f64 {
    let mid = 0.5 * (vp + vn);
    if eta == 0.0 && c == 0.0 {
        return mid;
    }
    0.5 * (vp - vn) * (c / (c * c + eta * eta).sqrt()) + mid
}
