//! Triangular-basis weight functions of grid distance.
//!
//! The target confidence and the positive/negative penalization weights are
//! all scalar functions of the distance between a filter location and a
//! candidate cell. Each is a linear combination of `N` hat functions with
//! knot spacing `delta`; the final knot saturates to 1 beyond the last knot
//! so far-away cells are treated identically.

use crate::error::{GocorError, Result};

/// Optional squashing of the basis expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Squash {
    None,
    /// Logistic squash; evaluated values lie in (0, 1).
    Sigmoid,
}

/// Hat function `k` of `n` with knot spacing `delta`, evaluated at distance `d`.
///
/// Interior knots are the usual triangles peaking at `k * delta`; the last
/// knot (`k == n-1`) saturates to 1 for `d >= (n-1) * delta`.
pub fn rho_basis(d: f64, k: usize, n: usize, delta: f64) -> Result<f64> {
    if k >= n {
        return Err(GocorError::IndexOutOfRange(format!(
            "basis index {k} with {n} knots"
        )));
    }
    if delta <= 0.0 {
        return Err(GocorError::InvalidParameter(format!(
            "knot spacing must be positive, got {delta}"
        )));
    }
    Ok(rho(d, k, n, delta))
}

#[inline]
pub(crate) fn rho(d: f64, k: usize, n: usize, delta: f64) -> f64 {
    let knot = k as f64 * delta;
    if k + 1 < n {
        (1.0 - (d - knot).abs() / delta).max(0.0)
    } else {
        (1.0 + (d - knot) / delta).clamp(0.0, 1.0)
    }
}

/// A weight function parametrized by `N` knot coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    coeffs: Vec<f64>,
    delta: f64,
    squash: Squash,
}

impl WeightFunction {
    pub fn new(coeffs: Vec<f64>, delta: f64, squash: Squash) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(GocorError::InvalidParameter(format!(
                "weight function needs at least 2 knots, got {}",
                coeffs.len()
            )));
        }
        if !(delta > 0.0) {
            return Err(GocorError::InvalidParameter(format!(
                "knot spacing must be positive, got {delta}"
            )));
        }
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(GocorError::NonFinite {
                context: "weight function coefficients",
                index,
            });
        }
        Ok(Self {
            coeffs,
            delta,
            squash,
        })
    }

    pub fn count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn squash(&self) -> Squash {
        self.squash
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `squash(sum_k coeff_k * rho_k(d))`.
    pub fn eval(&self, d: f64) -> f64 {
        let n = self.coeffs.len();
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate() {
            acc += c * rho(d, k, n, self.delta);
        }
        match self.squash {
            Squash::None => acc,
            Squash::Sigmoid => 1.0 / (1.0 + (-acc).exp()),
        }
    }

    /// Constant function: every knot set to `value` (partition of unity).
    pub fn constant(value: f64, n: usize, delta: f64) -> Self {
        Self::new(vec![value; n], delta, Squash::None).expect("constant weight function")
    }

    /// Unit-height Gaussian profile `exp(-d^2 / 2)` sampled at the knots.
    pub fn gaussian_target(n: usize, delta: f64) -> Self {
        let coeffs = (0..n)
            .map(|k| {
                let d = k as f64 * delta;
                (-0.5 * d * d).exp()
            })
            .collect();
        Self::new(coeffs, delta, Squash::None).expect("gaussian weight function")
    }

    /// Knot-index-zero-suppressed profile rising like `tanh(d)`, expressed in
    /// the sigmoid domain so evaluated values stay in (0, 1).
    ///
    /// Knot values are `tanh(k * delta)` clamped into `[1e-6, 1 - 1e-6]`
    /// before the logit (the exact value 0 at `d = 0` has no finite
    /// pre-image under the sigmoid).
    pub fn scaled_tanh_mask(n: usize, delta: f64) -> Self {
        const EPS: f64 = 1e-6;
        let coeffs = (0..n)
            .map(|k| {
                let t = (k as f64 * delta).tanh().clamp(EPS, 1.0 - EPS);
                (t / (1.0 - t)).ln()
            })
            .collect();
        Self::new(coeffs, delta, Squash::Sigmoid).expect("tanh mask weight function")
    }

    /// Delta-like target: 1 at distance zero, 0 from the first knot on.
    ///
    /// With `delta <= 1` this reproduces the ideal correlation response
    /// exactly on an integer grid (the linear-regression configuration).
    pub fn delta_target(n: usize, delta: f64) -> Self {
        let mut coeffs = vec![0.0; n];
        coeffs[0] = 1.0;
        Self::new(coeffs, delta, Squash::None).expect("delta target weight function")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 10;
    const DELTA: f64 = 0.5;

    #[test]
    fn hat_at_origin() {
        assert_eq!(rho_basis(0.0, 0, N, DELTA).unwrap(), 1.0);
        assert_eq!(rho_basis(0.5, 0, N, DELTA).unwrap(), 0.0);
    }

    #[test]
    fn interior_knot_peaks_at_one() {
        for k in 1..N - 1 {
            assert_eq!(rho_basis(k as f64 * DELTA, k, N, DELTA).unwrap(), 1.0);
        }
    }

    #[test]
    fn partition_of_unity_and_saturation() {
        let far = (N - 1) as f64 * DELTA;
        for step in 0..=1000 {
            let d = far * step as f64 / 1000.0;
            let sum: f64 = (0..N).map(|k| rho(d, k, N, DELTA)).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum} at d={d}");
        }
        for d in [far + 0.1, far + 5.0, 1e6] {
            assert_eq!(rho(d, N - 1, N, DELTA), 1.0);
            for k in 0..N - 1 {
                assert_eq!(rho(d, k, N, DELTA), 0.0);
            }
        }
    }

    #[test]
    fn out_of_range_knot_is_an_error() {
        assert!(rho_basis(0.0, N, N, DELTA).is_err());
    }

    #[test]
    fn constant_coefficients_evaluate_to_constant() {
        let wf = WeightFunction::constant(3.25, N, DELTA);
        for step in 0..=100 {
            let d = 6.0 * step as f64 / 100.0;
            assert!((wf.eval(d) - 3.25).abs() <= 1e-12);
        }
    }

    #[test]
    fn gaussian_profile_values_at_knots() {
        let wf = WeightFunction::gaussian_target(N, DELTA);
        assert!((wf.eval(0.0) - 1.0).abs() <= 1e-15);
        // d = 3 is knot 6; the expansion reproduces exp(-4.5) there.
        assert!((wf.eval(3.0) - 0.011108996538242306).abs() <= 1e-15);
    }

    #[test]
    fn sigmoid_of_zero_sum_is_half() {
        let wf = WeightFunction::new(vec![0.0; N], DELTA, Squash::Sigmoid).unwrap();
        assert_eq!(wf.eval(1.3), 0.5);
    }

    #[test]
    fn tanh_mask_is_open_unit_interval_and_increasing() {
        let wf = WeightFunction::scaled_tanh_mask(N, DELTA);
        let mut prev = -1.0;
        for step in 0..=100 {
            let d = 5.0 * step as f64 / 100.0;
            let v = wf.eval(d);
            assert!(v > 0.0 && v < 1.0);
            assert!(v >= prev);
            prev = v;
        }
        assert!(wf.eval(0.0) < 1e-5);
        assert!((wf.eval(1.0) - 1.0f64.tanh()).abs() < 1e-9);
    }

    #[test]
    fn delta_target_is_ideal_response_on_integer_grid() {
        let wf = WeightFunction::delta_target(N, DELTA);
        assert_eq!(wf.eval(0.0), 1.0);
        for d in [1.0, 2.0, 5.0, 30.0] {
            assert_eq!(wf.eval(d), 0.0);
        }
    }
}
