//! The robust reference-frame objective, the query-frame regularizer, and
//! their residuals and losses.
//!
//! The reference term drives `corr(w, f_r)` toward a target profile `y(d)`
//! of the grid distance `d` between the filter location and each reference
//! cell, with asymmetric penalization `v+(d)` / `v-(d)` of positive and
//! negative deviations. The query term penalizes the 4D-filtered structure
//! of `corr(w, f_q)`. The total loss adds a `||lambda * w||^2` prior.

mod basis;
mod conv;
mod sigma;

pub use basis::{rho_basis, Squash, WeightFunction};
pub use conv::{conv_adjoint, conv_apply, ChannelField, QueryObjectiveParams};
pub use sigma::{sigma_eta, sigma_eta_prime};

use crate::corrvol::{correlate, CorrespondenceVolume, FeatureMap, VolumeKind};
use crate::error::{GocorError, Result};
use crate::exec;

/// Basis size used throughout unless configured otherwise.
pub const DEFAULT_BASIS_COUNT: usize = 10;
/// Knot spacing in feature-grid units.
pub const DEFAULT_BASIS_DELTA: f64 = 0.5;
/// Spatial size of the factorized regularizer kernels.
pub const DEFAULT_KERNEL_SIZE: usize = 3;
/// Intermediate and output channels of the regularizer.
pub const DEFAULT_KERNEL_CHANNELS: usize = 16;

/// Grid distances with the same indexing as a correspondence volume:
/// `sqrt((i-k)^2 + (j-l)^2)` for global volumes, `sqrt(k^2 + l^2)` for local
/// displacements.
#[derive(Debug, Clone, Copy)]
pub struct DistanceField {
    h: usize,
    w: usize,
    kind: VolumeKind,
}

impl DistanceField {
    pub fn new(h: usize, w: usize, kind: VolumeKind) -> Self {
        Self { h, w, kind }
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn value(&self, i: usize, j: usize, k: isize, l: isize) -> Result<f64> {
        let (di, dj) = self.displacement(i, j, k, l)?;
        Ok(((di * di + dj * dj) as f64).sqrt())
    }

    fn displacement(&self, i: usize, j: usize, k: isize, l: isize) -> Result<(isize, isize)> {
        match self.kind {
            VolumeKind::Global => {
                if k < 0 || l < 0 || k as usize >= self.h || l as usize >= self.w {
                    return Err(GocorError::IndexOutOfRange(format!(
                        "global position ({k}, {l})"
                    )));
                }
                Ok((i as isize - k, j as isize - l))
            }
            VolumeKind::Local { radius } => {
                let r = radius as isize;
                if k < -r || k > r || l < -r || l > r {
                    return Err(GocorError::IndexOutOfRange(format!(
                        "local displacement ({k}, {l}) with radius {radius}"
                    )));
                }
                Ok((k, l))
            }
        }
    }
}

/// A table over all displacements that can occur in a volume; weight
/// functions only depend on the displacement, so this is the compact
/// representation of their evaluation on a full volume.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DispTable {
    half_i: usize,
    half_j: usize,
    data: Vec<f64>,
}

impl DispTable {
    fn build(half_i: usize, half_j: usize, f: impl Fn(f64) -> f64) -> Self {
        let (ti, tj) = (2 * half_i + 1, 2 * half_j + 1);
        let mut data = vec![0.0; ti * tj];
        for a in 0..ti {
            let di = a as isize - half_i as isize;
            for b in 0..tj {
                let dj = b as isize - half_j as isize;
                let d = ((di * di + dj * dj) as f64).sqrt();
                data[a * tj + b] = f(d);
            }
        }
        Self {
            half_i,
            half_j,
            data,
        }
    }

    #[inline]
    pub(crate) fn at_disp(&self, di: isize, dj: isize) -> f64 {
        let a = (di + self.half_i as isize) as usize;
        let b = (dj + self.half_j as isize) as usize;
        self.data[a * (2 * self.half_j + 1) + b]
    }
}

fn table_extents(h: usize, w: usize, kind: VolumeKind) -> (usize, usize) {
    match kind {
        VolumeKind::Global => (h - 1, w - 1),
        VolumeKind::Local { radius } => (radius, radius),
    }
}

/// A weight function evaluated over a volume geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    h: usize,
    w: usize,
    kind: VolumeKind,
    table: DispTable,
}

impl WeightField {
    /// Value at volume index `(i, j, k, l)`.
    pub fn at(&self, i: usize, j: usize, k: isize, l: isize) -> Result<f64> {
        let (di, dj) = DistanceField::new(self.h, self.w, self.kind).displacement(i, j, k, l)?;
        Ok(self.table.at_disp(di, dj))
    }

    /// Materialize the field as a volume-shaped array.
    pub fn to_volume(&self) -> CorrespondenceVolume {
        let mut vol = CorrespondenceVolume::zeros(self.h, self.w, self.kind);
        let slice_len = vol.slice_len();
        let w = self.w;
        let table = &self.table;
        let kind = self.kind;
        exec::for_each_chunk_mut(vol.data_mut(), slice_len, |loc, row| {
            let (i, j) = (loc / w, loc % w);
            for_each_cell_disp(i, j, self.h, w, kind, |cell, di, dj| {
                row[cell] = table.at_disp(di, dj);
            });
        });
        vol
    }
}

/// Walk the cells of one `(i, j)` slice in storage order, yielding the cell
/// index and the displacement `(di, dj)` that determines the grid distance.
#[inline]
fn for_each_cell_disp(
    i: usize,
    j: usize,
    h: usize,
    w: usize,
    kind: VolumeKind,
    mut f: impl FnMut(usize, isize, isize),
) {
    match kind {
        VolumeKind::Global => {
            let mut cell = 0usize;
            for k in 0..h {
                let di = i as isize - k as isize;
                for l in 0..w {
                    let dj = j as isize - l as isize;
                    f(cell, di, dj);
                    cell += 1;
                }
            }
        }
        VolumeKind::Local { radius } => {
            let r = radius as isize;
            let mut cell = 0usize;
            for k in -r..=r {
                for l in -r..=r {
                    f(cell, k, l);
                    cell += 1;
                }
            }
        }
    }
}

/// Evaluate a weight function on every distance of a volume geometry.
pub fn eval_weight_fn(wf: &WeightFunction, field: &DistanceField) -> WeightField {
    let (half_i, half_j) = table_extents(field.h, field.w, field.kind);
    WeightField {
        h: field.h,
        w: field.w,
        kind: field.kind,
        table: DispTable::build(half_i, half_j, |d| wf.eval(d)),
    }
}

/// Parameters of the robust reference objective.
///
/// The derived quantities are `y(d) = v+(d) * y'(d)` and
/// `v-(d) = v+(d) * m(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceObjectiveParams {
    pub y_prime: WeightFunction,
    pub v_plus: WeightFunction,
    pub m: WeightFunction,
    pub eta: f64,
}

impl ReferenceObjectiveParams {
    pub fn new(
        y_prime: WeightFunction,
        v_plus: WeightFunction,
        m: WeightFunction,
        eta: f64,
    ) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(GocorError::InvalidParameter(format!(
                "eta must be finite and >= 0, got {eta}"
            )));
        }
        Ok(Self {
            y_prime,
            v_plus,
            m,
            eta,
        })
    }

    /// The documented starting values: Gaussian target `y'`, constant
    /// `v+ = 1`, sigmoid-squashed tanh mask `m`, `eta = 0`.
    pub fn paper_init() -> Self {
        Self {
            y_prime: WeightFunction::gaussian_target(DEFAULT_BASIS_COUNT, DEFAULT_BASIS_DELTA),
            v_plus: WeightFunction::constant(1.0, DEFAULT_BASIS_COUNT, DEFAULT_BASIS_DELTA),
            m: WeightFunction::scaled_tanh_mask(DEFAULT_BASIS_COUNT, DEFAULT_BASIS_DELTA),
            eta: 0.0,
        }
    }

    /// The plain linear-regression objective: `v+ = v- = 1`, `eta = 0`, and
    /// an ideal delta response as target. The resulting residual is
    /// `corr(w, f_r) - y` and the loss is a convex quadratic.
    pub fn linear_regression() -> Self {
        Self {
            y_prime: WeightFunction::delta_target(DEFAULT_BASIS_COUNT, DEFAULT_BASIS_DELTA),
            v_plus: WeightFunction::constant(1.0, DEFAULT_BASIS_COUNT, DEFAULT_BASIS_DELTA),
            m: WeightFunction::constant(1.0, DEFAULT_BASIS_COUNT, DEFAULT_BASIS_DELTA),
            eta: 0.0,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    /// Evaluate `v+`, `v-`, `y` on a volume geometry.
    pub(crate) fn tables(&self, h: usize, w: usize, kind: VolumeKind) -> RefTables {
        let (half_i, half_j) = table_extents(h, w, kind);
        let vp = DispTable::build(half_i, half_j, |d| self.v_plus.eval(d));
        let vn = DispTable::build(half_i, half_j, |d| self.v_plus.eval(d) * self.m.eval(d));
        let y = DispTable::build(half_i, half_j, |d| self.v_plus.eval(d) * self.y_prime.eval(d));
        RefTables {
            vp,
            vn,
            y,
            eta: self.eta,
        }
    }
}

/// Evaluated weight tables for one volume geometry.
#[derive(Debug, Clone)]
pub(crate) struct RefTables {
    pub(crate) vp: DispTable,
    pub(crate) vn: DispTable,
    pub(crate) y: DispTable,
    pub(crate) eta: f64,
}

/// Reference and query parameter bundle used by the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParams {
    pub reference: ReferenceObjectiveParams,
    pub query: QueryObjectiveParams,
}

impl ObjectiveParams {
    /// Paper-initialization reference weights plus seeded untrained kernels
    /// of the default geometry.
    pub fn paper_init(kernel_seed: u64) -> Self {
        Self {
            reference: ReferenceObjectiveParams::paper_init(),
            query: QueryObjectiveParams::seeded_default(kernel_seed),
        }
    }
}

/// `sigma_eta(corr) - y` computed per entry from a precomputed correlation.
pub(crate) fn residual_from_corr(c: &CorrespondenceVolume, t: &RefTables) -> CorrespondenceVolume {
    transform_corr(c, t, |cv, vp, vn, y, eta| sigma_eta(cv, vp, vn, eta) - y)
}

/// Residual and `sigma_eta'` slope in one pass (the solver needs both).
pub(crate) fn residual_and_slope_from_corr(
    c: &CorrespondenceVolume,
    t: &RefTables,
) -> (CorrespondenceVolume, CorrespondenceVolume) {
    let residual = residual_from_corr(c, t);
    let slope = transform_corr(c, t, |cv, vp, vn, _y, eta| sigma_eta_prime(cv, vp, vn, eta));
    (residual, slope)
}

fn transform_corr(
    c: &CorrespondenceVolume,
    t: &RefTables,
    f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync,
) -> CorrespondenceVolume {
    let (h, w, kind) = (c.height(), c.width(), c.kind());
    let mut out = CorrespondenceVolume::zeros(h, w, kind);
    let slice_len = c.slice_len();
    let cdata = c.data();
    exec::for_each_chunk_mut(out.data_mut(), slice_len, |loc, row| {
        let (i, j) = (loc / w, loc % w);
        let src = &cdata[loc * slice_len..(loc + 1) * slice_len];
        for_each_cell_disp(i, j, h, w, kind, |cell, di, dj| {
            let vp = t.vp.at_disp(di, dj);
            let vn = t.vn.at_disp(di, dj);
            let y = t.y.at_disp(di, dj);
            row[cell] = f(src[cell], vp, vn, y, t.eta);
        });
    });
    out
}

/// Elementwise product of two identically shaped volumes.
pub(crate) fn volume_mul(a: &CorrespondenceVolume, b: &CorrespondenceVolume) -> CorrespondenceVolume {
    debug_assert_eq!(a.kind(), b.kind());
    let mut out = a.clone();
    for (dst, &src) in out.data_mut().iter_mut().zip(b.data()) {
        *dst *= src;
    }
    out
}

/// `r_r = sigma_eta(corr(w, f_r); v+(d), v-(d)) - y(d)`, volume shaped.
pub fn reference_residual(
    w: &FeatureMap,
    f_r: &FeatureMap,
    params: &ReferenceObjectiveParams,
    kind: VolumeKind,
) -> Result<CorrespondenceVolume> {
    let c = correlate(w, f_r, kind)?;
    let t = params.tables(f_r.height(), f_r.width(), kind);
    Ok(residual_from_corr(&c, &t))
}

/// `||reference_residual||^2`.
pub fn reference_loss(
    w: &FeatureMap,
    f_r: &FeatureMap,
    params: &ReferenceObjectiveParams,
    kind: VolumeKind,
) -> Result<f64> {
    Ok(reference_residual(w, f_r, params, kind)?.norm_sq())
}

/// `r_q = R * corr(w, f_q)`, a Q-channel volume-shaped field.
pub fn query_residual(
    w: &FeatureMap,
    f_q: &FeatureMap,
    params: &QueryObjectiveParams,
    kind: VolumeKind,
) -> Result<ChannelField> {
    let c = correlate(w, f_q, kind)?;
    Ok(conv_apply(params, &c))
}

/// `||query_residual||^2`.
pub fn query_loss(
    w: &FeatureMap,
    f_q: &FeatureMap,
    params: &QueryObjectiveParams,
    kind: VolumeKind,
) -> Result<f64> {
    Ok(query_residual(w, f_q, params, kind)?.norm_sq())
}

/// `L = L_r + [use_query] L_q + ||lambda w||^2`.
pub fn total_loss(
    w: &FeatureMap,
    f_r: &FeatureMap,
    f_q: &FeatureMap,
    params: &ObjectiveParams,
    lambda: f64,
    kind: VolumeKind,
    use_query: bool,
) -> Result<f64> {
    let mut loss = reference_loss(w, f_r, &params.reference, kind)?;
    if use_query {
        loss += query_loss(w, f_q, &params.query, kind)?;
    }
    loss += lambda * lambda * w.norm_sq();
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrvol::global_corr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, d: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::new(h, w, d, data).unwrap()
    }

    #[test]
    fn distance_field_values() {
        let global = DistanceField::new(4, 4, VolumeKind::Global);
        assert_eq!(global.value(1, 1, 1, 1).unwrap(), 0.0);
        assert_eq!(global.value(0, 0, 3, 0).unwrap(), 3.0);
        assert!((global.value(0, 0, 1, 1).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let local = DistanceField::new(4, 4, VolumeKind::Local { radius: 2 });
        assert_eq!(local.value(3, 3, 0, 0).unwrap(), 0.0);
        assert_eq!(local.value(0, 0, -2, 0).unwrap(), 2.0);
        assert!(local.value(0, 0, 3, 0).is_err());
    }

    #[test]
    fn constant_weight_field_is_constant_everywhere() {
        let wf = WeightFunction::constant(2.5, 10, 0.5);
        let field = eval_weight_fn(&wf, &DistanceField::new(3, 4, VolumeKind::Global));
        let vol = field.to_volume();
        assert!(vol.data().iter().all(|&v| (v - 2.5).abs() <= 1e-12));
    }

    #[test]
    fn weight_field_matches_direct_evaluation() {
        let wf = WeightFunction::gaussian_target(10, 0.5);
        let df = DistanceField::new(4, 3, VolumeKind::Global);
        let field = eval_weight_fn(&wf, &df);
        for i in 0..4 {
            for j in 0..3 {
                for k in 0..4 {
                    for l in 0..3 {
                        let d = df.value(i, j, k as isize, l as isize).unwrap();
                        assert_eq!(field.at(i, j, k as isize, l as isize).unwrap(), wf.eval(d));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_filter_residual_is_minus_y() {
        let f_r = random_map(3, 3, 4, 5);
        let w = FeatureMap::zeros(3, 3, 4);
        let params = ReferenceObjectiveParams::paper_init();
        let r = reference_residual(&w, &f_r, &params, VolumeKind::Global).unwrap();
        let y = eval_weight_fn(
            &params.y_prime,
            &DistanceField::new(3, 3, VolumeKind::Global),
        )
        .to_volume();
        // v+ is constant 1, so y(d) = y'(d) here.
        for (got, expect) in r.data().iter().zip(y.data()) {
            assert!((got + expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_sigma_gives_linear_regression_residual() {
        let f_r = random_map(3, 4, 3, 6);
        let w = random_map(3, 4, 3, 7);
        let params = ReferenceObjectiveParams::linear_regression();
        let r = reference_residual(&w, &f_r, &params, VolumeKind::Global).unwrap();
        let c = global_corr(&w, &f_r).unwrap();
        let t = params.tables(3, 4, VolumeKind::Global);
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..3 {
                    for l in 0..4 {
                        let got = r.value(i, j, k as isize, l as isize).unwrap();
                        let y = t.y.at_disp(i as isize - k as isize, j as isize - l as isize);
                        let expect = c.value(i, j, k as isize, l as isize).unwrap() - y;
                        assert_eq!(got, expect);
                    }
                }
            }
        }
    }

    #[test]
    fn residual_matches_elementwise_composition() {
        let f_r = random_map(4, 4, 3, 8);
        let w = random_map(4, 4, 3, 9);
        let params = ReferenceObjectiveParams::paper_init().with_eta(0.1);
        for kind in [VolumeKind::Global, VolumeKind::Local { radius: 2 }] {
            let r = reference_residual(&w, &f_r, &params, kind).unwrap();
            let c = correlate(&w, &f_r, kind).unwrap();
            let df = DistanceField::new(4, 4, kind);
            let vp = eval_weight_fn(&params.v_plus, &df).to_volume();
            let vn_fn = |d: f64| params.v_plus.eval(d) * params.m.eval(d);
            let y_fn = |d: f64| params.v_plus.eval(d) * params.y_prime.eval(d);
            for loc in 0..16 {
                let (i, j) = (loc / 4, loc % 4);
                for (cell, &cv) in c.slice(i, j).iter().enumerate() {
                    let (k, l) = match kind {
                        VolumeKind::Global => ((cell / 4) as isize, (cell % 4) as isize),
                        VolumeKind::Local { radius } => {
                            let side = 2 * radius + 1;
                            (
                                (cell / side) as isize - radius as isize,
                                (cell % side) as isize - radius as isize,
                            )
                        }
                    };
                    let d = df.value(i, j, k, l).unwrap();
                    let expect =
                        sigma_eta(cv, vp.value(i, j, k, l).unwrap(), vn_fn(d), params.eta) - y_fn(d);
                    assert_eq!(r.slice(i, j)[cell], expect);
                }
            }
        }
    }

    #[test]
    fn zero_residual_means_zero_loss() {
        let f_r = random_map(3, 3, 2, 10);
        let params = ReferenceObjectiveParams::linear_regression();
        // Zero filter with a zero target: residual vanishes identically.
        let zero_target = ReferenceObjectiveParams {
            y_prime: WeightFunction::constant(0.0, 10, 0.5),
            ..params
        };
        let w = FeatureMap::zeros(3, 3, 2);
        assert_eq!(
            reference_loss(&w, &f_r, &zero_target, VolumeKind::Global).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_filter_loss_is_sum_of_squared_targets() {
        let f_r = random_map(3, 3, 2, 11);
        let w = FeatureMap::zeros(3, 3, 2);
        let params = ReferenceObjectiveParams::paper_init();
        let loss = reference_loss(&w, &f_r, &params, VolumeKind::Global).unwrap();
        let t = params.tables(3, 3, VolumeKind::Global);
        let mut expect = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let y = t.y.at_disp(i as isize - k as isize, j as isize - l as isize);
                        expect += y * y;
                    }
                }
            }
        }
        assert!((loss - expect).abs() <= 1e-10 * expect.max(1.0));
    }

    #[test]
    fn identity_kernels_make_query_residual_the_correlation() {
        let w = random_map(3, 3, 4, 12);
        let f_q = random_map(3, 3, 4, 13);
        let id = QueryObjectiveParams::identity(3).unwrap();
        let r = query_residual(&w, &f_q, &id, VolumeKind::Global).unwrap();
        let c = global_corr(&w, &f_q).unwrap();
        assert_eq!(r.data(), c.data());
    }

    #[test]
    fn zero_filter_query_residual_is_zero() {
        let w = FeatureMap::zeros(3, 3, 4);
        let f_q = random_map(3, 3, 4, 14);
        let params = QueryObjectiveParams::seeded(3, 4, 4, 3).unwrap();
        let r = query_residual(&w, &f_q, &params, VolumeKind::Global).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert_eq!(
            query_loss(&w, &f_q, &params, VolumeKind::Global).unwrap(),
            0.0
        );
    }

    #[test]
    fn total_loss_decomposes_into_parts() {
        let w = random_map(4, 3, 3, 15);
        let f_r = random_map(4, 3, 3, 16);
        let f_q = random_map(4, 3, 3, 17);
        let params = ObjectiveParams {
            reference: ReferenceObjectiveParams::paper_init().with_eta(0.05),
            query: QueryObjectiveParams::seeded(3, 3, 3, 4).unwrap(),
        };
        let lambda = 0.7;
        for kind in [VolumeKind::Global, VolumeKind::Local { radius: 1 }] {
            for use_query in [false, true] {
                let total = total_loss(&w, &f_r, &f_q, &params, lambda, kind, use_query).unwrap();
                let mut expect = reference_loss(&w, &f_r, &params.reference, kind).unwrap();
                if use_query {
                    expect += query_loss(&w, &f_q, &params.query, kind).unwrap();
                }
                expect += lambda * lambda * w.norm_sq();
                let rel = (total - expect).abs() / expect.abs().max(1e-300);
                assert!(rel <= 1e-12, "loss decomposition off by {rel}");
            }
        }
    }

    #[test]
    fn zero_features_total_loss_is_prior_plus_targets() {
        let w = random_map(3, 3, 2, 18);
        let f = FeatureMap::zeros(3, 3, 2);
        let params = ObjectiveParams {
            reference: ReferenceObjectiveParams::paper_init(),
            query: QueryObjectiveParams::seeded(3, 2, 2, 5).unwrap(),
        };
        let total = total_loss(&w, &f, &f, &params, 1.0, VolumeKind::Global, true).unwrap();
        let t = params.reference.tables(3, 3, VolumeKind::Global);
        let mut targets = 0.0;
        for i in 0..3i32 {
            for j in 0..3i32 {
                for k in 0..3i32 {
                    for l in 0..3i32 {
                        let y = t.y.at_disp((i - k) as isize, (j - l) as isize);
                        targets += y * y;
                    }
                }
            }
        }
        let expect = w.norm_sq() + targets;
        assert!((total - expect).abs() <= 1e-10 * expect);
    }
}
