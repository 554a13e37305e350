//! Filter-map initializers and the unrolled steepest-descent solve.
//!
//! One iteration evaluates the total-loss gradient in closed form, picks the
//! step length that minimizes the Gauss-Newton model along the gradient
//! direction, and updates the filter map. The number of iterations is fixed
//! up front; the solve is not run to convergence.

use crate::corrvol::{
    corr_adjoint, correlate, spatial_mean, CorrespondenceVolume, FeatureMap, VolumeKind,
};
use crate::error::{GocorError, Result};
use crate::objective::{
    conv_adjoint, conv_apply, residual_and_slope_from_corr, volume_mul, ObjectiveParams, RefTables,
};

/// Gradient norms at or below this leave the iterate unchanged.
pub const STATIONARITY_EPS: f64 = 1e-12;
/// Step denominators at or below `DEGENERATE_STEP_EPS * ||g||^2` yield a zero step.
pub const DEGENERATE_STEP_EPS: f64 = 1e-12;
/// The solve freezes once the exact-line-search decrement predicted by the
/// quadratic model drops below this fraction of the current loss; such a
/// step is below the floating-point resolution of the loss itself.
pub const MIN_RELATIVE_DECREMENT: f64 = 1e-12;
/// Default weight of the `||lambda w||^2` prior.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// How the initial filter map is formed from the reference features.
///
/// `Simple` rescales each feature vector; the context-aware variants solve
/// per location for the combination of `f_ij` and the spatial mean `f_bar`
/// satisfying `w0' f_ij = beta` and `w0' f_bar = gamma`. Flexible variants
/// carry per-channel `beta`/`gamma` substituted elementwise into the same
/// closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum InitializerConfig {
    Simple { beta: f64 },
    FlexibleSimple { beta: Vec<f64> },
    ContextAware { beta: f64, gamma: f64 },
    FlexibleContextAware { beta: Vec<f64>, gamma: Vec<f64> },
}

impl InitializerConfig {
    /// `Simple` with `beta = 1`.
    pub fn simple() -> Self {
        InitializerConfig::Simple { beta: 1.0 }
    }

    /// `ContextAware` with `beta = 1`, `gamma = 0`.
    pub fn context_aware() -> Self {
        InitializerConfig::ContextAware {
            beta: 1.0,
            gamma: 0.0,
        }
    }
}

/// An initial filter map plus the number of locations that fell back to the
/// simple rule because the context-aware denominator was degenerate.
#[derive(Debug, Clone)]
pub struct FilterInit {
    pub w: FeatureMap,
    pub fallback_count: usize,
}

const DEGENERACY_REL_EPS: f64 = 1e-12;

fn check_coef_len(len: usize, d: usize, name: &str) -> Result<()> {
    if len != d {
        return Err(GocorError::DimensionMismatch(format!(
            "{name} has {len} entries but the feature depth is {d}"
        )));
    }
    Ok(())
}

/// Closed-form initial filter map.
pub fn init_filter_map(f_r: &FeatureMap, cfg: &InitializerConfig) -> Result<FilterInit> {
    let (h, w, d) = (f_r.height(), f_r.width(), f_r.depth());
    match cfg {
        InitializerConfig::FlexibleSimple { beta } => check_coef_len(beta.len(), d, "beta")?,
        InitializerConfig::FlexibleContextAware { beta, gamma } => {
            check_coef_len(beta.len(), d, "beta")?;
            check_coef_len(gamma.len(), d, "gamma")?;
        }
        _ => {}
    }

    let mut out = FeatureMap::zeros(h, w, d);
    let mut fallback_count = 0usize;

    let context = match cfg {
        InitializerConfig::ContextAware { .. } | InitializerConfig::FlexibleContextAware { .. } => {
            let mean = spatial_mean(f_r);
            let norm_sq: f64 = mean.iter().map(|v| v * v).sum();
            Some((mean, norm_sq))
        }
        _ => None,
    };

    for loc in 0..h * w {
        let f = &f_r.data()[loc * d..(loc + 1) * d];
        let dst = &mut out.data_mut()[loc * d..(loc + 1) * d];
        let f_norm_sq: f64 = f.iter().map(|v| v * v).sum();

        let simple_at = |dst: &mut [f64], fallback_count: &mut usize, scale_of: &dyn Fn(usize) -> f64| {
            if f_norm_sq == 0.0 {
                *fallback_count += 1;
                for v in dst.iter_mut() {
                    *v = 0.0;
                }
                return;
            }
            let norm = f_norm_sq.sqrt();
            for (c, v) in dst.iter_mut().enumerate() {
                *v = scale_of(c) / norm * f[c];
            }
        };

        match cfg {
            InitializerConfig::Simple { beta } => {
                simple_at(dst, &mut fallback_count, &|_| *beta);
            }
            InitializerConfig::FlexibleSimple { beta } => {
                simple_at(dst, &mut fallback_count, &|c| beta[c]);
            }
            InitializerConfig::ContextAware { .. }
            | InitializerConfig::FlexibleContextAware { .. } => {
                let (mean, mean_norm_sq) = context.as_ref().expect("context prepared above");
                let cross: f64 = f.iter().zip(mean).map(|(a, b)| a * b).sum();
                let den = mean_norm_sq * f_norm_sq - cross * cross;
                if den <= DEGENERACY_REL_EPS * mean_norm_sq * f_norm_sq || f_norm_sq == 0.0 {
                    // f_ij is (numerically) parallel to the mean or zero:
                    // the 2x2 system is singular, use the simple rule here.
                    fallback_count += 1;
                    if f_norm_sq == 0.0 {
                        for v in dst.iter_mut() {
                            *v = 0.0;
                        }
                    } else {
                        let norm = f_norm_sq.sqrt();
                        match cfg {
                            InitializerConfig::ContextAware { beta, .. } => {
                                for (c, v) in dst.iter_mut().enumerate() {
                                    *v = beta / norm * f[c];
                                }
                            }
                            InitializerConfig::FlexibleContextAware { beta, .. } => {
                                for (c, v) in dst.iter_mut().enumerate() {
                                    *v = beta[c] / norm * f[c];
                                }
                            }
                            _ => unreachable!(),
                        }
                    }
                    continue;
                }
                match cfg {
                    InitializerConfig::ContextAware { beta, gamma } => {
                        let coef_f = (beta * mean_norm_sq - gamma * cross) / den;
                        let coef_m = (gamma * f_norm_sq - beta * cross) / den;
                        for (c, v) in dst.iter_mut().enumerate() {
                            *v = coef_f * f[c] + coef_m * mean[c];
                        }
                    }
                    InitializerConfig::FlexibleContextAware { beta, gamma } => {
                        for (c, v) in dst.iter_mut().enumerate() {
                            let coef_f = (beta[c] * mean_norm_sq - gamma[c] * cross) / den;
                            let coef_m = (gamma[c] * f_norm_sq - beta[c] * cross) / den;
                            *v = coef_f * f[c] + coef_m * mean[c];
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    Ok(FilterInit {
        w: out,
        fallback_count,
    })
}

/// Solve configuration: volume mode, iteration count, prior weight, whether
/// the query term participates, and the curvature convention.
///
/// `curvature_scale = 2` is the exact line search on the Gauss-Newton model
/// of the squared residuals (the Hessian of `||r||^2` is `2 J' J`) and
/// guarantees descent on convex instances. `curvature_scale = 1` reproduces
/// the literal `||g||^2 / ||J g||^2` step, which is exactly twice as long.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: VolumeKind,
    pub num_iter: usize,
    pub lambda: f64,
    pub use_query: bool,
    pub curvature_scale: f64,
}

impl SolverConfig {
    /// Global matching defaults: 3 iterations, full objective.
    pub fn global_default() -> Self {
        Self {
            mode: VolumeKind::Global,
            num_iter: 3,
            lambda: DEFAULT_LAMBDA,
            use_query: true,
            curvature_scale: 2.0,
        }
    }

    /// Local matching defaults: 7 iterations, reference term only.
    pub fn local_default(radius: usize) -> Self {
        Self {
            mode: VolumeKind::Local { radius },
            num_iter: 7,
            lambda: DEFAULT_LAMBDA,
            use_query: false,
            curvature_scale: 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(GocorError::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.curvature_scale > 0.0) {
            return Err(GocorError::InvalidParameter(format!(
                "curvature_scale must be positive, got {}",
                self.curvature_scale
            )));
        }
        Ok(())
    }
}

/// Loss, step length and gradient norm along the solve.
///
/// `entries[n].loss` is the total loss at iterate `n`; `alpha` and
/// `grad_norm` describe the step taken *from* that iterate and are absent on
/// the final entry. The trace always has `num_iter + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub loss: f64,
    pub alpha: Option<f64>,
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    pub entries: Vec<TraceEntry>,
    pub init_fallbacks: usize,
}

/// One steepest-descent step: the next iterate plus the quantities measured
/// at the input iterate.
#[derive(Debug, Clone)]
pub struct SdStep {
    pub w_next: FeatureMap,
    pub alpha: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

struct SolveContext<'a> {
    f_r: &'a FeatureMap,
    f_q: &'a FeatureMap,
    params: &'a ObjectiveParams,
    cfg: &'a SolverConfig,
    tables: RefTables,
}

struct Evaluated {
    loss: f64,
    grad: FeatureMap,
    /// `sigma_eta'` at `corr(w, f_r)`; reused by the step-length denominator.
    slope: CorrespondenceVolume,
}

impl<'a> SolveContext<'a> {
    fn new(
        f_r: &'a FeatureMap,
        f_q: &'a FeatureMap,
        params: &'a ObjectiveParams,
        cfg: &'a SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        f_r.check_same_shape(f_q)?;
        let tables = params
            .reference
            .tables(f_r.height(), f_r.width(), cfg.mode);
        Ok(Self {
            f_r,
            f_q,
            params,
            cfg,
            tables,
        })
    }

    fn check_filter(&self, w: &FeatureMap) -> Result<()> {
        w.check_same_shape(self.f_r)
    }

    fn evaluate(&self, w: &FeatureMap) -> Result<Evaluated> {
        let c_r = correlate(w, self.f_r, self.cfg.mode)?;
        let (residual, slope) = residual_and_slope_from_corr(&c_r, &self.tables);
        let mut loss = residual.norm_sq();

        let weighted = volume_mul(&slope, &residual);
        let mut grad = corr_adjoint(&weighted, self.f_r)?;
        for v in grad.data_mut() {
            *v *= 2.0;
        }

        if self.cfg.use_query {
            let c_q = correlate(w, self.f_q, self.cfg.mode)?;
            let r_q = conv_apply(&self.params.query, &c_q);
            loss += r_q.norm_sq();
            let pulled = conv_adjoint(&self.params.query, &r_q)?;
            let grad_q = corr_adjoint(&pulled, self.f_q)?;
            grad.axpy(2.0, &grad_q)?;
        }

        let lam_sq = self.cfg.lambda * self.cfg.lambda;
        loss += lam_sq * w.norm_sq();
        grad.axpy(2.0 * lam_sq, w)?;

        Ok(Evaluated { loss, grad, slope })
    }

    /// The Gauss-Newton quadratic form `||J g||^2` (all residual blocks plus
    /// the prior), with `slope` taken at the current iterate.
    fn gn_quadratic_form(&self, g: &FeatureMap, slope: &CorrespondenceVolume) -> Result<f64> {
        let c_g = correlate(g, self.f_r, self.cfg.mode)?;
        let mut den = volume_mul(slope, &c_g).norm_sq();
        if self.cfg.use_query {
            let c_gq = correlate(g, self.f_q, self.cfg.mode)?;
            den += conv_apply(&self.params.query, &c_gq).norm_sq();
        }
        den += self.cfg.lambda * self.cfg.lambda * g.norm_sq();
        Ok(den)
    }

    /// Step length along `-g`: `||g||^2 / (curvature_scale * ||J g||^2)`.
    fn alpha(&self, g: &FeatureMap, slope: &CorrespondenceVolume) -> Result<f64> {
        let g_norm_sq = g.norm_sq();
        let den = self.cfg.curvature_scale * self.gn_quadratic_form(g, slope)?;
        if den <= DEGENERATE_STEP_EPS * g_norm_sq {
            return Ok(0.0);
        }
        Ok(g_norm_sq / den)
    }
}

/// Closed-form gradient of the total loss with respect to the filter map.
pub fn grad_total(
    w: &FeatureMap,
    f_r: &FeatureMap,
    f_q: &FeatureMap,
    params: &ObjectiveParams,
    cfg: &SolverConfig,
) -> Result<FeatureMap> {
    let ctx = SolveContext::new(f_r, f_q, params, cfg)?;
    ctx.check_filter(w)?;
    Ok(ctx.evaluate(w)?.grad)
}

/// Gauss-Newton step length for gradient `g` at iterate `w`.
pub fn step_length(
    w: &FeatureMap,
    g: &FeatureMap,
    f_r: &FeatureMap,
    f_q: &FeatureMap,
    params: &ObjectiveParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    let ctx = SolveContext::new(f_r, f_q, params, cfg)?;
    ctx.check_filter(w)?;
    ctx.check_filter(g)?;
    let c_r = correlate(w, f_r, cfg.mode)?;
    let (_, slope) = residual_and_slope_from_corr(&c_r, &ctx.tables);
    ctx.alpha(g, &slope)
}

/// One steepest-descent update `w - alpha * grad`.
pub fn sd_iteration(
    w: &FeatureMap,
    f_r: &FeatureMap,
    f_q: &FeatureMap,
    params: &ObjectiveParams,
    cfg: &SolverConfig,
) -> Result<SdStep> {
    let ctx = SolveContext::new(f_r, f_q, params, cfg)?;
    ctx.check_filter(w)?;
    sd_iteration_in(&ctx, w)
}

fn sd_iteration_in(ctx: &SolveContext, w: &FeatureMap) -> Result<SdStep> {
    let ev = ctx.evaluate(w)?;
    let g_norm_sq = ev.grad.norm_sq();
    let grad_norm = g_norm_sq.sqrt();
    let frozen = SdStep {
        w_next: w.clone(),
        alpha: 0.0,
        loss: ev.loss,
        grad_norm,
    };
    if grad_norm <= STATIONARITY_EPS {
        return Ok(frozen);
    }
    let den = ctx.gn_quadratic_form(&ev.grad, &ev.slope)?;
    if den <= DEGENERATE_STEP_EPS * g_norm_sq {
        return Ok(frozen);
    }
    // Exact line search on the model would decrease it by ||g||^4 / (4 ||Jg||^2);
    // once that is below the loss's floating-point resolution the solve has
    // converged and stepping further only stirs rounding noise.
    let predicted_decrement = g_norm_sq * g_norm_sq / (4.0 * den);
    if predicted_decrement <= MIN_RELATIVE_DECREMENT * ev.loss {
        return Ok(frozen);
    }
    let alpha = g_norm_sq / (ctx.cfg.curvature_scale * den);
    let mut w_next = w.clone();
    w_next.axpy(-alpha, &ev.grad)?;
    Ok(SdStep {
        w_next,
        alpha,
        loss: ev.loss,
        grad_norm,
    })
}

/// Initialize the filter map and run `num_iter` steepest-descent steps.
///
/// The trace records the loss at the initial map and after every step.
pub fn run_gocor(
    f_r: &FeatureMap,
    f_q: &FeatureMap,
    params: &ObjectiveParams,
    cfg: &SolverConfig,
    init_cfg: &InitializerConfig,
) -> Result<(FeatureMap, SolveTrace)> {
    let ctx = SolveContext::new(f_r, f_q, params, cfg)?;
    let init = init_filter_map(f_r, init_cfg)?;
    let mut w = init.w;
    let mut trace = SolveTrace {
        entries: Vec::with_capacity(cfg.num_iter + 1),
        init_fallbacks: init.fallback_count,
    };
    for _ in 0..cfg.num_iter {
        let step = sd_iteration_in(&ctx, &w)?;
        trace.entries.push(TraceEntry {
            loss: step.loss,
            alpha: Some(step.alpha),
            grad_norm: Some(step.grad_norm),
        });
        w = step.w_next;
    }
    let final_loss = ctx.evaluate(&w)?.loss;
    trace.entries.push(TraceEntry {
        loss: final_loss,
        alpha: None,
        grad_norm: None,
    });
    Ok((w, trace))
}

/// The full pipeline: solve for the filter map, then correlate it with the
/// query features.
pub fn gocor_correlation(
    f_r: &FeatureMap,
    f_q: &FeatureMap,
    params: &ObjectiveParams,
    cfg: &SolverConfig,
    init_cfg: &InitializerConfig,
) -> Result<CorrespondenceVolume> {
    let (w, _) = run_gocor(f_r, f_q, params, cfg, init_cfg)?;
    correlate(&w, f_q, cfg.mode)
}
