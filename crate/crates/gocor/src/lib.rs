//! Globally optimized correlation volumes for dense feature matching.
//!
//! A feature correlation layer scores every reference location against query
//! locations by plain scalar products, which cannot tell repeated patterns
//! apart. This crate instead predicts a *filter map* `w` by minimizing a
//! robust matching objective on the reference features plus an optional
//! regularizer on the query correlation, using a fixed number of steepest
//! descent steps with closed-form Gauss-Newton step lengths. The final
//! correspondence volume is `corr(w, f_q)`.
//!
//! # Layout
//! - [`corrvol`]: feature maps, global/local correlation and exact adjoints.
//! - [`objective`]: the robust reference objective, query regularizer, and
//!   the triangular-basis weight functions that parametrize them.
//! - [`solver`]: filter-map initializers and the unrolled steepest-descent
//!   loop, ending in [`solver::gocor_correlation`].
//! - [`oracle`]: independent brute-force references used by tests and the
//!   CLI verification commands. Deliberately shares no kernels with the
//!   modules above.
//! - [`metrics`]: flow-field evaluation metrics (AEPE, PCK, F1).
//! - [`synthbench`]: synthetic repeated-pattern scenes and the
//!   disambiguation experiment.
//!
//! # Parallelism
//! With the default `rayon` feature, kernels run data-parallel over grid
//! locations; [`exec::set_serial`] (or building without the feature) forces
//! the sequential path. Both paths produce bitwise identical results:
//! parallel loops write disjoint output rows and reductions accumulate
//! per-row partial sums in a fixed order.

pub mod corrvol;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod objective;
pub mod oracle;
pub mod solver;
pub mod synthbench;

pub use corrvol::{
    corr_adjoint, correlate, global_corr, local_corr, spatial_mean, CorrespondenceVolume,
    FeatureMap, VolumeKind,
};
pub use error::{GocorError, Result};
pub use objective::{
    conv_adjoint, conv_apply, eval_weight_fn, query_loss, query_residual, reference_loss,
    reference_residual, rho_basis, sigma_eta, sigma_eta_prime, total_loss, ChannelField,
    DistanceField, ObjectiveParams, QueryObjectiveParams, ReferenceObjectiveParams, Squash,
    WeightField, WeightFunction,
};
pub use solver::{
    gocor_correlation, grad_total, init_filter_map, run_gocor, sd_iteration, step_length,
    FilterInit, InitializerConfig, SdStep, SolveTrace, SolverConfig, TraceEntry,
};
