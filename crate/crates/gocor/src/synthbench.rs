//! Synthetic repeated-pattern scenes and the disambiguation experiment.
//!
//! A scene plants `n_repeats` copies of one random patch on a smooth
//! background; the query view is the same canvas shifted by a constant flow.
//! With `noise_std = 0` the copies are bit-identical, which makes the plain
//! correlation tie exactly between the true match and every distractor — no
//! filter vector can order two identical feature vectors. With
//! `noise_std > 0` the distractor copies are near-duplicates (fresh Gaussian
//! perturbation per copy) and the query view carries additive noise of the
//! same scale, so a filter optimized against the reference map can single
//! out the true match. The experiment tracks how the margin between the true
//! match and the best far-away confidence evolves over solver iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

use crate::corrvol::{correlate, CorrespondenceVolume, FeatureMap, VolumeKind};
use crate::error::{GocorError, Result};
use crate::metrics::FlowField;
use crate::objective::ObjectiveParams;
use crate::solver::{init_filter_map, InitializerConfig, SolverConfig};

/// Side length of the planted square patch.
pub const PATCH_SIZE: usize = 3;
/// Background cell amplitude (rms feature norm) relative to the unit patch
/// amplitude.
pub const BACKGROUND_STD: f64 = 0.1;
/// Per-component impurity of distractor copies, as a multiple of
/// `noise_std`.
pub const IMPURITY_FACTOR: f64 = 10.0;
/// Minimum Euclidean distance between planted patch centers.
pub const MIN_SEPARATION: f64 = 6.0;
/// Default grid of the disambiguation scene.
pub const DEFAULT_SCENE_SIZE: (usize, usize, usize) = (32, 32, 16);
/// Default translation (rows, columns) between reference and query.
pub const DEFAULT_SHIFT: (isize, isize) = (2, 1);
/// Default copy impurity / query noise level.
pub const DEFAULT_NOISE_STD: f64 = 0.07;
/// Default exclusion radius of the margin statistic.
pub const DEFAULT_RHO_EXCL: f64 = 2.0;

/// A generated scene: both feature maps, the ground-truth flow, the probed
/// reference location, and where the distractor copies sit in the query.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub f_r: FeatureMap,
    pub f_q: FeatureMap,
    pub gt_flow: FlowField,
    /// Centers of the non-probed copies, in query coordinates.
    pub distractor_locations: Vec<(usize, usize)>,
    /// Center of the probed copy, in reference coordinates.
    pub probe: (usize, usize),
    /// Translation (rows, columns) applied between the views.
    pub shift: (isize, isize),
}

impl SyntheticScene {
    /// Query-frame coordinates of the probe's true match.
    pub fn true_match(&self) -> (usize, usize) {
        (
            (self.probe.0 as isize + self.shift.0) as usize,
            (self.probe.1 as isize + self.shift.1) as usize,
        )
    }
}

/// Remove the component of `v` along `axis` (no-op for a null axis).
fn project_out(v: &mut [f64], axis: &[f64]) {
    let norm_sq: f64 = axis.iter().map(|a| a * a).sum();
    if norm_sq <= 1e-24 {
        return;
    }
    let dot: f64 = v.iter().zip(axis).map(|(a, b)| a * b).sum();
    let coef = dot / norm_sq;
    for (x, &a) in v.iter_mut().zip(axis) {
        *x -= coef * a;
    }
}

/// Smooth per-channel field: a coarse Gaussian grid upsampled bilinearly.
///
/// `amplitude` is the rms feature norm of a cell, so each component has
/// standard deviation `amplitude / sqrt(d)`.
fn smooth_background(h: usize, w: usize, d: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const CELL: usize = 4;
    let component_std = amplitude / (d as f64).sqrt();
    let gh = h.div_ceil(CELL) + 1;
    let gw = w.div_ceil(CELL) + 1;
    let coarse: Vec<f64> = (0..gh * gw * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * component_std
        })
        .collect();
    let mut out = vec![0.0; h * w * d];
    for i in 0..h {
        let fy = i as f64 / CELL as f64;
        let y0 = fy.floor() as usize;
        let ty = fy - y0 as f64;
        for j in 0..w {
            let fx = j as f64 / CELL as f64;
            let x0 = fx.floor() as usize;
            let tx = fx - x0 as f64;
            for c in 0..d {
                let at = |y: usize, x: usize| coarse[(y * gw + x) * d + c];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                out[(i * w + j) * d + c] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

/// Generate a scene with `n_repeats` copies of one random patch.
///
/// `shift` is `(rows, columns)`; the ground-truth flow is the constant
/// `(u, v) = (shift.1, shift.0)`. Copy 0 is pristine and probed; copies
/// `1..n_repeats` are perturbed per cell with Gaussian impurity of scale
/// `IMPURITY_FACTOR * noise_std`, orthogonalized against the patch content
/// so the copies stay indistinguishable to plain correlation at iteration 0.
/// The query view is the shifted canvas plus `N(0, noise_std)` everywhere.
pub fn make_repetitive_scene(
    h: usize,
    w: usize,
    d: usize,
    n_repeats: usize,
    shift: (isize, isize),
    noise_std: f64,
    seed: u64,
) -> Result<SyntheticScene> {
    if n_repeats < 2 {
        return Err(GocorError::InvalidParameter(format!(
            "need at least 2 copies, got {n_repeats}"
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(GocorError::InvalidParameter(format!(
            "noise_std must be finite and >= 0, got {noise_std}"
        )));
    }
    let (dy, dx) = shift;
    let (ady, adx) = (dy.unsigned_abs(), dx.unsigned_abs());
    let (ch, cw) = (h + ady, w + adx);
    // Window origins inside the canvas; chosen so the true match of a
    // reference location (i, j) is the query location (i + dy, j + dx).
    let (ry, rx) = (dy.max(0) as usize, dx.max(0) as usize);
    let (qy, qx) = ((-dy).max(0) as usize, (-dx).max(0) as usize);

    // Patches must be fully visible in both windows.
    let pr = PATCH_SIZE / 2;
    let iy0 = ry.max(qy) + pr;
    let ix0 = rx.max(qx) + pr;
    let iy1 = (ry + h).min(qy + h);
    let ix1 = (rx + w).min(qx + w);
    if iy1 < iy0 + PATCH_SIZE || ix1 < ix0 + PATCH_SIZE {
        return Err(GocorError::GeometryInfeasible(format!(
            "shift ({dy}, {dx}) leaves no room for a {PATCH_SIZE}x{PATCH_SIZE} patch in a {h}x{w} grid"
        )));
    }
    let (iy1, ix1) = (iy1 - 1 - pr, ix1 - 1 - pr);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Unit-norm patch cells.
    let mut patch = vec![0.0; PATCH_SIZE * PATCH_SIZE * d];
    for cell in 0..PATCH_SIZE * PATCH_SIZE {
        let v = &mut patch[cell * d..(cell + 1) * d];
        loop {
            let mut norm_sq: f64 = 0.0;
            for x in v.iter_mut() {
                *x = StandardNormal.sample(&mut rng);
                norm_sq += *x * *x;
            }
            if norm_sq > 1e-12 {
                let inv = 1.0 / norm_sq.sqrt();
                for x in v.iter_mut() {
                    *x *= inv;
                }
                break;
            }
        }
    }

    // Rejection-sample well-separated centers.
    let mut centers: Vec<(usize, usize)> = Vec::with_capacity(n_repeats);
    let mut tries = 0usize;
    while centers.len() < n_repeats {
        tries += 1;
        if tries > 10_000 {
            return Err(GocorError::GeometryInfeasible(format!(
                "could not place {n_repeats} patches at separation {MIN_SEPARATION} in a {h}x{w} grid"
            )));
        }
        let cy = rng.gen_range(iy0..=iy1);
        let cx = rng.gen_range(ix0..=ix1);
        let ok = centers.iter().all(|&(py, px)| {
            let dy = cy as f64 - py as f64;
            let dx = cx as f64 - px as f64;
            (dy * dy + dx * dx).sqrt() >= MIN_SEPARATION
        });
        if ok {
            centers.push((cy, cx));
        }
    }

    // Orthonormal basis of the patch cells, used to orthogonalize the copy
    // impurity.
    let mut patch_basis: Vec<Vec<f64>> = Vec::new();
    for cell in 0..PATCH_SIZE * PATCH_SIZE {
        let mut v = patch[cell * d..(cell + 1) * d].to_vec();
        for b in &patch_basis {
            project_out(&mut v, b);
        }
        let norm_sq: f64 = v.iter().map(|x| x * x).sum();
        if norm_sq > 1e-12 {
            let inv = 1.0 / norm_sq.sqrt();
            for x in v.iter_mut() {
                *x *= inv;
            }
            patch_basis.push(v);
        }
    }

    // Canvas: smooth background, then paste the copies. Distractor copies
    // are perturbed in directions orthogonal to the whole patch span, so
    // plain correlation against any combination of patch vectors cannot
    // tell the copies apart, while the reference objective, which sees the
    // distractor features themselves, can.
    let mut canvas = smooth_background(ch, cw, d, BACKGROUND_STD, &mut rng);
    for (copy, &(cy, cx)) in centers.iter().enumerate() {
        for pi in 0..PATCH_SIZE {
            for pj in 0..PATCH_SIZE {
                let y = cy + pi - pr;
                let x = cx + pj - pr;
                let src = &patch[(pi * PATCH_SIZE + pj) * d..(pi * PATCH_SIZE + pj + 1) * d];
                let dst = &mut canvas[(y * cw + x) * d..(y * cw + x + 1) * d];
                if copy == 0 {
                    dst.copy_from_slice(src);
                    continue;
                }
                let mut impurity: Vec<f64> = (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        IMPURITY_FACTOR * noise_std * z
                    })
                    .collect();
                for b in &patch_basis {
                    project_out(&mut impurity, b);
                }
                for (out, (&v, &n)) in dst.iter_mut().zip(src.iter().zip(&impurity)) {
                    *out = v + n;
                }
            }
        }
    }

    let window = |oy: usize, ox: usize| {
        let mut data = vec![0.0; h * w * d];
        for i in 0..h {
            for j in 0..w {
                let src = &canvas[((oy + i) * cw + ox + j) * d..((oy + i) * cw + ox + j + 1) * d];
                data[(i * w + j) * d..(i * w + j + 1) * d].copy_from_slice(src);
            }
        }
        data
    };

    let f_r = FeatureMap::new(h, w, d, window(ry, rx))?;
    let mut q_data = window(qy, qx);
    for v in q_data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += noise_std * z;
    }
    let f_q = FeatureMap::new(h, w, d, q_data)?;

    let probe = (centers[0].0 - ry, centers[0].1 - rx);
    let distractor_locations = centers[1..]
        .iter()
        .map(|&(cy, cx)| (cy - qy, cx - qx))
        .collect();

    Ok(SyntheticScene {
        f_r,
        f_q,
        gt_flow: FlowField::constant(h, w, dx as f64, dy as f64),
        distractor_locations,
        probe,
        shift,
    })
}

/// Confidence at the true match minus the best confidence farther than
/// `rho_excl` from it, read from the probe's slice.
///
/// For global volumes `true_loc` is an absolute query position; for local
/// volumes it is a displacement.
pub fn margin_statistic(
    volume: &CorrespondenceVolume,
    probe: (usize, usize),
    true_loc: (isize, isize),
    rho_excl: f64,
) -> Result<f64> {
    let (h, w) = (volume.height(), volume.width());
    if probe.0 >= h || probe.1 >= w {
        return Err(GocorError::IndexOutOfRange(format!(
            "probe {probe:?} outside {h}x{w} grid"
        )));
    }
    let true_conf = volume.value(probe.0, probe.1, true_loc.0, true_loc.1)?;
    let slice = volume.slice(probe.0, probe.1);
    let mut best: Option<f64> = None;
    match volume.kind() {
        VolumeKind::Global => {
            for (cell, &conf) in slice.iter().enumerate() {
                let (k, l) = ((cell / w) as isize, (cell % w) as isize);
                let (ddy, ddx) = (k - true_loc.0, l - true_loc.1);
                if (((ddy * ddy + ddx * ddx) as f64).sqrt()) > rho_excl {
                    best = Some(best.map_or(conf, |b: f64| b.max(conf)));
                }
            }
        }
        VolumeKind::Local { radius } => {
            let side = 2 * radius + 1;
            for (cell, &conf) in slice.iter().enumerate() {
                let k = (cell / side) as isize - radius as isize;
                let l = (cell % side) as isize - radius as isize;
                let (ddy, ddx) = (k - true_loc.0, l - true_loc.1);
                if (((ddy * ddy + ddx * ddx) as f64).sqrt()) > rho_excl {
                    best = Some(best.map_or(conf, |b: f64| b.max(conf)));
                }
            }
        }
    }
    match best {
        Some(b) => Ok(true_conf - b),
        None => Err(GocorError::EmptyInput(
            "no volume cells beyond the exclusion radius".into(),
        )),
    }
}

/// Per-iteration measurements of one disambiguation run.
#[derive(Debug, Clone)]
pub struct DisambiguationReport {
    /// Margin at iteration counts `0..=num_iter`.
    pub margins: Vec<f64>,
    /// Whether the true match was the unique argmax of the probe slice.
    pub argmax_correct: Vec<bool>,
    /// Wall-clock milliseconds spent per iteration count (solve step plus
    /// volume evaluation). Not deterministic; excluded from the
    /// reproducible reports.
    pub elapsed_ms: Vec<f64>,
}

fn unique_argmax_hit(
    volume: &CorrespondenceVolume,
    probe: (usize, usize),
    true_loc: (isize, isize),
) -> Result<bool> {
    let true_conf = volume.value(probe.0, probe.1, true_loc.0, true_loc.1)?;
    let slice = volume.slice(probe.0, probe.1);
    let (w, kind) = (volume.width(), volume.kind());
    let true_cell = match kind {
        VolumeKind::Global => true_loc.0 as usize * w + true_loc.1 as usize,
        VolumeKind::Local { radius } => {
            let side = 2 * radius + 1;
            (true_loc.0 + radius as isize) as usize * side + (true_loc.1 + radius as isize) as usize
        }
    };
    Ok(slice
        .iter()
        .enumerate()
        .all(|(cell, &conf)| cell == true_cell || conf < true_conf))
}

/// Track the margin statistic and argmax correctness over iteration counts
/// `0..=cfg.num_iter` of the filter-map solve.
///
/// The steepest-descent trajectory is prefix-stable in the iteration count,
/// so one solve suffices: the volume after `n` steps equals the full
/// pipeline run with `num_iter = n`.
pub fn run_disambiguation_experiment(
    scene: &SyntheticScene,
    params: &ObjectiveParams,
    cfg: &SolverConfig,
    init_cfg: &InitializerConfig,
    rho_excl: f64,
) -> Result<DisambiguationReport> {
    let true_loc: (isize, isize) = match cfg.mode {
        VolumeKind::Global => {
            let t = scene.true_match();
            (t.0 as isize, t.1 as isize)
        }
        VolumeKind::Local { radius } => {
            let r = radius as isize;
            if scene.shift.0.abs() > r || scene.shift.1.abs() > r {
                return Err(GocorError::InvalidParameter(format!(
                    "scene shift {:?} exceeds the local radius {radius}",
                    scene.shift
                )));
            }
            scene.shift
        }
    };

    let mut margins = Vec::with_capacity(cfg.num_iter + 1);
    let mut argmax_correct = Vec::with_capacity(cfg.num_iter + 1);
    let mut elapsed_ms = Vec::with_capacity(cfg.num_iter + 1);

    let start = Instant::now();
    let mut w = init_filter_map(&scene.f_r, init_cfg)?.w;
    let mut last = start.elapsed();
    for n in 0..=cfg.num_iter {
        if n > 0 {
            let step = crate::solver::sd_iteration(&w, &scene.f_r, &scene.f_q, params, cfg)?;
            w = step.w_next;
        }
        let volume = correlate(&w, &scene.f_q, cfg.mode)?;
        margins.push(margin_statistic(&volume, scene.probe, true_loc, rho_excl)?);
        argmax_correct.push(unique_argmax_hit(&volume, scene.probe, true_loc)?);
        let now = start.elapsed();
        elapsed_ms.push((now - last).as_secs_f64() * 1e3);
        last = now;
    }

    Ok(DisambiguationReport {
        margins,
        argmax_correct,
        elapsed_ms,
    })
}
