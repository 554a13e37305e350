//! Independent brute-force reference implementations.
//!
//! Everything here is a literal transcription of the defining formulas with
//! explicit nested loops, written separately from the production kernels so
//! the two can be checked against each other. These run at desk scale only;
//! quadratic (or worse) complexity is accepted.

use crate::corrvol::{CorrespondenceVolume, FeatureMap, VolumeKind};
use crate::error::Result;
use crate::objective::{ChannelField, ObjectiveParams, QueryObjectiveParams, WeightFunction};
use crate::solver::SolverConfig;

/// Triple-loop correlation, definitionally identical to the production
/// global/local kernels.
pub fn brute_corr(w: &FeatureMap, f: &FeatureMap, kind: VolumeKind) -> Result<CorrespondenceVolume> {
    w.check_same_shape(f)?;
    let (h, wd, d) = (w.height(), w.width(), w.depth());
    let mut out = CorrespondenceVolume::zeros(h, wd, kind);
    let slice_len = out.slice_len();
    match kind {
        VolumeKind::Global => {
            for i in 0..h {
                for j in 0..wd {
                    let base = (i * wd + j) * slice_len;
                    for k in 0..h {
                        for l in 0..wd {
                            let mut acc = 0.0;
                            for c in 0..d {
                                acc += w.data()[(i * wd + j) * d + c] * f.data()[(k * wd + l) * d + c];
                            }
                            out.data_mut()[base + k * wd + l] = acc;
                        }
                    }
                }
            }
        }
        VolumeKind::Local { radius } => {
            let r = radius as isize;
            let side = 2 * radius + 1;
            for i in 0..h {
                for j in 0..wd {
                    let base = (i * wd + j) * slice_len;
                    for k in -r..=r {
                        for l in -r..=r {
                            let (ti, tj) = (i as isize + k, j as isize + l);
                            let cell = (k + r) as usize * side + (l + r) as usize;
                            if ti < 0 || tj < 0 || ti as usize >= h || tj as usize >= wd {
                                out.data_mut()[base + cell] = 0.0;
                                continue;
                            }
                            let q = ti as usize * wd + tj as usize;
                            let mut acc = 0.0;
                            for c in 0..d {
                                acc += w.data()[(i * wd + j) * d + c] * f.data()[q * d + c];
                            }
                            out.data_mut()[base + cell] = acc;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Literal entry-by-entry two-stage convolution with zero padding; ground
/// truth for the factorized query residual.
pub fn naive_conv4d_seq(vol: &CorrespondenceVolume, params: &QueryObjectiveParams) -> ChannelField {
    let (h, w) = (vol.height(), vol.width());
    let kind = vol.kind();
    let (kh, kw) = match kind {
        VolumeKind::Global => (h, w),
        VolumeKind::Local { radius } => (2 * radius + 1, 2 * radius + 1),
    };
    let cell = kh * kw;
    let ks = params.kernel_size();
    let pad = (ks / 2) as isize;
    let (q_mid, q_out) = (params.mid_channels(), params.out_channels());
    let ka = params.kernel_a();
    let kb = params.kernel_b();

    let mut mid = ChannelField::zeros(q_mid, h, w, kind);
    for qp in 0..q_mid {
        for loc in 0..h * w {
            for k in 0..kh {
                for l in 0..kw {
                    let mut acc = 0.0;
                    for u in 0..ks {
                        for v in 0..ks {
                            let sk = k as isize + u as isize - pad;
                            let sl = l as isize + v as isize - pad;
                            if sk < 0 || sl < 0 || sk as usize >= kh || sl as usize >= kw {
                                continue;
                            }
                            acc += ka[(qp * ks + u) * ks + v]
                                * vol.data()[loc * cell + sk as usize * kw + sl as usize];
                        }
                    }
                    mid.data_mut()[(qp * h * w + loc) * cell + k * kw + l] = acc;
                }
            }
        }
    }

    let mut out = ChannelField::zeros(q_out, h, w, kind);
    for q in 0..q_out {
        for i in 0..h {
            for j in 0..w {
                for c in 0..cell {
                    let mut acc = 0.0;
                    for qp in 0..q_mid {
                        for u in 0..ks {
                            for v in 0..ks {
                                let si = i as isize + u as isize - pad;
                                let sj = j as isize + v as isize - pad;
                                if si < 0 || sj < 0 || si as usize >= h || sj as usize >= w {
                                    continue;
                                }
                                let sloc = si as usize * w + sj as usize;
                                acc += kb[((q * q_mid + qp) * ks + u) * ks + v]
                                    * mid.data()[(qp * h * w + sloc) * cell + c];
                            }
                        }
                    }
                    out.data_mut()[(q * h * w + i * w + j) * cell + c] = acc;
                }
            }
        }
    }
    out
}

/// Central-difference gradient of an arbitrary scalar function of a filter map.
pub fn numeric_grad(
    loss_fn: impl Fn(&FeatureMap) -> f64,
    w: &FeatureMap,
    h: f64,
) -> FeatureMap {
    let mut grad = FeatureMap::zeros(w.height(), w.width(), w.depth());
    let mut probe = w.clone();
    for idx in 0..w.data().len() {
        let original = probe.data()[idx];
        probe.data_mut()[idx] = original + h;
        let plus = loss_fn(&probe);
        probe.data_mut()[idx] = original - h;
        let minus = loss_fn(&probe);
        probe.data_mut()[idx] = original;
        grad.data_mut()[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}

fn eval_weight(wf: &WeightFunction, d: f64) -> f64 {
    // Local transcription of the basis expansion (hat functions + squash).
    let n = wf.count();
    let delta = wf.delta();
    let mut acc = 0.0;
    for (k, &c) in wf.coeffs().iter().enumerate() {
        let knot = k as f64 * delta;
        let rho = if k + 1 < n {
            (1.0 - (d - knot).abs() / delta).max(0.0)
        } else {
            (1.0 + (d - knot) / delta).clamp(0.0, 1.0)
        };
        acc += c * rho;
    }
    match wf.squash() {
        crate::objective::Squash::None => acc,
        crate::objective::Squash::Sigmoid => 1.0 / (1.0 + (-acc).exp()),
    }
}

fn slope_at(c: f64, vp: f64, vn: f64, eta: f64) -> f64 {
    let mid = 0.5 * (vp + vn);
    if eta == 0.0 && c == 0.0 {
        return mid;
    }
    0.5 * (vp - vn) * (c / (c * c + eta * eta).sqrt()) + mid
}

fn distance(i: usize, j: usize, w: usize, kind: VolumeKind, cell: usize) -> f64 {
    match kind {
        VolumeKind::Global => {
            let (k, l) = (cell / w, cell % w);
            let di = i as isize - k as isize;
            let dj = j as isize - l as isize;
            ((di * di + dj * dj) as f64).sqrt()
        }
        VolumeKind::Local { radius } => {
            let side = 2 * radius + 1;
            let k = (cell / side) as isize - radius as isize;
            let l = (cell % side) as isize - radius as isize;
            ((k * k + l * l) as f64).sqrt()
        }
    }
}

/// Exact minimizer of the linearized squared-residual model along `-g`.
///
/// Assembles `phi(alpha) = ||r_r - alpha Jr g||^2 + [q] ||r_q - alpha Jq g||^2
/// + ||lambda (w - alpha g)||^2` from scratch (brute-force correlation and
/// naive convolution) and solves `phi'(alpha) = 0`.
pub fn line_search_oracle(
    w: &FeatureMap,
    g: &FeatureMap,
    f_r: &FeatureMap,
    f_q: &FeatureMap,
    params: &ObjectiveParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    let kind = cfg.mode;
    let (h, wd) = (f_r.height(), f_r.width());
    let c_w = brute_corr(w, f_r, kind)?;
    let c_g = brute_corr(g, f_r, kind)?;
    let slice_len = c_w.slice_len();
    let rp = &params.reference;

    let mut numer = 0.0;
    let mut denom = 0.0;
    for loc in 0..h * wd {
        let (i, j) = (loc / wd, loc % wd);
        for cell in 0..slice_len {
            let d = distance(i, j, wd, kind, cell);
            let vp = eval_weight(&rp.v_plus, d);
            let vn = vp * eval_weight(&rp.m, d);
            let y = vp * eval_weight(&rp.y_prime, d);
            let cv = c_w.data()[loc * slice_len + cell];
            let sigma = 0.5 * (vp - vn) * ((cv * cv + rp.eta * rp.eta).sqrt() - rp.eta)
                + 0.5 * (vp + vn) * cv;
            let residual = sigma - y;
            let jg = slope_at(cv, vp, vn, rp.eta) * c_g.data()[loc * slice_len + cell];
            numer += residual * jg;
            denom += jg * jg;
        }
    }

    if cfg.use_query {
        let r_q = naive_conv4d_seq(&brute_corr(w, f_q, kind)?, &params.query);
        let j_q = naive_conv4d_seq(&brute_corr(g, f_q, kind)?, &params.query);
        for (&r, &jg) in r_q.data().iter().zip(j_q.data()) {
            numer += r * jg;
            denom += jg * jg;
        }
    }

    let lam_sq = cfg.lambda * cfg.lambda;
    let mut wg = 0.0;
    let mut gg = 0.0;
    for (&a, &b) in w.data().iter().zip(g.data()) {
        wg += a * b;
        gg += b * b;
    }
    numer += lam_sq * wg;
    denom += lam_sq * gg;

    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok(numer / denom)
}
