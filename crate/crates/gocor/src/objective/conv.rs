//! Factorized 4D convolution over correspondence volumes.
//!
//! The regularizer kernel acts on the full 4D volume but is factorized as
//! two 2D stages: `kernel_a` convolves each `(i,j)` slice over the query
//! dims `(k,l)` (1 -> Q' channels), then `kernel_b` convolves over the
//! reference dims `(i,j)` (Q' -> Q channels). Both stages use zero padding
//! of `(K-1)/2` so shapes are preserved.
//!
//! Tap accumulation order is fixed to `(channel, u, v)` with out-of-range
//! taps skipped; per-entry sums are then identical to the naive
//! entry-by-entry transcription, which the oracle suite checks for exact
//! equality.

use crate::corrvol::{CorrespondenceVolume, VolumeKind};
use crate::error::{GocorError, Result};
use crate::exec;

/// The factorized regularizer kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryObjectiveParams {
    k: usize,
    q_mid: usize,
    q_out: usize,
    /// `[q'][u][v]`, length `q_mid * k * k`.
    kernel_a: Vec<f64>,
    /// `[q][q'][u][v]`, length `q_out * q_mid * k * k`.
    kernel_b: Vec<f64>,
}

impl QueryObjectiveParams {
    pub fn new(
        k: usize,
        q_mid: usize,
        q_out: usize,
        kernel_a: Vec<f64>,
        kernel_b: Vec<f64>,
    ) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(GocorError::InvalidParameter(format!(
                "kernel size must be odd, got {k}"
            )));
        }
        if q_mid == 0 || q_out == 0 {
            return Err(GocorError::InvalidParameter(
                "kernel channel counts must be positive".into(),
            ));
        }
        if kernel_a.len() != q_mid * k * k {
            return Err(GocorError::DimensionMismatch(format!(
                "kernel_a needs {} weights, got {}",
                q_mid * k * k,
                kernel_a.len()
            )));
        }
        if kernel_b.len() != q_out * q_mid * k * k {
            return Err(GocorError::DimensionMismatch(format!(
                "kernel_b needs {} weights, got {}",
                q_out * q_mid * k * k,
                kernel_b.len()
            )));
        }
        for (data, context) in [(&kernel_a, "kernel_a"), (&kernel_b, "kernel_b")] {
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(GocorError::NonFinite {
                    context: if context == "kernel_a" {
                        "kernel_a weights"
                    } else {
                        "kernel_b weights"
                    },
                    index,
                });
            }
        }
        Ok(Self {
            k,
            q_mid,
            q_out,
            kernel_a,
            kernel_b,
        })
    }

    /// Pass-through kernels: single channel, delta at the center tap.
    pub fn identity(k: usize) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(GocorError::InvalidParameter(format!(
                "kernel size must be odd, got {k}"
            )));
        }
        let center = (k / 2) * k + k / 2;
        let mut kernel_a = vec![0.0; k * k];
        kernel_a[center] = 1.0;
        let mut kernel_b = vec![0.0; k * k];
        kernel_b[center] = 1.0;
        Self::new(k, 1, 1, kernel_a, kernel_b)
    }

    /// Seeded uniform init in `+-1/sqrt(fan_in)`, the standard untrained
    /// starting point for convolution weights.
    pub fn seeded(k: usize, q_mid: usize, q_out: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bound_a = 1.0 / ((k * k) as f64).sqrt();
        let bound_b = 1.0 / ((q_mid * k * k) as f64).sqrt();
        let kernel_a = (0..q_mid * k * k)
            .map(|_| rng.gen_range(-bound_a..bound_a))
            .collect();
        let kernel_b = (0..q_out * q_mid * k * k)
            .map(|_| rng.gen_range(-bound_b..bound_b))
            .collect();
        Self::new(k, q_mid, q_out, kernel_a, kernel_b)
    }

    /// Default geometry: 3x3 kernels, 16 intermediate and output channels.
    pub fn seeded_default(seed: u64) -> Self {
        Self::seeded(3, 16, 16, seed).expect("default kernel geometry")
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn mid_channels(&self) -> usize {
        self.q_mid
    }

    pub fn out_channels(&self) -> usize {
        self.q_out
    }

    /// First-stage weights, laid out `[q'][u][v]`.
    pub fn kernel_a(&self) -> &[f64] {
        &self.kernel_a
    }

    /// Second-stage weights, laid out `[q][q'][u][v]`.
    pub fn kernel_b(&self) -> &[f64] {
        &self.kernel_b
    }

    #[inline]
    fn a_at(&self, qp: usize, u: usize, v: usize) -> f64 {
        self.kernel_a[(qp * self.k + u) * self.k + v]
    }

    #[inline]
    fn b_at(&self, q: usize, qp: usize, u: usize, v: usize) -> f64 {
        self.kernel_b[((q * self.q_mid + qp) * self.k + u) * self.k + v]
    }
}

/// A multi-channel volume-shaped field, row-major `(c, i, j, k, l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelField {
    channels: usize,
    h: usize,
    w: usize,
    kind: VolumeKind,
    data: Vec<f64>,
}

impl ChannelField {
    pub fn zeros(channels: usize, h: usize, w: usize, kind: VolumeKind) -> Self {
        let len = channels * h * w * kind.slice_len(h, w);
        Self {
            channels,
            h,
            w,
            kind,
            data: vec![0.0; len],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn cell_len(&self) -> usize {
        self.kind.slice_len(self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The `(k,l)` plane of channel `c` at grid location `(i,j)`.
    pub fn plane(&self, c: usize, i: usize, j: usize) -> &[f64] {
        let len = self.cell_len();
        let start = ((c * self.h + i) * self.w + j) * len;
        &self.data[start..start + len]
    }

    pub fn norm_sq(&self) -> f64 {
        let len = self.cell_len();
        exec::sum_indexed(self.channels * self.h * self.w, |row| {
            let plane = &self.data[row * len..(row + 1) * len];
            let mut acc = 0.0;
            for &v in plane {
                acc += v * v;
            }
            acc
        })
    }

    pub fn dot(&self, other: &ChannelField) -> Result<f64> {
        if (self.channels, self.h, self.w, self.kind)
            != (other.channels, other.h, other.w, other.kind)
        {
            return Err(GocorError::DimensionMismatch(
                "channel fields differ in shape".into(),
            ));
        }
        let len = self.cell_len();
        Ok(exec::sum_indexed(self.channels * self.h * self.w, |row| {
            let a = &self.data[row * len..(row + 1) * len];
            let b = &other.data[row * len..(row + 1) * len];
            let mut acc = 0.0;
            for (&x, &y) in a.iter().zip(b) {
                acc += x * y;
            }
            acc
        }))
    }
}

/// Plane dims of the `(k,l)` axes.
fn plane_dims(h: usize, w: usize, kind: VolumeKind) -> (usize, usize) {
    match kind {
        VolumeKind::Global => (h, w),
        VolumeKind::Local { radius } => (2 * radius + 1, 2 * radius + 1),
    }
}

/// `dst[(k,l)] += coef * src[(k + sk, l + sl)]` over the valid overlap.
#[inline]
fn plane_shift_add(dst: &mut [f64], src: &[f64], kh: usize, kw: usize, sk: isize, sl: isize, coef: f64) {
    let k0 = (-sk).max(0) as usize;
    let k1 = ((kh as isize - sk).min(kh as isize)).max(0) as usize;
    let l0 = (-sl).max(0) as usize;
    let l1 = ((kw as isize - sl).min(kw as isize)).max(0) as usize;
    for k in k0..k1 {
        let drow = k * kw;
        let srow = ((k as isize + sk) as usize) * kw;
        for l in l0..l1 {
            dst[drow + l] += coef * src[srow + (l as isize + sl) as usize];
        }
    }
}

/// `dst[(k,l)] += coef * src[(k,l)]` over whole planes.
#[inline]
fn plane_axpy(dst: &mut [f64], src: &[f64], coef: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += coef * s;
    }
}

/// Apply the full factorized operator `R * x`: stage `kernel_a` over `(k,l)`,
/// then stage `kernel_b` over `(i,j)`.
pub fn conv_apply(params: &QueryObjectiveParams, vol: &CorrespondenceVolume) -> ChannelField {
    let (h, w) = (vol.height(), vol.width());
    let kind = vol.kind();
    let (kh, kw) = plane_dims(h, w, kind);
    let cell = kh * kw;
    let ks = params.k;
    let pad = ks / 2;

    // Stage A: per (i,j), 1 -> q_mid channels over the (k,l) plane.
    let mut mid = ChannelField::zeros(params.q_mid, h, w, kind);
    {
        let vdata = vol.data();
        exec::for_each_chunk_mut(mid.data_mut(), cell, |row, dst| {
            let qp = row / (h * w);
            let loc = row % (h * w);
            let src = &vdata[loc * cell..(loc + 1) * cell];
            for u in 0..ks {
                for v in 0..ks {
                    let coef = params.a_at(qp, u, v);
                    let sk = u as isize - pad as isize;
                    let sl = v as isize - pad as isize;
                    plane_shift_add(dst, src, kh, kw, sk, sl, coef);
                }
            }
        });
    }

    // Stage B: per (k,l) plane, q_mid -> q_out channels over (i,j).
    let mut out = ChannelField::zeros(params.q_out, h, w, kind);
    {
        let mdata = mid.data();
        exec::for_each_chunk_mut(out.data_mut(), cell, |row, dst| {
            let q = row / (h * w);
            let loc = row % (h * w);
            let (i, j) = (loc / w, loc % w);
            for qp in 0..params.q_mid {
                for u in 0..ks {
                    for v in 0..ks {
                        let si = i as isize + u as isize - pad as isize;
                        let sj = j as isize + v as isize - pad as isize;
                        if si < 0 || sj < 0 || si as usize >= h || sj as usize >= w {
                            continue;
                        }
                        let coef = params.b_at(q, qp, u, v);
                        let sloc = si as usize * w + sj as usize;
                        let src = &mdata[(qp * h * w + sloc) * cell..(qp * h * w + sloc + 1) * cell];
                        plane_axpy(dst, src, coef);
                    }
                }
            }
        });
    }
    out
}

/// Transpose of [`conv_apply`]: `kernel_b` stage transposed, then `kernel_a`
/// stage transposed. Satisfies `<R*x, y> = <x, conv_adjoint(y)>`.
pub fn conv_adjoint(params: &QueryObjectiveParams, field: &ChannelField) -> Result<CorrespondenceVolume> {
    if field.channels() != params.q_out {
        return Err(GocorError::DimensionMismatch(format!(
            "field has {} channels, kernels produce {}",
            field.channels(),
            params.q_out
        )));
    }
    let (h, w) = (field.height(), field.width());
    let kind = field.kind();
    let (kh, kw) = plane_dims(h, w, kind);
    let cell = kh * kw;
    let ks = params.k;
    let pad = ks / 2;

    // Transposed stage B: q_out -> q_mid channels, gathering over (i,j).
    let mut mid = ChannelField::zeros(params.q_mid, h, w, kind);
    {
        let ydata = field.data();
        exec::for_each_chunk_mut(mid.data_mut(), cell, |row, dst| {
            let qp = row / (h * w);
            let loc = row % (h * w);
            let (i, j) = (loc / w, loc % w);
            for q in 0..params.q_out {
                for u in 0..ks {
                    for v in 0..ks {
                        let si = i as isize - (u as isize - pad as isize);
                        let sj = j as isize - (v as isize - pad as isize);
                        if si < 0 || sj < 0 || si as usize >= h || sj as usize >= w {
                            continue;
                        }
                        let coef = params.b_at(q, qp, u, v);
                        let sloc = si as usize * w + sj as usize;
                        let src = &ydata[(q * h * w + sloc) * cell..(q * h * w + sloc + 1) * cell];
                        plane_axpy(dst, src, coef);
                    }
                }
            }
        });
    }

    // Transposed stage A: q_mid channels -> single volume, gathering over (k,l).
    let mut out = CorrespondenceVolume::zeros(h, w, kind);
    {
        let mdata = mid.data();
        exec::for_each_chunk_mut(out.data_mut(), cell, |loc, dst| {
            for qp in 0..params.q_mid {
                let src = &mdata[(qp * h * w + loc) * cell..(qp * h * w + loc + 1) * cell];
                for u in 0..ks {
                    for v in 0..ks {
                        let coef = params.a_at(qp, u, v);
                        let sk = -(u as isize - pad as isize);
                        let sl = -(v as isize - pad as isize);
                        plane_shift_add(dst, src, kh, kw, sk, sl, coef);
                    }
                }
            }
        });
    }
    Ok(out)
}
