//! Dense feature-map storage and the global/local correlation operators
//! with their exact adjoints.
//!
//! Layout conventions are fixed so that serialized volumes are
//! bit-reproducible: feature maps are row-major `(i, j, d)` with the channel
//! innermost, global volumes are row-major `(i, j, k, l)` with `(k, l)`
//! absolute query positions, and local volumes index `(k, l)` as
//! displacements in `{-R..R}^2`.

use crate::error::{GocorError, Result};
use crate::exec;

/// An `H x W` grid of `D`-dimensional real feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    /// Build a map from row-major `(i, j, d)` data, validating length and finiteness.
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(GocorError::InvalidParameter(format!(
                "feature map dimensions must be positive, got {h}x{w}x{d}"
            )));
        }
        if data.len() != h * w * d {
            return Err(GocorError::DimensionMismatch(format!(
                "feature map {h}x{w}x{d} needs {} values, got {}",
                h * w * d,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(GocorError::NonFinite {
                context: "feature map",
                index,
            });
        }
        Ok(Self { h, w, d, data })
    }

    pub fn zeros(h: usize, w: usize, d: usize) -> Self {
        Self {
            h,
            w,
            d,
            data: vec![0.0; h * w * d],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn depth(&self) -> usize {
        self.d
    }

    /// Number of grid locations `H * W`.
    pub fn locations(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The feature vector at grid location `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.w + j) * self.d;
        &self.data[start..start + self.d]
    }

    /// Squared Euclidean norm of the whole map.
    pub fn norm_sq(&self) -> f64 {
        let d = self.d;
        exec::sum_indexed(self.locations(), |loc| {
            let row = &self.data[loc * d..(loc + 1) * d];
            let mut acc = 0.0;
            for &v in row {
                acc += v * v;
            }
            acc
        })
    }

    /// Inner product with another map of the same shape.
    pub fn dot(&self, other: &FeatureMap) -> Result<f64> {
        self.check_same_shape(other)?;
        let d = self.d;
        Ok(exec::sum_indexed(self.locations(), |loc| {
            let a = &self.data[loc * d..(loc + 1) * d];
            let b = &other.data[loc * d..(loc + 1) * d];
            let mut acc = 0.0;
            for (&x, &y) in a.iter().zip(b) {
                acc += x * y;
            }
            acc
        }))
    }

    /// `self <- self + scale * other`, in place.
    pub fn axpy(&mut self, scale: f64, other: &FeatureMap) -> Result<()> {
        self.check_same_shape(other)?;
        for (dst, src) in self.data.iter_mut().zip(&other.data) {
            *dst += scale * src;
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if (self.h, self.w, self.d) != (other.h, other.w, other.d) {
            return Err(GocorError::DimensionMismatch(format!(
                "feature maps {}x{}x{} vs {}x{}x{}",
                self.h, self.w, self.d, other.h, other.w, other.d
            )));
        }
        Ok(())
    }
}

/// Global (all pairs) or local (displacement-limited) volume indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Global,
    Local { radius: usize },
}

impl VolumeKind {
    /// Entries in one `(i, j)` slice for an `H x W` grid.
    pub fn slice_len(&self, h: usize, w: usize) -> usize {
        match self {
            VolumeKind::Global => h * w,
            VolumeKind::Local { radius } => (2 * radius + 1) * (2 * radius + 1),
        }
    }
}

/// A 4D grid of matching confidences (or any volume-shaped field).
///
/// Global volumes hold `(H*W)^2` values; local volumes hold
/// `H*W*(2R+1)^2` values with `(k, l)` displacement indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceVolume {
    h: usize,
    w: usize,
    kind: VolumeKind,
    data: Vec<f64>,
}

impl CorrespondenceVolume {
    pub fn zeros(h: usize, w: usize, kind: VolumeKind) -> Self {
        let len = h * w * kind.slice_len(h, w);
        Self {
            h,
            w,
            kind,
            data: vec![0.0; len],
        }
    }

    /// Build from raw row-major data, validating the length.
    pub fn new(h: usize, w: usize, kind: VolumeKind, data: Vec<f64>) -> Result<Self> {
        let expect = h * w * kind.slice_len(h, w);
        if data.len() != expect {
            return Err(GocorError::DimensionMismatch(format!(
                "volume {h}x{w} ({kind:?}) needs {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Self { h, w, kind, data })
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

    /// Entries in one `(i, j)` slice.
    pub fn slice_len(&self) -> usize {
        self.kind.slice_len(self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The confidences of reference location `(i, j)` against all query cells.
    pub fn slice(&self, i: usize, j: usize) -> &[f64] {
        let len = self.slice_len();
        let start = (i * self.w + j) * len;
        &self.data[start..start + len]
    }

    /// Value at `(i, j, k, l)`: `(k, l)` absolute for global volumes,
    /// displacement in `{-R..R}^2` for local ones.
    pub fn value(&self, i: usize, j: usize, k: isize, l: isize) -> Result<f64> {
        let slice = self.slice(i, j);
        match self.kind {
            VolumeKind::Global => {
                if k < 0 || l < 0 || k as usize >= self.h || l as usize >= self.w {
                    return Err(GocorError::IndexOutOfRange(format!(
                        "global volume position ({k}, {l})"
                    )));
                }
                Ok(slice[k as usize * self.w + l as usize])
            }
            VolumeKind::Local { radius } => {
                let r = radius as isize;
                if k < -r || k > r || l < -r || l > r {
                    return Err(GocorError::IndexOutOfRange(format!(
                        "local displacement ({k}, {l}) with radius {radius}"
                    )));
                }
                let side = 2 * radius + 1;
                Ok(slice[(k + r) as usize * side + (l + r) as usize])
            }
        }
    }

    /// Sum of squared entries, with the fixed per-slice association.
    pub fn norm_sq(&self) -> f64 {
        let len = self.slice_len();
        exec::sum_indexed(self.h * self.w, |loc| {
            let row = &self.data[loc * len..(loc + 1) * len];
            let mut acc = 0.0;
            for &v in row {
                acc += v * v;
            }
            acc
        })
    }

    /// Inner product with a volume of identical shape.
    pub fn dot(&self, other: &CorrespondenceVolume) -> Result<f64> {
        self.check_same_shape(other)?;
        let len = self.slice_len();
        Ok(exec::sum_indexed(self.h * self.w, |loc| {
            let a = &self.data[loc * len..(loc + 1) * len];
            let b = &other.data[loc * len..(loc + 1) * len];
            let mut acc = 0.0;
            for (&x, &y) in a.iter().zip(b) {
                acc += x * y;
            }
            acc
        }))
    }

    pub(crate) fn check_same_shape(&self, other: &CorrespondenceVolume) -> Result<()> {
        if (self.h, self.w, self.kind) != (other.h, other.w, other.kind) {
            return Err(GocorError::DimensionMismatch(format!(
                "volumes {}x{} {:?} vs {}x{} {:?}",
                self.h, self.w, self.kind, other.h, other.w, other.kind
            )));
        }
        Ok(())
    }
}

fn check_corr_inputs(w: &FeatureMap, f: &FeatureMap) -> Result<()> {
    w.check_same_shape(f)
}

/// Scalar products between every filter vector and every query location:
/// `out[i,j,k,l] = <w[i,j], f[k,l]>`.
pub fn global_corr(w: &FeatureMap, f: &FeatureMap) -> Result<CorrespondenceVolume> {
    check_corr_inputs(w, f)?;
    let (h, wd, d) = (w.height(), w.width(), w.depth());
    let mut out = CorrespondenceVolume::zeros(h, wd, VolumeKind::Global);
    let slice_len = h * wd;
    let wdata = w.data();
    let fdata = f.data();
    exec::for_each_chunk_mut(out.data_mut(), slice_len, |loc, row| {
        let wv = &wdata[loc * d..(loc + 1) * d];
        for (q, dst) in row.iter_mut().enumerate() {
            let fv = &fdata[q * d..(q + 1) * d];
            let mut acc = 0.0;
            for (&a, &b) in wv.iter().zip(fv) {
                acc += a * b;
            }
            *dst = acc;
        }
    });
    Ok(out)
}

/// Scalar products against a `(2R+1)^2` displacement neighborhood:
/// `out[i,j,k,l] = <w[i,j], f[i+k, j+l]>`, zero where the target is out of bounds.
pub fn local_corr(w: &FeatureMap, f: &FeatureMap, radius: usize) -> Result<CorrespondenceVolume> {
    check_corr_inputs(w, f)?;
    let (h, wd, d) = (w.height(), w.width(), w.depth());
    let kind = VolumeKind::Local { radius };
    let mut out = CorrespondenceVolume::zeros(h, wd, kind);
    let slice_len = kind.slice_len(h, wd);
    let r = radius as isize;
    let wdata = w.data();
    let fdata = f.data();
    exec::for_each_chunk_mut(out.data_mut(), slice_len, |loc, row| {
        let i = (loc / wd) as isize;
        let j = (loc % wd) as isize;
        let wv = &wdata[loc * d..(loc + 1) * d];
        let mut s = 0usize;
        for k in -r..=r {
            for l in -r..=r {
                let (ti, tj) = (i + k, j + l);
                row[s] = if ti >= 0 && tj >= 0 && (ti as usize) < h && (tj as usize) < wd {
                    let q = ti as usize * wd + tj as usize;
                    let fv = &fdata[q * d..(q + 1) * d];
                    let mut acc = 0.0;
                    for (&a, &b) in wv.iter().zip(fv) {
                        acc += a * b;
                    }
                    acc
                } else {
                    0.0
                };
                s += 1;
            }
        }
    });
    Ok(out)
}

/// Correlation of either kind; the solver dispatches through this.
pub fn correlate(w: &FeatureMap, f: &FeatureMap, kind: VolumeKind) -> Result<CorrespondenceVolume> {
    match kind {
        VolumeKind::Global => global_corr(w, f),
        VolumeKind::Local { radius } => local_corr(w, f, radius),
    }
}

/// Adjoint of the correlation in its first argument: the map `g` with
/// `<corr(w, f), v> = <w, g>` for all `w`.
///
/// Global: `g[i,j,:] = sum_{k,l} v[i,j,k,l] * f[k,l,:]`. Local: the same with
/// `f[i+k, j+l, :]` and out-of-bounds terms dropped.
pub fn corr_adjoint(v: &CorrespondenceVolume, f: &FeatureMap) -> Result<FeatureMap> {
    let (h, wd, d) = (f.height(), f.width(), f.depth());
    if (v.height(), v.width()) != (h, wd) {
        return Err(GocorError::DimensionMismatch(format!(
            "volume {}x{} vs feature map {}x{}",
            v.height(),
            v.width(),
            h,
            wd
        )));
    }
    let mut out = FeatureMap::zeros(h, wd, d);
    let slice_len = v.slice_len();
    let vdata = v.data();
    let fdata = f.data();
    let kind = v.kind();
    exec::for_each_chunk_mut(out.data_mut(), d, |loc, g| {
        let vrow = &vdata[loc * slice_len..(loc + 1) * slice_len];
        match kind {
            VolumeKind::Global => {
                for (q, &coef) in vrow.iter().enumerate() {
                    let fv = &fdata[q * d..(q + 1) * d];
                    for (dst, &b) in g.iter_mut().zip(fv) {
                        *dst += coef * b;
                    }
                }
            }
            VolumeKind::Local { radius } => {
                let r = radius as isize;
                let i = (loc / wd) as isize;
                let j = (loc % wd) as isize;
                let mut s = 0usize;
                for k in -r..=r {
                    for l in -r..=r {
                        let (ti, tj) = (i + k, j + l);
                        if ti >= 0 && tj >= 0 && (ti as usize) < h && (tj as usize) < wd {
                            let coef = vrow[s];
                            let q = ti as usize * wd + tj as usize;
                            let fv = &fdata[q * d..(q + 1) * d];
                            for (dst, &b) in g.iter_mut().zip(fv) {
                                *dst += coef * b;
                            }
                        }
                        s += 1;
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Per-channel mean over all grid locations.
pub fn spatial_mean(f: &FeatureMap) -> Vec<f64> {
    let d = f.depth();
    let n = f.locations();
    let mut mean = vec![0.0; d];
    for loc in 0..n {
        let row = &f.data()[loc * d..(loc + 1) * d];
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let inv = 1.0 / n as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    mean
}
