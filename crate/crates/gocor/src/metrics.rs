//! Flow-field evaluation metrics: average endpoint error, percentage of
//! correct keypoints, and the outlier percentage used on driving benchmarks.

use crate::error::{GocorError, Result};

/// An `H x W` field of pixel displacements `(u, v)` with an optional
/// per-location validity mask.
///
/// `u` is the horizontal (column) displacement and `v` the vertical (row)
/// displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    h: usize,
    w: usize,
    /// Interleaved `(u, v)` pairs, row-major.
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl FlowField {
    pub fn new(h: usize, w: usize, data: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        if data.len() != h * w * 2 {
            return Err(GocorError::DimensionMismatch(format!(
                "flow field {h}x{w} needs {} values, got {}",
                h * w * 2,
                data.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != h * w {
                return Err(GocorError::DimensionMismatch(format!(
                    "mask needs {} entries, got {}",
                    h * w,
                    m.len()
                )));
            }
        }
        for (loc, pair) in data.chunks_exact(2).enumerate() {
            let valid = mask.as_ref().map_or(true, |m| m[loc]);
            if valid && (!pair[0].is_finite() || !pair[1].is_finite()) {
                return Err(GocorError::NonFinite {
                    context: "flow field",
                    index: loc * 2,
                });
            }
        }
        Ok(Self { h, w, data, mask })
    }

    /// Constant flow `(u, v)` everywhere, fully valid.
    pub fn constant(h: usize, w: usize, u: f64, v: f64) -> Self {
        let mut data = Vec::with_capacity(h * w * 2);
        for _ in 0..h * w {
            data.push(u);
            data.push(v);
        }
        Self {
            h,
            w,
            data,
            mask: None,
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn uv(&self, i: usize, j: usize) -> (f64, f64) {
        let base = (i * self.w + j) * 2;
        (self.data[base], self.data[base + 1])
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[i * self.w + j])
    }

    fn check_same_shape(&self, other: &FlowField) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(GocorError::DimensionMismatch(format!(
                "flow fields {}x{} vs {}x{}",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }
}

/// Visit every location valid in both fields, yielding the endpoint error
/// and the ground-truth magnitude.
fn for_each_valid(
    est: &FlowField,
    gt: &FlowField,
    mut f: impl FnMut(f64, f64),
) -> Result<usize> {
    est.check_same_shape(gt)?;
    let mut count = 0usize;
    for i in 0..est.h {
        for j in 0..est.w {
            if !est.is_valid(i, j) || !gt.is_valid(i, j) {
                continue;
            }
            let (ue, ve) = est.uv(i, j);
            let (ug, vg) = gt.uv(i, j);
            let err = ((ue - ug).powi(2) + (ve - vg).powi(2)).sqrt();
            let mag = (ug * ug + vg * vg).sqrt();
            f(err, mag);
            count += 1;
        }
    }
    if count == 0 {
        return Err(GocorError::EmptyInput("no valid flow pixels".into()));
    }
    Ok(count)
}

/// Mean endpoint error over valid pixels.
pub fn aepe(est: &FlowField, gt: &FlowField) -> Result<f64> {
    let mut sum = 0.0;
    let count = for_each_valid(est, gt, |err, _| sum += err)?;
    Ok(sum / count as f64)
}

/// Percentage of valid pixels with endpoint error `<= threshold` (per image).
pub fn pck(est: &FlowField, gt: &FlowField, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(GocorError::InvalidParameter(format!(
            "PCK threshold must be positive, got {threshold}"
        )));
    }
    let mut correct = 0usize;
    let count = for_each_valid(est, gt, |err, _| {
        if err <= threshold {
            correct += 1;
        }
    })?;
    Ok(100.0 * correct as f64 / count as f64)
}

/// Percentage of outliers: endpoint error `> 3` px and relative error
/// `> 0.05`.
///
/// Where the ground-truth magnitude is zero the relative test is taken as
/// satisfied whenever the absolute one is (the usual benchmark convention;
/// the division is undefined there).
pub fn f1_outlier_rate(est: &FlowField, gt: &FlowField) -> Result<f64> {
    let mut outliers = 0usize;
    let count = for_each_valid(est, gt, |err, mag| {
        let absolute = err > 3.0;
        let relative = if mag > 0.0 { err / mag > 0.05 } else { true };
        if absolute && relative {
            outliers += 1;
        }
    })?;
    Ok(100.0 * outliers as f64 / count as f64)
}

/// How PCK aggregates over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PckAveraging {
    /// Compute per image, then average the percentages (the default).
    PerImageMean,
    /// Pool all valid pixels of the dataset before taking the percentage.
    PooledPixels,
}

/// Dataset-level PCK under the chosen averaging convention.
pub fn pck_dataset(
    pairs: &[(FlowField, FlowField)],
    threshold: f64,
    averaging: PckAveraging,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(GocorError::EmptyInput("no image pairs".into()));
    }
    match averaging {
        PckAveraging::PerImageMean => {
            let mut sum = 0.0;
            for (est, gt) in pairs {
                sum += pck(est, gt, threshold)?;
            }
            Ok(sum / pairs.len() as f64)
        }
        PckAveraging::PooledPixels => {
            let mut correct = 0usize;
            let mut total = 0usize;
            for (est, gt) in pairs {
                let mut image_correct = 0usize;
                let count = for_each_valid(est, gt, |err, _| {
                    if err <= threshold {
                        image_correct += 1;
                    }
                })?;
                correct += image_correct;
                total += count;
            }
            Ok(100.0 * correct as f64 / total as f64)
        }
    }
}
