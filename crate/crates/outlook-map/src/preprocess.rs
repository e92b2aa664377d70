//! Per-feature winsorized min-max scaling.
//!
//! Each feature column is clipped at symmetric nearest-rank quantiles (the
//! extreme tails collapse onto the last surviving order statistics) and then
//! mapped to `[0, 1]` by the min and range of the clipped values. Parameters
//! are fit on training rows and applied unchanged to held-out rows, and each
//! outlook is scaled independently of the others.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Fitted per-feature clipping and rescaling parameters.
///
/// Applying the scaler clamps column `j` to
/// `[lower_clip[j], upper_clip[j]]`, subtracts `min_val[j]`, and divides by
/// `range[j]`; zero-range features map to 0.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    /// Lower clip per feature: the `ceil(q*n)`-th smallest training value.
    pub lower_clip: Vec<f64>,
    /// Upper clip per feature: the `ceil(q*n)`-th largest training value.
    pub upper_clip: Vec<f64>,
    /// Minimum of the clipped training column.
    pub min_val: Vec<f64>,
    /// Range (max minus min) of the clipped training column; `>= 0`.
    pub range: Vec<f64>,
}

impl ScalerParams {
    /// Number of features this scaler was fitted on.
    pub fn dim(&self) -> usize {
        self.lower_clip.len()
    }

    /// Validate internal consistency (vector lengths, ordering, finiteness).
    pub fn validate(&self) -> Result<()> {
        let d = self.lower_clip.len();
        if self.upper_clip.len() != d || self.min_val.len() != d || self.range.len() != d {
            return Err(Error::DimensionMismatch {
                context: "scaler parameter vectors".into(),
                expected: format!("{d} entries each"),
                actual: format!(
                    "upper {}, min {}, range {}",
                    self.upper_clip.len(),
                    self.min_val.len(),
                    self.range.len()
                ),
            });
        }
        for j in 0..d {
            let ok = self.lower_clip[j] <= self.upper_clip[j]
                && self.range[j] >= 0.0
                && self.lower_clip[j].is_finite()
                && self.upper_clip[j].is_finite()
                && self.min_val[j].is_finite()
                && self.range[j].is_finite();
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "inconsistent scaler parameters at feature {j}"
                )));
            }
        }
        Ok(())
    }
}

/// Fit winsorized min-max parameters on `features` (samples as rows).
///
/// `winsor_fraction` is the per-tail clip fraction in `[0, 0.5)`; the clip
/// points are symmetric nearest-rank order statistics, so fraction 0 makes
/// the clips coincide with the column min/max and scaling reduces to plain
/// min-max.
pub fn fit_scaler(features: &DMatrix<f64>, winsor_fraction: f64) -> Result<ScalerParams> {
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("cannot fit a scaler on zero rows".into()));
    }
    if !(0.0..0.5).contains(&winsor_fraction) {
        return Err(Error::InvalidParameter(format!(
            "winsor fraction must lie in [0, 0.5), got {winsor_fraction}"
        )));
    }
    let n = features.nrows();
    let d = features.ncols();
    // Symmetric nearest-rank positions: the k-th smallest and k-th largest
    // order statistics with k = max(1, ceil(q * n)).
    let k = ((winsor_fraction * n as f64).ceil() as usize).max(1);
    let mut params = ScalerParams {
        lower_clip: Vec::with_capacity(d),
        upper_clip: Vec::with_capacity(d),
        min_val: Vec::with_capacity(d),
        range: Vec::with_capacity(d),
    };
    let mut column: Vec<f64> = Vec::with_capacity(n);
    for j in 0..d {
        column.clear();
        column.extend((0..n).map(|i| features[(i, j)]));
        column.sort_by(f64::total_cmp);
        let lower = column[k - 1];
        let upper = column[n - k];
        // Min and range are computed on the clipped column. Clipping pins the
        // extremes to the clip points themselves, but compute literally so
        // the stored values are exactly what `apply_scaler` will see.
        let mut min_val = f64::INFINITY;
        let mut max_val = f64::NEG_INFINITY;
        for &v in &column {
            let c = v.clamp(lower, upper);
            min_val = min_val.min(c);
            max_val = max_val.max(c);
        }
        params.lower_clip.push(lower);
        params.upper_clip.push(upper);
        params.min_val.push(min_val);
        params.range.push(max_val - min_val);
    }
    Ok(params)
}

/// Apply fitted parameters to a feature matrix of matching width.
///
/// Outputs lie in `[0, 1]`; zero-range features map to `0.0` everywhere.
pub fn apply_scaler(features: &DMatrix<f64>, params: &ScalerParams) -> Result<DMatrix<f64>> {
    if features.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            context: "apply_scaler".into(),
            expected: format!("{} feature columns", params.dim()),
            actual: format!("{}", features.ncols()),
        });
    }
    let mut out = features.clone();
    for j in 0..params.dim() {
        let (lo, hi) = (params.lower_clip[j], params.upper_clip[j]);
        let (min_val, range) = (params.min_val[j], params.range[j]);
        for i in 0..out.nrows() {
            out[(i, j)] = if range == 0.0 {
                0.0
            } else {
                (features[(i, j)].clamp(lo, hi) - min_val) / range
            };
        }
    }
    Ok(out)
}
