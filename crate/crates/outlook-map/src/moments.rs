//! Per-class empirical moments and principal-direction matrices.
//!
//! The alignment machinery consumes, for every class, the empirical mean and
//! (biased, 1/n) covariance of that class's rows, plus the top-`h`
//! eigenvectors of the covariance assembled column-wise into a "utilization"
//! matrix. Eigenvectors get a deterministic sign so two runs — and two
//! independently estimated outlooks of the same population — produce
//! comparable direction matrices.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Empirical mean, covariance, and sample count of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    /// Column mean, length `d`.
    pub mean: DVector<f64>,
    /// Biased covariance `(1/n) * sum (x - mean)(x - mean)^T`, `d x d`.
    pub covariance: DMatrix<f64>,
    /// Number of rows the moments were computed from.
    pub count: usize,
}

impl ClassMoments {
    /// Build population-level moments directly from known parameters.
    ///
    /// `count` is recorded as 0 to mark the moments as exact rather than
    /// estimated.
    pub fn from_population(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "population moments".into(),
                expected: format!("{d}x{d} covariance"),
                actual: format!("{}x{}", covariance.nrows(), covariance.ncols()),
            });
        }
        Ok(ClassMoments {
            mean,
            covariance,
            count: 0,
        })
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Top-`h` eigenvectors of a class covariance, columns orthonormal and
/// eigenvalues sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationMatrix {
    /// `d x h` matrix whose columns are unit eigenvectors.
    pub directions: DMatrix<f64>,
    /// The corresponding eigenvalues, non-increasing, length `h`.
    pub eigenvalues: DVector<f64>,
    /// Set when `h` exceeds the numerical rank of the covariance; the
    /// trailing directions are then arbitrary within the null space.
    pub rank_deficient: bool,
    /// Set when an eigen-gap among the leading `h+1` eigenvalues falls below
    /// `1e-8 * lambda_max`; the affected directions are unstable and any fit
    /// using them should be treated with care.
    pub degenerate: bool,
}

impl UtilizationMatrix {
    /// Row dimension `d`.
    pub fn dim(&self) -> usize {
        self.directions.nrows()
    }

    /// Number of retained directions `h`.
    pub fn rank(&self) -> usize {
        self.directions.ncols()
    }
}

/// Compute mean and biased covariance of `rows` (samples as rows).
///
/// Requires at least 2 rows; a covariance from a single sample carries no
/// directional information.
pub fn class_moments(rows: &DMatrix<f64>) -> Result<ClassMoments> {
    let n = rows.nrows();
    let d = rows.ncols();
    if n < 2 {
        return Err(Error::EmptyInput(format!(
            "need at least 2 rows to estimate a covariance, got {n}"
        )));
    }
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for j in 0..d {
            mean[j] += rows[(i, j)];
        }
    }
    mean /= n as f64;
    let mut covariance = DMatrix::zeros(d, d);
    // Accumulate (x - mean)(x - mean)^T row by row; only the upper triangle,
    // then mirror, to keep the result exactly symmetric.
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            centered[j] = rows[(i, j)] - mean[j];
        }
        for a in 0..d {
            for b in a..d {
                covariance[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = covariance[(a, b)] / n as f64;
            covariance[(a, b)] = v;
            covariance[(b, a)] = v;
        }
    }
    Ok(ClassMoments {
        mean,
        covariance,
        count: n,
    })
}

/// Extract the top-`h` principal directions of a class covariance.
///
/// Eigenvalues are sorted descending (ties keep the eigensolver's order);
/// each eigenvector is sign-normalized so its largest-magnitude entry is
/// positive, ties resolved toward the lowest index. Rank deficiency and
/// near-degenerate gaps are flagged on the result rather than treated as
/// errors.
pub fn utilization_matrix(moments: &ClassMoments, h: usize) -> Result<UtilizationMatrix> {
    let d = moments.dim();
    if h == 0 || h > d {
        return Err(Error::InvalidParameter(format!(
            "subspace rank h must lie in 1..={d}, got {h}"
        )));
    }
    let sym = nalgebra::SymmetricEigen::new(moments.covariance.clone());
    // Sort eigenpairs by descending eigenvalue, ties by original position.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        sym.eigenvalues[b]
            .partial_cmp(&sym.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let lambda_max = sym.eigenvalues[order[0]].max(0.0);
    let mut directions = DMatrix::zeros(d, h);
    let mut eigenvalues = DVector::zeros(h);
    for (col, &idx) in order.iter().take(h).enumerate() {
        eigenvalues[col] = sym.eigenvalues[idx];
        let mut v: DVector<f64> = sym.eigenvectors.column(idx).into();
        sign_normalize(&mut v);
        directions.set_column(col, &v);
    }

    // Numerical rank of the covariance relative to its largest eigenvalue.
    let rank_tol = lambda_max * 1e-12;
    let rank = order
        .iter()
        .filter(|&&i| sym.eigenvalues[i] > rank_tol && sym.eigenvalues[i] > 0.0)
        .count();
    let rank_deficient = h > rank;

    let degenerate = if lambda_max <= 0.0 {
        d > 1
    } else {
        let gap_tol = 1e-8 * lambda_max;
        (0..h.min(d - 1)).any(|l| {
            let gap = sym.eigenvalues[order[l]] - sym.eigenvalues[order[l + 1]];
            gap < gap_tol
        })
    };

    Ok(UtilizationMatrix {
        directions,
        eigenvalues,
        rank_deficient,
        degenerate,
    })
}

/// Make the largest-magnitude entry positive; ties resolve to the lowest
/// index. Applied to every eigenvector so independently computed bases agree
/// on orientation.
fn sign_normalize(v: &mut DVector<f64>) {
    let mut best = 0usize;
    let mut best_abs = v[0].abs();
    for i in 1..v.len() {
        if v[i].abs() > best_abs {
            best = i;
            best_abs = v[i].abs();
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Zero-pad the rows of a utilization matrix up to `target_dim`.
///
/// Used when two outlooks disagree on dimension: the smaller side's
/// directions are embedded into the larger space with zero coordinates.
/// Eigenvalues and warning flags carry over unchanged.
pub fn pad_to_dimension(u: &UtilizationMatrix, target_dim: usize) -> Result<UtilizationMatrix> {
    let d = u.dim();
    if target_dim < d {
        return Err(Error::InvalidParameter(format!(
            "cannot pad a {d}-row matrix down to {target_dim} rows"
        )));
    }
    if target_dim == d {
        return Ok(u.clone());
    }
    let mut directions = DMatrix::zeros(target_dim, u.rank());
    directions.view_mut((0, 0), (d, u.rank())).copy_from(&u.directions);
    Ok(UtilizationMatrix {
        directions,
        eigenvalues: u.eigenvalues.clone(),
        rank_deficient: u.rank_deficient,
        degenerate: u.degenerate,
    })
}

/// Zero-pad a vector to `target_dim` (used for class means alongside
/// [`pad_to_dimension`]).
pub fn pad_vector(v: &DVector<f64>, target_dim: usize) -> Result<DVector<f64>> {
    if target_dim < v.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot pad a length-{} vector down to {target_dim}",
            v.len()
        )));
    }
    let mut out = DVector::zeros(target_dim);
    out.rows_mut(0, v.len()).copy_from(v);
    Ok(out)
}
