//! Closed-form orthogonal matching of direction matrices, plus a robustness
//! analysis for perturbed inputs.
//!
//! Given two `d x h` matrices `D1` (reference) and `D2` (to be rotated), the
//! solver finds the orthogonal `R` minimizing the Frobenius misfit
//! `||R*D2 - D1||_F`. The solution is closed-form: with the SVD
//! `U * S * V^T = D2 * D1^T`, the minimizer is `R = V * U^T`, and it attains
//! `trace(R * D2 * D1^T) = sum of singular values`. Reflections are allowed
//! whenever they are needed for optimality; a determinant constraint is
//! applied only to resolve genuinely free null-space sign choices (see
//! [`match_by_rotation`]).
//!
//! The robustness half quantifies how the misfit degrades when `D2` is
//! corrupted by an unknown perturbation of bounded Frobenius norm: the worst
//! case over `||Delta||_F <= rho` is exactly the nominal misfit plus `rho`,
//! and the maximizing perturbation has closed form as well.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Result of one orthogonal matching problem.
#[derive(Debug, Clone)]
pub struct RotationSolution {
    /// The optimal orthogonal matrix, `d x d`; may include a reflection.
    pub rotation: DMatrix<f64>,
    /// Frobenius misfit `||R*D2 - D1||_F` at the optimum (not squared).
    pub objective: f64,
    /// Singular values of `D2 * D1^T`, descending.
    pub singular_values: DVector<f64>,
}

/// Perturbation budget estimated from observed deviation norms.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustBudget {
    /// The `(1 - eta)` nearest-rank quantile of the deviation samples.
    pub rho_star: f64,
    /// Confidence parameter in (0, 1): the fraction of mass allowed above
    /// `rho_star`.
    pub eta: f64,
    /// Number of deviation samples the quantile was taken from.
    pub num_samples: usize,
}

/// Solve `min ||R*D2 - D1||_F` over orthogonal `R`.
///
/// `D1` and `D2` must share the same shape `d x h` with `d, h >= 1`. The
/// minimizer is unique when `D2 * D1^T` has no repeated (or zero) singular
/// values; with repeated nonzero singular values the deterministic SVD picks
/// one optimum and the objective value — not the matrix — is the reliable
/// contract. A reflection is returned whenever optimality demands one, but
/// when the problem leaves the choice free (a negligible singular value
/// means the matched directions do not span the full space), the free sign
/// is resolved toward a proper rotation: `det(R) = +1`. That pins down an
/// otherwise arbitrary component, so solutions of nearby problems converge
/// to each other instead of differing by a coin-flip reflection.
pub fn match_by_rotation(d1: &DMatrix<f64>, d2: &DMatrix<f64>) -> Result<RotationSolution> {
    check_same_shape("match_by_rotation", d1, d2)?;
    let m = d2 * d1.transpose();
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut rotation = v_t.transpose() * u.transpose();
    let sigma = &svd.singular_values;
    let smallest = sigma.len() - 1;
    if sigma[smallest] <= 1e-12 * sigma[0] && rotation.determinant() < 0.0 {
        // Flipping one null-space term negates the determinant and changes
        // the objective only by O(sigma_min), i.e. not at all.
        let u_n = u.column(smallest);
        let v_n = v_t.row(smallest).transpose();
        rotation -= 2.0 * v_n * u_n.transpose();
    }
    let objective = (&rotation * d2 - d1).norm();
    Ok(RotationSolution {
        rotation,
        objective,
        singular_values: svd.singular_values.clone(),
    })
}

/// Squared Frobenius misfit `||R*D2 - D1||_F^2` of a candidate rotation.
pub fn rotation_objective(rotation: &DMatrix<f64>, d1: &DMatrix<f64>, d2: &DMatrix<f64>) -> Result<f64> {
    check_same_shape("rotation_objective", d1, d2)?;
    if rotation.nrows() != d1.nrows() || rotation.ncols() != d1.nrows() {
        return Err(Error::DimensionMismatch {
            context: "rotation_objective rotation".into(),
            expected: format!("{0}x{0}", d1.nrows()),
            actual: format!("{}x{}", rotation.nrows(), rotation.ncols()),
        });
    }
    Ok((rotation * d2 - d1).norm_squared())
}

/// Append weighted corresponding-instance columns to both direction
/// matrices.
///
/// Each pair is a (reference-side, rotated-side) vector in the same
/// (scaled, centered, padded) coordinates as the direction columns; the
/// solver then trades off direction matching against mapping each pair onto
/// its counterpart, with `weight` scaling the pairs' influence.
pub fn augment_with_correspondences(
    d1: &DMatrix<f64>,
    d2: &DMatrix<f64>,
    pairs: &[(DVector<f64>, DVector<f64>)],
    weight: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_same_shape("augment_with_correspondences", d1, d2)?;
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "correspondence weight must be positive and finite, got {weight}"
        )));
    }
    let d = d1.nrows();
    let h = d1.ncols();
    let p = pairs.len();
    let mut out1 = DMatrix::zeros(d, h + p);
    let mut out2 = DMatrix::zeros(d, h + p);
    out1.view_mut((0, 0), (d, h)).copy_from(d1);
    out2.view_mut((0, 0), (d, h)).copy_from(d2);
    for (k, (ref_vec, rot_vec)) in pairs.iter().enumerate() {
        if ref_vec.len() != d || rot_vec.len() != d {
            return Err(Error::DimensionMismatch {
                context: format!("correspondence pair {k}"),
                expected: format!("length-{d} vectors"),
                actual: format!("{} and {}", ref_vec.len(), rot_vec.len()),
            });
        }
        out1.set_column(h + k, &(weight * ref_vec));
        out2.set_column(h + k, &(weight * rot_vec));
    }
    Ok((out1, out2))
}

/// Estimate the perturbation budget as the `(1 - eta)` nearest-rank
/// quantile (rounding up) of observed deviation norms.
pub fn estimate_rho_star(deviation_samples: &[f64], eta: f64) -> Result<RobustBudget> {
    if deviation_samples.is_empty() {
        return Err(Error::EmptyInput("no deviation samples".into()));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eta must lie in (0, 1), got {eta}"
        )));
    }
    if let Some(&bad) = deviation_samples.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "deviation samples must be finite and non-negative, got {bad}"
        )));
    }
    let n = deviation_samples.len();
    let mut sorted = deviation_samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Nearest-rank, rounding up: the k-th order statistic with
    // k = ceil((1 - eta) * n), clamped to [1, n]. As eta -> 0 this tends to
    // the sample maximum.
    let k = (((1.0 - eta) * n as f64).ceil() as usize).clamp(1, n);
    Ok(RobustBudget {
        rho_star: sorted[k - 1],
        eta,
        num_samples: n,
    })
}

/// Worst-case misfit under any perturbation of `D2` with Frobenius norm at
/// most `rho_star`: exactly the nominal (unsquared) misfit plus the budget.
pub fn robust_value(solution: &RotationSolution, budget: &RobustBudget) -> f64 {
    solution.objective + budget.rho_star
}

/// The perturbation attaining the worst case.
///
/// With misfit matrix `V = R*D2 - D1` the maximizer is
/// `Delta = rho_star * R^T * V / ||V||_F`; when the nominal fit is exact
/// (`||V||_F = 0`) any unit-norm direction attains the bound and a fixed
/// canonical one is returned.
pub fn worst_case_perturbation(
    solution: &RotationSolution,
    d1: &DMatrix<f64>,
    d2: &DMatrix<f64>,
    budget: &RobustBudget,
) -> Result<DMatrix<f64>> {
    check_same_shape("worst_case_perturbation", d1, d2)?;
    let r = &solution.rotation;
    if r.nrows() != d1.nrows() {
        return Err(Error::DimensionMismatch {
            context: "worst_case_perturbation rotation".into(),
            expected: format!("{0}x{0}", d1.nrows()),
            actual: format!("{}x{}", r.nrows(), r.ncols()),
        });
    }
    let v = r * d2 - d1;
    let v_norm = v.norm();
    let direction = if v_norm > 0.0 {
        v / v_norm
    } else {
        // Exact nominal fit: every unit direction achieves the bound; pick a
        // fixed one so the result is deterministic.
        let mut e = DMatrix::zeros(d1.nrows(), d1.ncols());
        e[(0, 0)] = 1.0;
        e
    };
    Ok(budget.rho_star * r.transpose() * direction)
}

fn check_same_shape(context: &str, d1: &DMatrix<f64>, d2: &DMatrix<f64>) -> Result<()> {
    if d1.nrows() == 0 || d1.ncols() == 0 {
        return Err(Error::EmptyInput(format!("{context}: empty direction matrix")));
    }
    if d1.nrows() != d2.nrows() || d1.ncols() != d2.ncols() {
        return Err(Error::DimensionMismatch {
            context: context.into(),
            expected: format!("{}x{}", d1.nrows(), d1.ncols()),
            actual: format!("{}x{}", d2.nrows(), d2.ncols()),
        });
    }
    Ok(())
}

/// Draw a Haar-distributed orthogonal matrix (QR of a Gaussian matrix with
/// the R-diagonal sign fix). Used by generators and tests.
pub fn random_orthogonal(d: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
    use rand::RngExt;
    use rand_distr::StandardNormal;
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = nalgebra::QR::new(g);
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
