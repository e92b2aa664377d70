//! Empirical studies of the rotation solver: how fast fitted per-class
//! rotations approach their population counterparts as sample size grows,
//! and whether the worst-case perturbation bound holds.
//!
//! The complexity study fixes a mixture and a ground-truth transform,
//! computes the population rotations from exact moments, then repeatedly
//! samples both outlooks at increasing sizes and records the Frobenius
//! distance between fitted and population rotations. The robustness check
//! verifies, on random instances, that no perturbation of the matched
//! direction set within a Frobenius budget can push the misfit above
//! `nominal + budget`, and that the analytic worst case attains that value.

use nalgebra::DMatrix;
use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::momap::{fit_two_outlooks_from_moments, fit_two_outlooks_with, FitOptions};
use crate::moments::{utilization_matrix, ClassMoments};
use crate::procrustes::{match_by_rotation, worst_case_perturbation, RobustBudget};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::synth::{sample_mixture, transform_outlook, GroundTruthTransform, MixtureSpec};

/// Fitted-versus-population rotation errors across sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityCurve {
    /// Strictly increasing per-class sample sizes.
    pub sample_sizes: Vec<usize>,
    /// `per_class_errors[size][seed][class]` is the Frobenius distance
    /// between the fitted and population rotations for that class.
    pub per_class_errors: Vec<Vec<Vec<f64>>>,
    /// `max_errors[size][seed]` is the maximum over classes.
    pub max_errors: Vec<Vec<f64>>,
    /// Median of the pooled (seed, class) errors at each size.
    pub medians: Vec<f64>,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl ComplexityCurve {
    /// True when the per-size medians strictly decrease.
    pub fn medians_strictly_decreasing(&self) -> bool {
        self.medians.windows(2).all(|w| w[1] < w[0])
    }

    /// Least-squares slope of `ln(median)` against `ln(size)`.
    ///
    /// Root-n concentration of the underlying moment estimates shows up
    /// here as a slope near −1/2.
    pub fn log_log_slope(&self) -> f64 {
        let xs: Vec<f64> = self.sample_sizes.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = self.medians.iter().map(|m| m.ln()).collect();
        let n = xs.len() as f64;
        let x_bar = xs.iter().sum::<f64>() / n;
        let y_bar = ys.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in xs.iter().zip(ys.iter()) {
            num += (x - x_bar) * (y - y_bar);
            den += (x - x_bar) * (x - x_bar);
        }
        num / den
    }

    /// Recompute the per-size medians from the raw errors.
    pub fn recompute_medians(&self) -> Vec<f64> {
        self.per_class_errors
            .iter()
            .map(|seeds| median_of(seeds.iter().flatten().copied().collect()))
            .collect()
    }

    /// Long-format CSV: one row per (size, seed, class) error plus a `max`
    /// row per (size, seed).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("n,seed,class,error\n");
        for (si, &n) in self.sample_sizes.iter().enumerate() {
            for (seed, errors) in self.per_class_errors[si].iter().enumerate() {
                for (ci, e) in errors.iter().enumerate() {
                    out.push_str(&format!("{n},{seed},{},{e}\n", ci + 1));
                }
                out.push_str(&format!("{n},{seed},max,{}\n", self.max_errors[si][seed]));
            }
        }
        out
    }

    /// Pretty-printed JSON.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A well-conditioned 3-D two-class mixture with distinct per-class
/// eigenvalues, suitable as a default subject for the complexity study.
pub fn default_study_spec() -> MixtureSpec {
    use crate::synth::MixtureComponent;
    MixtureSpec {
        d: 3,
        components: vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![0.0, 0.0, 0.0],
                cov: vec![
                    vec![4.0, 0.0, 0.0],
                    vec![0.0, 1.5, 0.0],
                    vec![0.0, 0.0, 0.5],
                ],
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![1.0, 1.0, 0.0],
                cov: vec![
                    vec![3.0, 0.0, 0.0],
                    vec![0.0, 1.2, 0.0],
                    vec![0.0, 0.0, 0.4],
                ],
            },
        ],
    }
}

fn population_moments(
    spec: &MixtureSpec,
    transform: &GroundTruthTransform,
) -> Result<(Vec<ClassMoments>, Vec<ClassMoments>)> {
    let d = spec.d;
    let q = &transform.rotation;
    let mut target = Vec::with_capacity(spec.components.len());
    let mut source = Vec::with_capacity(spec.components.len());
    for (ci, comp) in spec.components.iter().enumerate() {
        let mean = nalgebra::DVector::from_column_slice(&comp.mean);
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] = comp.cov[i][j];
            }
        }
        let t_mean = q * &mean + &transform.translations[ci];
        let t_cov = q * &cov * q.transpose();
        target.push(ClassMoments::from_population(mean, cov)?);
        source.push(ClassMoments::from_population(t_mean, t_cov)?);
    }
    Ok((target, source))
}

/// Reject population moments whose top-`h` directions are not uniquely
/// determined: repeated leading eigenvalues or fewer than `h` positive ones
/// leave the population rotation ill-defined, making error-to-population
/// comparisons meaningless.
fn check_population_spectra(moments: &[ClassMoments], h: usize, side: &str) -> Result<()> {
    for (ci, m) in moments.iter().enumerate() {
        let basis = utilization_matrix(m, h)?;
        if basis.rank_deficient {
            return Err(Error::DegenerateSpectrum {
                class: ci + 1,
                detail: format!(
                    "{side} covariance has rank {} < h = {h}; the matched directions are not \
                     unique",
                    basis.rank()
                ),
            });
        }
        if basis.degenerate {
            return Err(Error::DegenerateSpectrum {
                class: ci + 1,
                detail: format!(
                    "{side} covariance has (near-)repeated leading eigenvalues {:?}; the \
                     population directions are not unique",
                    basis.eigenvalues.as_slice()
                ),
            });
        }
    }
    Ok(())
}

/// Measure how fitted per-class rotations converge to the population ones.
///
/// For each size `n` in `sizes` (a per-class count) and each of
/// `seeds_per_size` repetitions, an independent target sample and an
/// independent transformed source sample are drawn, a mapping is fitted on
/// raw features, and each class's rotation is compared to the population
/// rotation computed from exact moments.
pub fn sample_complexity_study(
    spec: &MixtureSpec,
    transform: &GroundTruthTransform,
    sizes: &[usize],
    seeds_per_size: usize,
    h: usize,
    base_seed: u64,
) -> Result<ComplexityCurve> {
    spec.validate()?;
    if sizes.is_empty() {
        return Err(Error::InvalidParameter("no sample sizes given".into()));
    }
    for w in sizes.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter(format!(
                "sample sizes must be strictly increasing, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    if sizes[0] < 2 {
        return Err(Error::InvalidParameter(format!(
            "sample sizes must be at least 2 per class, got {}",
            sizes[0]
        )));
    }
    if seeds_per_size == 0 {
        return Err(Error::InvalidParameter(
            "seeds_per_size must be at least 1".into(),
        ));
    }
    if transform.rotation.nrows() != spec.d {
        return Err(Error::DimensionMismatch {
            context: "complexity study transform".into(),
            expected: format!("{0}x{0} rotation", spec.d),
            actual: format!(
                "{}x{}",
                transform.rotation.nrows(),
                transform.rotation.ncols()
            ),
        });
    }
    if transform.translations.len() != spec.components.len() {
        return Err(Error::DimensionMismatch {
            context: "complexity study transform".into(),
            expected: format!("{} translations", spec.components.len()),
            actual: format!("{}", transform.translations.len()),
        });
    }

    let (target_moments, source_moments) = population_moments(spec, transform)?;
    check_population_spectra(&target_moments, h, "target")?;
    check_population_spectra(&source_moments, h, "source")?;
    let population =
        fit_two_outlooks_from_moments("target", "source", &target_moments, &source_moments, h)?;
    let num_classes = spec.components.len();

    let jobs: Vec<(usize, usize)> = (0..sizes.len())
        .flat_map(|si| (0..seeds_per_size).map(move |seed| (si, seed)))
        .collect();
    let results: Vec<Vec<f64>> = jobs
        .into_par_iter()
        .map(|(si, seed_idx)| -> Result<Vec<f64>> {
            let n = sizes[si];
            let counts = vec![n; num_classes];
            let target_seed =
                derive_seed(base_seed, &[stream::STUDY_TARGET, si as u64, seed_idx as u64]);
            let source_seed =
                derive_seed(base_seed, &[stream::STUDY_SOURCE, si as u64, seed_idx as u64]);
            let mut target = sample_mixture(spec, &counts, target_seed)?;
            target.id = "target".into();
            let clean = sample_mixture(spec, &counts, source_seed)?;
            let mut source = transform_outlook(&clean, transform)?;
            source.id = "source".into();
            let fit = fit_two_outlooks_with(&target, &source, h, &FitOptions::unscaled())?;
            let errors = (0..num_classes)
                .map(|ci| {
                    (&fit.mapping.classes[ci].rotation - &population.mapping.classes[ci].rotation)
                        .norm()
                })
                .collect();
            Ok(errors)
        })
        .collect::<Result<_>>()?;

    let mut per_class_errors = vec![Vec::with_capacity(seeds_per_size); sizes.len()];
    for (job_idx, errors) in results.into_iter().enumerate() {
        per_class_errors[job_idx / seeds_per_size].push(errors);
    }
    let max_errors: Vec<Vec<f64>> = per_class_errors
        .iter()
        .map(|seeds| {
            seeds
                .iter()
                .map(|errors| errors.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect()
        })
        .collect();
    let medians = per_class_errors
        .iter()
        .map(|seeds| median_of(seeds.iter().flatten().copied().collect()))
        .collect();
    Ok(ComplexityCurve {
        sample_sizes: sizes.to_vec(),
        per_class_errors,
        max_errors,
        medians,
    })
}

/// Configuration for [`run_robust_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustCheckOptions {
    /// Random matched-pair instances to test.
    pub num_instances: usize,
    /// Perturbation budgets to verify, each > 0.
    pub rho_values: Vec<f64>,
    /// Sampled perturbations per (instance, budget).
    pub mc_samples: usize,
    /// Base seed for instance and perturbation generation.
    pub seed: u64,
    /// Row dimension of the generated direction matrices.
    pub dim: usize,
    /// Column dimension of the generated direction matrices.
    pub h: usize,
    /// Slack allowed on the bound and on the analytic attainment.
    pub tolerance: f64,
}

impl Default for RobustCheckOptions {
    fn default() -> Self {
        RobustCheckOptions {
            num_instances: 50,
            rho_values: vec![0.1, 1.0, 10.0],
            mc_samples: 100_000,
            seed: 0,
            dim: 6,
            h: 4,
            tolerance: 1e-9,
        }
    }
}

/// Outcome of the perturbation-bound verification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustCheckSummary {
    /// Instances tested.
    pub num_instances: usize,
    /// Budgets verified.
    pub rho_values: Vec<f64>,
    /// Sampled perturbations per (instance, budget).
    pub mc_samples: usize,
    /// Direction matrix shape tested.
    pub dim: usize,
    /// Direction matrix shape tested.
    pub h: usize,
    /// Largest `perturbed − (nominal + rho)` over all sampled
    /// perturbations; positive means a sampled perturbation beat the bound.
    pub max_violation: f64,
    /// Largest `|analytic − (nominal + rho)|`; the analytic worst case
    /// should attain the bound exactly.
    pub max_analytic_gap: f64,
    /// True when both maxima are within tolerance.
    pub passed: bool,
}

/// Verify the worst-case perturbation bound on random instances.
///
/// For Gaussian `D1`, `D2` and the fitted rotation `R` with nominal misfit
/// `v = ||R D2 − D1||`, every perturbation `Delta` with
/// `||Delta||_F = rho` must satisfy `||R (D2 + Delta) − D1|| <= v + rho`,
/// and the analytic worst case must attain `v + rho` exactly.
pub fn run_robust_check(opts: &RobustCheckOptions) -> Result<RobustCheckSummary> {
    if opts.num_instances == 0 {
        return Err(Error::InvalidParameter(
            "robust check needs at least one instance".into(),
        ));
    }
    if opts.mc_samples == 0 {
        return Err(Error::InvalidParameter(
            "robust check needs at least one sampled perturbation".into(),
        ));
    }
    if opts.rho_values.is_empty() {
        return Err(Error::InvalidParameter("no perturbation budgets".into()));
    }
    for &rho in &opts.rho_values {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "perturbation budgets must be positive and finite, got {rho}"
            )));
        }
    }
    if opts.dim == 0 || opts.h == 0 {
        return Err(Error::InvalidParameter(format!(
            "direction matrices need positive shape, got {}x{}",
            opts.dim, opts.h
        )));
    }
    if !(opts.tolerance >= 0.0 && opts.tolerance.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be non-negative and finite, got {}",
            opts.tolerance
        )));
    }

    let per_instance: Vec<(f64, f64)> = (0..opts.num_instances)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut rng = derive_rng(opts.seed, &[stream::ROBUST_MC, i as u64]);
            let gaussian = |rng: &mut rand_chacha::ChaCha8Rng| {
                DMatrix::from_fn(opts.dim, opts.h, |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                })
            };
            let d1 = gaussian(&mut rng);
            let d2 = gaussian(&mut rng);
            let solution = match_by_rotation(&d1, &d2)?;
            let residual = &solution.rotation * &d2 - &d1;
            let nominal = solution.objective;

            let mut max_violation = f64::NEG_INFINITY;
            let mut max_gap = f64::NEG_INFINITY;
            for &rho in &opts.rho_values {
                let bound = nominal + rho;
                for _ in 0..opts.mc_samples {
                    let g = gaussian(&mut rng);
                    let g_norm = g.norm();
                    if g_norm == 0.0 {
                        continue;
                    }
                    let rotated_delta = &solution.rotation * (g * (rho / g_norm));
                    let perturbed = (&residual + rotated_delta).norm();
                    max_violation = max_violation.max(perturbed - bound);
                }
                let budget = RobustBudget {
                    rho_star: rho,
                    eta: 0.05,
                    num_samples: opts.mc_samples,
                };
                let delta_star = worst_case_perturbation(&solution, &d1, &d2, &budget)?;
                let perturbed_star =
                    (&solution.rotation * (&d2 + delta_star) - &d1).norm();
                max_gap = max_gap.max((perturbed_star - bound).abs());
            }
            Ok((max_violation, max_gap))
        })
        .collect::<Result<_>>()?;

    let max_violation = per_instance
        .iter()
        .map(|&(v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_analytic_gap = per_instance
        .iter()
        .map(|&(_, g)| g)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RobustCheckSummary {
        num_instances: opts.num_instances,
        rho_values: opts.rho_values.clone(),
        mc_samples: opts.mc_samples,
        dim: opts.dim,
        h: opts.h,
        max_violation,
        max_analytic_gap,
        passed: max_violation <= opts.tolerance && max_analytic_gap <= opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Well-conditioned 3-D spec with distinct eigenvalues per class.
    fn study_spec() -> MixtureSpec {
        default_study_spec()
    }

    fn study_transform() -> GroundTruthTransform {
        GroundTruthTransform::random(3, 2, 11).unwrap()
    }

    #[test]
    fn complexity_errors_shrink_with_sample_size() {
        let curve = sample_complexity_study(
            &study_spec(),
            &study_transform(),
            &[50, 200, 800, 3200],
            20,
            2,
            0,
        )
        .unwrap();
        assert_eq!(curve.sample_sizes, vec![50, 200, 800, 3200]);
        assert_eq!(curve.per_class_errors.len(), 4);
        assert_eq!(curve.per_class_errors[0].len(), 20);
        assert_eq!(curve.per_class_errors[0][0].len(), 2);
        assert!(
            curve.medians_strictly_decreasing(),
            "medians {:?}",
            curve.medians
        );
        let slope = curve.log_log_slope();
        assert!(
            (-0.7..=-0.3).contains(&slope),
            "log-log slope {slope} outside the root-n window; medians {:?}",
            curve.medians
        );
        assert_eq!(curve.medians, curve.recompute_medians());
    }

    #[test]
    fn complexity_large_sample_error_is_small() {
        let curve = sample_complexity_study(
            &study_spec(),
            &study_transform(),
            &[1_000_000],
            1,
            2,
            7,
        )
        .unwrap();
        assert!(
            curve.max_errors[0][0] <= 0.05,
            "error at n = 1e6 was {}",
            curve.max_errors[0][0]
        );
    }

    #[test]
    fn complexity_rejects_degenerate_population_spectra() {
        // Isotropic class: leading eigenvalues coincide.
        let mut spec = study_spec();
        spec.components[0].cov = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let err = sample_complexity_study(&spec, &study_transform(), &[50], 1, 2, 0).unwrap_err();
        assert!(
            matches!(err, Error::DegenerateSpectrum { class: 1, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("repeated"), "{err}");

        // Rank-1 class cannot supply two unique directions.
        let mut spec = study_spec();
        spec.components[1].cov = vec![
            vec![2.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ];
        let err = sample_complexity_study(&spec, &study_transform(), &[50], 1, 2, 0).unwrap_err();
        assert!(
            matches!(err, Error::DegenerateSpectrum { class: 2, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("rank"), "{err}");
    }

    #[test]
    fn complexity_validates_inputs() {
        let spec = study_spec();
        let transform = study_transform();
        assert!(matches!(
            sample_complexity_study(&spec, &transform, &[], 1, 2, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            sample_complexity_study(&spec, &transform, &[100, 100], 1, 2, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            sample_complexity_study(&spec, &transform, &[1, 50], 1, 2, 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            sample_complexity_study(&spec, &transform, &[50], 0, 2, 0),
            Err(Error::InvalidParameter(_))
        ));
        let wrong_dim = GroundTruthTransform::random(4, 2, 1).unwrap();
        assert!(matches!(
            sample_complexity_study(&spec, &wrong_dim, &[50], 1, 2, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn complexity_curve_emission_and_determinism() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                sample_complexity_study(&study_spec(), &study_transform(), &[50, 100], 3, 2, 5)
                    .unwrap()
            })
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a, b, "thread count changed the curve");

        let csv = a.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "n,seed,class,error");
        // 2 sizes x 3 seeds x (2 class rows + 1 max row).
        assert_eq!(csv.lines().count(), 1 + 2 * 3 * 3);
        assert!(csv.contains("50,0,1,"));
        assert!(csv.contains("100,2,max,"));

        let json = a.to_json_string().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["sample_sizes"][1], 100);
        assert_eq!(value["medians"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn robust_bound_holds_and_analytic_case_attains_it() {
        let opts = RobustCheckOptions {
            num_instances: 10,
            mc_samples: 2000,
            dim: 5,
            h: 3,
            ..RobustCheckOptions::default()
        };
        let summary = run_robust_check(&opts).unwrap();
        assert!(
            summary.passed,
            "violation {}, analytic gap {}",
            summary.max_violation, summary.max_analytic_gap
        );
        assert!(summary.max_violation <= 1e-9);
        assert!(summary.max_analytic_gap <= 1e-9);
        // Sampled perturbations rarely come close to the worst case, so the
        // maximum violation should be clearly negative.
        assert!(summary.max_violation < 0.0);
    }

    #[test]
    fn robust_check_is_deterministic() {
        let opts = RobustCheckOptions {
            num_instances: 4,
            mc_samples: 500,
            ..RobustCheckOptions::default()
        };
        let a = run_robust_check(&opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_robust_check(&opts).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn robust_check_validates_inputs() {
        let good = RobustCheckOptions {
            num_instances: 1,
            mc_samples: 1,
            ..RobustCheckOptions::default()
        };
        assert!(run_robust_check(&good).is_ok());
        for bad in [
            RobustCheckOptions {
                num_instances: 0,
                ..good.clone()
            },
            RobustCheckOptions {
                mc_samples: 0,
                ..good.clone()
            },
            RobustCheckOptions {
                rho_values: vec![],
                ..good.clone()
            },
            RobustCheckOptions {
                rho_values: vec![-1.0],
                ..good.clone()
            },
            RobustCheckOptions {
                dim: 0,
                ..good.clone()
            },
            RobustCheckOptions {
                h: 0,
                ..good.clone()
            },
            RobustCheckOptions {
                tolerance: -1.0,
                ..good.clone()
            },
        ] {
            assert!(
                matches!(run_robust_check(&bad), Err(Error::InvalidParameter(_))),
                "{bad:?} should be rejected"
            );
        }
    }
}
