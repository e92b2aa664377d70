//! Release gate: nine end-to-end checks covering solver optimality, the
//! worst-case perturbation bound, exact and finite-sample recovery, the
//! estimation-error trend, multi-outlook consistency, the transfer-protocol
//! advantage over scarce direct training, metric correctness, and binary
//! determinism. One test per check; each prints a PASS line on success.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use tempfile::TempDir;

use outlook_map::data_model::Outlook;
use outlook_map::eval::{
    balanced_error_rate, run_transfer_experiment, Method, TransferOptions,
};
use outlook_map::momap::{
    apply_mapping, fit_multi_outlook, fit_two_outlooks_from_moments, fit_two_outlooks_with,
    map_into_target, map_scaled_rows, switch_final_outlook, truncate_to_target, FitOptions,
};
use outlook_map::moments::ClassMoments;
use outlook_map::procrustes::match_by_rotation;
use outlook_map::procrustes::random_orthogonal;
use outlook_map::rng::derive_rng;
use outlook_map::study::{
    default_study_spec, run_robust_check, sample_complexity_study, RobustCheckOptions,
};
use outlook_map::synth::{
    sample_mixture, transform_outlook, GroundTruthTransform, MixtureComponent, MixtureSpec,
};

fn assert_within(elapsed: Duration, limit_secs: u64, what: &str) {
    assert!(
        elapsed < Duration::from_secs(limit_secs),
        "{what} took {elapsed:?}, budget {limit_secs}s"
    );
}

/// Closed-form matching vs. exhaustive search over all orthogonal 2x2
/// candidates (every such matrix is a rotation by some angle, optionally
/// composed with a fixed reflection), swept at 1e-4 radians.
#[test]
fn criterion_1_closed_form_matches_brute_force_in_2d() {
    let start = Instant::now();
    let step = 1e-4f64;
    let angles: Vec<f64> = {
        let n = (std::f64::consts::TAU / step).ceil() as usize;
        (0..n).map(|i| i as f64 * step).collect()
    };
    let mut worst_gap = 0.0f64;
    for instance in 0..100u64 {
        let mut rng = derive_rng(0xACC1, &[instance]);
        let d1 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-5.0..5.0));
        let d2 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-5.0..5.0));
        let solved = match_by_rotation(&d1, &d2).unwrap().objective;

        let mut brute = f64::INFINITY;
        for &theta in &angles {
            let (sin, cos) = theta.sin_cos();
            // Proper rotation and its composition with diag(1, -1).
            for reflected in [false, true] {
                let r = if reflected {
                    DMatrix::from_row_slice(2, 2, &[cos, sin, sin, -cos])
                } else {
                    DMatrix::from_row_slice(2, 2, &[cos, -sin, sin, cos])
                };
                let value = (r * &d2 - &d1).norm();
                if value < brute {
                    brute = value;
                }
            }
        }
        let gap = (solved - brute).abs();
        worst_gap = worst_gap.max(gap);
        assert!(
            gap <= 1e-6,
            "instance {instance}: solved {solved} vs swept {brute}"
        );
        assert!(
            solved <= brute + 1e-12,
            "instance {instance}: sweep beat the closed form"
        );
    }
    assert_within(start.elapsed(), 10, "2d brute-force comparison");
    println!(
        "PASS criterion 1: closed-form objective matches a 1e-4-rad sweep over all \
         orthogonal 2x2 candidates on 100 instances (worst gap {worst_gap:.2e})"
    );
}

/// Between orthonormal direction sets a perfect orthogonal match always
/// exists: solved objective ~ 0 and the solution is orthogonal to 1e-10.
#[test]
fn criterion_2_orthonormal_direction_sets_match_exactly() {
    let start = Instant::now();
    let mut worst_objective = 0.0f64;
    let mut worst_orth = 0.0f64;
    for instance in 0..1000u64 {
        let mut rng = derive_rng(0xACC2, &[instance]);
        let d = rng.random_range(1..=10usize);
        let h = rng.random_range(1..=d);
        let u = random_orthogonal(d, &mut rng).columns(0, h).into_owned();
        let v = random_orthogonal(d, &mut rng).columns(0, h).into_owned();
        let solution = match_by_rotation(&u, &v).unwrap();
        let orth_err = (solution.rotation.transpose() * &solution.rotation
            - DMatrix::identity(d, d))
        .norm();
        worst_objective = worst_objective.max(solution.objective);
        worst_orth = worst_orth.max(orth_err);
        assert!(
            solution.objective <= 1e-8,
            "instance {instance} (d={d}, h={h}): objective {}",
            solution.objective
        );
        assert!(
            orth_err <= 1e-10,
            "instance {instance}: orthogonality error {orth_err}"
        );
    }
    assert_within(start.elapsed(), 5, "orthonormal matching");
    println!(
        "PASS criterion 2: 1000 orthonormal pairs (d <= 10) matched with objective \
         <= 1e-8 (worst {worst_objective:.2e}) and orthogonality error <= 1e-10 \
         (worst {worst_orth:.2e})"
    );
}

/// Additive worst-case bound: on 50 random instances and budgets
/// {0.1, 1, 10}, no sampled perturbation (100000 per pair) exceeds
/// nominal + budget, and the analytic worst case attains it within 1e-9.
#[test]
fn criterion_3_perturbation_bound_holds_and_is_attained() {
    let start = Instant::now();
    let opts = RobustCheckOptions::default();
    assert_eq!(opts.num_instances, 50);
    assert_eq!(opts.rho_values, vec![0.1, 1.0, 10.0]);
    assert_eq!(opts.mc_samples, 100_000);
    let summary = run_robust_check(&opts).unwrap();
    assert!(
        summary.max_violation <= 1e-9,
        "a sampled perturbation exceeded the bound by {}",
        summary.max_violation
    );
    assert!(
        summary.max_analytic_gap <= 1e-9,
        "the analytic worst case missed the bound by {}",
        summary.max_analytic_gap
    );
    assert!(summary.passed);
    assert_within(start.elapsed(), 60, "perturbation-bound check");
    println!(
        "PASS criterion 3: over 50 instances x budgets {{0.1, 1, 10}} x 100000 draws, \
         max excess over nominal+budget {:.2e} and analytic attainment gap {:.2e}",
        summary.max_violation, summary.max_analytic_gap
    );
}

fn small_rotation_3d() -> DMatrix<f64> {
    let g = |i: usize, j: usize, t: f64| {
        let mut m = DMatrix::identity(3, 3);
        m[(i, i)] = t.cos();
        m[(j, j)] = t.cos();
        m[(i, j)] = -t.sin();
        m[(j, i)] = t.sin();
        m
    };
    g(0, 1, 0.15) * g(1, 2, -0.12) * g(0, 2, 0.08)
}

/// Exact recovery of an orthogonally transformed copy, both from population
/// moments (distribution parameters recovered to 1e-8 per entry) and from a
/// million-sample fit (points recovered to 1e-3 per entry).
#[test]
fn criterion_4_transformed_copies_are_recovered() {
    let start = Instant::now();
    let spec = default_study_spec();

    // Population level, arbitrary orthogonal transform: the fitted map must
    // carry the source distribution onto the target distribution.
    let transform = GroundTruthTransform::random(3, 2, 4242).unwrap();
    let q = &transform.rotation;
    let mut target_moments = Vec::new();
    let mut source_moments = Vec::new();
    for (class_idx, comp) in spec.components.iter().enumerate() {
        let mean = comp.mean_vector();
        let cov = comp.covariance();
        let t = &transform.translations[class_idx];
        source_moments
            .push(ClassMoments::from_population(q * &mean + t, q * &cov * q.transpose()).unwrap());
        target_moments.push(ClassMoments::from_population(mean, cov).unwrap());
    }
    let fit =
        fit_two_outlooks_from_moments("target", "source", &target_moments, &source_moments, 3)
            .unwrap();
    let mut worst_population = 0.0f64;
    for (class_idx, cm) in fit.mapping.classes.iter().enumerate() {
        let mapped_mean =
            &cm.rotation * (&source_moments[class_idx].mean - &cm.source_mean) + &cm.target_mean;
        let mean_err = (mapped_mean - &target_moments[class_idx].mean).abs().max();
        let mapped_cov =
            &cm.rotation * &source_moments[class_idx].covariance * cm.rotation.transpose();
        let cov_err = (mapped_cov - &target_moments[class_idx].covariance)
            .abs()
            .max();
        worst_population = worst_population.max(mean_err).max(cov_err);
        assert!(
            mean_err <= 1e-8 && cov_err <= 1e-8,
            "class {}: population recovery errors mean {mean_err:.2e}, cov {cov_err:.2e}",
            class_idx + 1
        );
    }

    // One million samples per class, transformed pointwise: mapping the
    // transformed copy back must reproduce every original entry.
    let n = 1_000_000usize;
    let mut target = sample_mixture(&spec, &[n, n], 0xACC4).unwrap();
    target.id = "target".into();
    let copy_transform = GroundTruthTransform::new(
        small_rotation_3d(),
        vec![
            DVector::from_column_slice(&[0.3, -0.2, 0.1]),
            DVector::from_column_slice(&[-0.5, 0.4, 0.2]),
        ],
    )
    .unwrap();
    let mut source = transform_outlook(&target, &copy_transform).unwrap();
    source.id = "source".into();
    let fit = fit_two_outlooks_with(&target, &source, 3, &FitOptions::unscaled()).unwrap();
    let mapped = map_into_target(&fit.mapping, &source.features, &source.labels).unwrap();
    let sample_err = (&mapped - &target.features).abs().max();
    assert!(
        sample_err <= 1e-3,
        "per-entry recovery error {sample_err:.2e} at n = 10^6"
    );

    assert_within(start.elapsed(), 120, "recovery check");
    println!(
        "PASS criterion 4: transformed-copy recovery error {worst_population:.2e} per \
         entry from population moments (<= 1e-8) and {sample_err:.2e} per entry at \
         n = 10^6 (<= 1e-3)"
    );
}

/// Estimation error shrinks like n^(-1/2): medians strictly decrease over
/// the size grid and the log-log slope sits in [-0.7, -0.3].
#[test]
fn criterion_5_estimation_error_follows_root_n_trend() {
    let start = Instant::now();
    let transform = GroundTruthTransform::random(3, 2, 11).unwrap();
    let curve = sample_complexity_study(
        &default_study_spec(),
        &transform,
        &[50, 200, 800, 3200],
        20,
        2,
        0,
    )
    .unwrap();
    assert!(
        curve.medians_strictly_decreasing(),
        "medians {:?} are not strictly decreasing",
        curve.medians
    );
    let slope = curve.log_log_slope();
    assert!(
        (-0.7..=-0.3).contains(&slope),
        "log-log slope {slope} outside [-0.7, -0.3]; medians {:?}",
        curve.medians
    );
    assert_within(start.elapsed(), 120, "estimation-error study");
    println!(
        "PASS criterion 5: rotation-error medians {:?} strictly decrease; \
         log-log slope {slope:.3} within [-0.7, -0.3]",
        curve.medians
    );
}

/// A three-outlook model is self-consistent: the pairwise objective is
/// zero, switching out and back reproduces rows to 1e-10, and switching
/// agrees with directly composed per-class maps to 1e-9.
#[test]
fn criterion_6_multi_outlook_model_is_consistent() {
    let spec = default_study_spec();
    let mut a = sample_mixture(&spec, &[80, 80], 61).unwrap();
    a.id = "a".into();
    let qb = GroundTruthTransform::random(3, 2, 64).unwrap();
    let qc = GroundTruthTransform::random(3, 2, 65).unwrap();
    let mut b = transform_outlook(&sample_mixture(&spec, &[90, 70], 62).unwrap(), &qb).unwrap();
    b.id = "b".into();
    let mut c = transform_outlook(&sample_mixture(&spec, &[75, 85], 63).unwrap(), &qc).unwrap();
    c.id = "c".into();
    let outlooks = vec![a, b, c];

    let fit = fit_multi_outlook(&outlooks, "a", 2, &FitOptions::unscaled()).unwrap();
    assert!(
        fit.pairwise_objective <= 1e-8,
        "pairwise objective {}",
        fit.pairwise_objective
    );

    let a = &outlooks[0];
    let switched = switch_final_outlook(&fit.model, &a.features, &a.labels, "b").unwrap();
    let map_b = &fit.model.mappings["b"];
    let back = truncate_to_target(
        map_b,
        &map_scaled_rows(map_b, &switched, &a.labels).unwrap(),
    )
    .unwrap();
    let round_trip_err = (&back - &a.features).abs().max();
    assert!(round_trip_err <= 1e-10, "switch round trip error {round_trip_err}");

    let c = &outlooks[2];
    let map_c = &fit.model.mappings["c"];
    let into_a = truncate_to_target(
        map_c,
        &apply_mapping(map_c, &c.features, &c.labels).unwrap(),
    )
    .unwrap();
    let via_switch = switch_final_outlook(&fit.model, &into_a, &c.labels, "b").unwrap();
    let mut composed_err = 0.0f64;
    for (row, &label) in c.labels.iter().enumerate() {
        let cmc = &map_c.classes[label - 1];
        let cmb = &map_b.classes[label - 1];
        let x = c.features.row(row).transpose();
        let y = &cmc.rotation * (x - &cmc.source_mean) + &cmc.target_mean;
        let z = cmb.rotation.transpose() * (y - &cmb.target_mean) + &cmb.source_mean;
        for j in 0..map_b.source_dim {
            composed_err = composed_err.max((via_switch[(row, j)] - z[j]).abs());
        }
    }
    assert!(composed_err <= 1e-9, "composed vs direct mismatch {composed_err}");

    println!(
        "PASS criterion 6: m=3 model has pairwise objective {:.2e}, switch round trip \
         error {round_trip_err:.2e}, composed-vs-direct error {composed_err:.2e}",
        fit.pairwise_objective
    );
}

/// Classes separated by orientation rather than location: variance 5 along a
/// shared nuisance axis, variance 1.5 along a class-specific axis (e2 for
/// class 1, e3 for class 2), zero elsewhere in 4-D.
fn orientation_spec() -> MixtureSpec {
    let mut cov1 = vec![vec![0.0; 4]; 4];
    cov1[0][0] = 5.0;
    cov1[1][1] = 1.5;
    let mut cov2 = vec![vec![0.0; 4]; 4];
    cov2[0][0] = 5.0;
    cov2[2][2] = 1.5;
    MixtureSpec {
        d: 4,
        components: vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![0.0; 4],
                cov: cov1,
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![0.0; 4],
                cov: cov2,
            },
        ],
    }
}

/// Target (2000 rows/class) plus an orthogonally transformed, heavier
/// (3000 rows/class) independent sample of the same mixture.
fn orientation_pair(seed: u64) -> (Outlook, Outlook) {
    let spec = orientation_spec();
    let mut target = sample_mixture(&spec, &[2000, 2000], seed).unwrap();
    target.id = "target".into();
    let clean = sample_mixture(&spec, &[3000, 3000], seed ^ 0x517c).unwrap();
    let transform = GroundTruthTransform::random(4, 2, 77).unwrap();
    let mut source = transform_outlook(&clean, &transform).unwrap();
    source.id = "source".into();
    (target, source)
}

/// At a 5% label budget, training on mapped source data beats direct
/// training in >= 80% of 20 repetitions with mean improvement >= 0.02; with
/// every label available the direct regime equals the all-data regime
/// exactly.
#[test]
fn criterion_7_mapped_training_beats_scarce_direct_training() {
    let start = Instant::now();
    let mut wins = 0usize;
    let mut improvements = Vec::new();
    for rep in 0..20u64 {
        let (target, source) = orientation_pair(9000 + rep);
        let opts = TransferOptions {
            label_fractions: vec![0.05],
            folds: 1,
            seed: rep,
            h: 2,
            winsor_fraction: None,
            methods: vec![Method::Trg, Method::Momap],
            ..TransferOptions::default()
        };
        let report = run_transfer_experiment(&target, &source, &opts).unwrap();
        let trg = report.aggregates[0].mean_ber;
        let momap = report.aggregates[1].mean_ber;
        if momap < trg {
            wins += 1;
        }
        improvements.push(trg - momap);
    }
    let mean_improvement = improvements.iter().sum::<f64>() / improvements.len() as f64;
    assert!(wins >= 16, "mapped training won only {wins}/20 repetitions");
    assert!(
        mean_improvement >= 0.02,
        "mean improvement {mean_improvement} below 0.02"
    );

    let (target, source) = orientation_pair(31_000);
    let opts = TransferOptions {
        label_fractions: vec![1.0],
        folds: 3,
        seed: 17,
        h: 2,
        winsor_fraction: None,
        methods: vec![Method::Trg, Method::Opt],
        ..TransferOptions::default()
    };
    let report = run_transfer_experiment(&target, &source, &opts).unwrap();
    let cells_of = |method: Method| {
        report
            .cells
            .iter()
            .filter(|cell| cell.method == method)
            .map(|cell| serde_json::to_string(&cell.result).unwrap())
            .collect::<Vec<_>>()
    };
    let trg_cells = cells_of(Method::Trg);
    let opt_cells = cells_of(Method::Opt);
    assert!(!trg_cells.is_empty());
    assert_eq!(
        trg_cells, opt_cells,
        "full-budget direct training must equal the all-data regime exactly"
    );

    assert_within(start.elapsed(), 300, "transfer protocol");
    println!(
        "PASS criterion 7: mapped training won {wins}/20 runs at a 5% label budget \
         (mean improvement {mean_improvement:.3}); at budget 1.0 the direct and \
         all-data regimes coincide exactly"
    );
}

/// The balanced error rate is the mean of per-class error rates, and
/// confusion rows always sum to the true class counts.
#[test]
fn criterion_8_error_metric_is_exact() {
    // Hand case: 10 class-1 rows with 1 error, 20 class-2 rows with 2.
    let mut actual = vec![1usize; 10];
    actual.extend(vec![2usize; 20]);
    let mut predicted = actual.clone();
    predicted[0] = 2;
    predicted[10] = 1;
    predicted[11] = 1;
    let result = balanced_error_rate(&predicted, &actual, 2).unwrap();
    assert_eq!(result.ber, 0.1, "hand-computed case must be exact");
    assert_eq!(result.per_class_error_rate, vec![0.1, 0.1]);

    let mut checked = 0usize;
    for seed in 0..50u64 {
        let mut rng = derive_rng(0xACC8, &[seed]);
        let classes = rng.random_range(2..=5usize);
        let n = rng.random_range(1..=60usize);
        let actual: Vec<usize> = (0..n).map(|_| rng.random_range(1..=classes)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.random_range(1..=classes)).collect();
        let result = balanced_error_rate(&predicted, &actual, classes).unwrap();
        for class in 1..=classes {
            let count = actual.iter().filter(|&&l| l == class).count();
            let row_sum: usize = result.confusion[class - 1].iter().sum();
            assert_eq!(
                row_sum,
                count,
                "confusion row {class} sums to {row_sum}, expected {count} (seed {seed})"
            );
            checked += 1;
        }
    }
    println!(
        "PASS criterion 8: hand-built error case evaluates to exactly 0.1 and \
         confusion rows matched true class counts in {checked} random checks"
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_outlook-map"))
}

fn run_cli(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Fixed seeds make `eval` and `study` reproduce their result files byte for
/// byte, across repeated runs and across worker-thread counts.
#[test]
fn criterion_9_result_files_are_byte_identical_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let spec = write_file(
        dir.path(),
        "spec.json",
        r#"{
            "d": 2,
            "components": [
                {"weight": 0.5, "mean": [0.0, 0.0], "cov": [[2.0, 0.3], [0.3, 0.7]]},
                {"weight": 0.5, "mean": [2.5, 1.0], "cov": [[1.0, -0.2], [-0.2, 1.5]]}
            ]
        }"#,
    );
    let base = dir.path().join("base.csv");
    let generated = run_cli(&[
        "gen",
        "--spec",
        spec.to_str().unwrap(),
        "--counts",
        "60,60",
        "--seed",
        "5",
        "--out",
        base.to_str().unwrap(),
        "--transform",
        "random",
    ]);
    assert_eq!(generated.status.code(), Some(0));

    let eval_config = write_file(
        dir.path(),
        "eval.json",
        &format!(
            r#"{{
                "mode": "two-outlook",
                "outlooks": [
                    {{"id": "target", "path": "{}"}},
                    {{"id": "source", "path": "{}"}}
                ],
                "target_id": "target",
                "h": 2,
                "label_fractions": [0.2, 0.5],
                "folds": 2,
                "seed": 8
            }}"#,
            base.display(),
            base.with_extension("transformed.csv").display(),
        ),
    );
    let study_config = write_file(
        dir.path(),
        "study.json",
        r#"{
            "mode": "study",
            "seed": 12,
            "study": {
                "sizes": [50, 200, 800],
                "seeds_per_size": 5,
                "h": 2,
                "rho_values": [0.5, 2.0],
                "mc_samples": 2000,
                "num_instances": 5
            }
        }"#,
    );

    let runs = [
        ("a", None),
        ("b", None),
        ("c", Some("1")),
        ("d", Some("8")),
    ];

    let mut eval_outputs: Vec<(String, String)> = Vec::new();
    for (name, threads) in runs {
        let out = dir.path().join(format!("eval_{name}"));
        let mut args = vec![
            "eval",
            "--config",
            eval_config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(t) = threads {
            args.extend(["--threads", t]);
        }
        let result = run_cli(&args);
        assert_eq!(result.status.code(), Some(0));
        eval_outputs.push((read(&out.with_extension("csv")), read(&out.with_extension("json"))));
    }
    for (csv, json) in &eval_outputs[1..] {
        assert_eq!(csv, &eval_outputs[0].0, "eval CSV differs between runs");
        assert_eq!(json, &eval_outputs[0].1, "eval JSON differs between runs");
    }

    let mut study_outputs: Vec<(String, String)> = Vec::new();
    for (name, threads) in runs {
        let out = dir.path().join(format!("study_{name}"));
        let mut args = vec![
            "study",
            "--config",
            study_config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(t) = threads {
            args.extend(["--threads", t]);
        }
        let result = run_cli(&args);
        assert_eq!(result.status.code(), Some(0));
        study_outputs.push((
            read(&out.with_extension("curve.csv")),
            read(&out.with_extension("summary.json")),
        ));
    }
    for (curve, summary) in &study_outputs[1..] {
        assert_eq!(curve, &study_outputs[0].0, "study curve differs between runs");
        assert_eq!(summary, &study_outputs[0].1, "study summary differs between runs");
    }

    println!(
        "PASS criterion 9: eval and study result files are byte-identical across \
         repeated runs and across --threads 1 vs --threads 8"
    );
}
