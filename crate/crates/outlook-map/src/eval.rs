//! Evaluation harness: balanced error rate, a deterministic k-NN
//! classifier, and label-budget experiments comparing training regimes on
//! identical stratified splits.
//!
//! Six regimes are compared. `TRG` trains on the labeled target fraction
//! alone; `OPT` trains on the fully labeled target (the ceiling); `SRC`
//! trains on the raw source (shared feature space only); `ALL` pools `SRC`
//! and `TRG` training rows; `FEDA` is the classic feature-augmentation
//! baseline (source/common/target block replication, shared space only);
//! `MOMAP` fits a per-class alignment on the labeled target fraction plus
//! the fully labeled source and trains on the mapped source rows only.
//!
//! Every cell of the sweep derives its split from a counter-based stream
//! keyed by `(experiment seed, component index, fraction index, fold)`, so
//! reports are byte-identical regardless of thread count or scheduling.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::data_model::{cell_seed, stratified_split, Outlook};
use crate::error::{Error, Result};
use crate::momap::{
    fit_multi_outlook, fit_two_outlooks_with, map_into_target, FitOptions, OutlookMapping,
};
use crate::preprocess::{apply_scaler, fit_scaler, ScalerParams};
use crate::rng::{derive_seed, stream};

/// Training regime evaluated in an experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    /// Train on the labeled target fraction only.
    Trg,
    /// Train on the source outlook's rows directly (shared space only).
    Src,
    /// Train on the labeled target fraction pooled with the source rows
    /// (shared space only).
    All,
    /// Feature-augmentation baseline: source rows become
    /// `(x, x, 0)`, target rows `(x, 0, x)` (shared space only).
    Feda,
    /// Fit the per-class affine alignment on the labeled target fraction
    /// plus the fully labeled source, then train on mapped source rows only.
    Momap,
    /// Train on the fully labeled target: the performance ceiling.
    Opt,
}

impl Method {
    /// Canonical upper-case name, as used in reports and configs.
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Trg => "TRG",
            Method::Src => "SRC",
            Method::All => "ALL",
            Method::Feda => "FEDA",
            Method::Momap => "MOMAP",
            Method::Opt => "OPT",
        }
    }

    /// All methods, in canonical report order.
    pub fn all() -> [Method; 6] {
        [
            Method::Trg,
            Method::Src,
            Method::All,
            Method::Feda,
            Method::Momap,
            Method::Opt,
        ]
    }

    /// True for regimes that require source and target to share one
    /// feature space.
    pub fn needs_shared_space(&self) -> bool {
        matches!(self, Method::Src | Method::All | Method::Feda)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TRG" => Ok(Method::Trg),
            "SRC" => Ok(Method::Src),
            "ALL" => Ok(Method::All),
            "FEDA" => Ok(Method::Feda),
            "MOMAP" => Ok(Method::Momap),
            "OPT" => Ok(Method::Opt),
            other => Err(Error::Config(format!(
                "unknown method '{other}'; expected one of TRG, SRC, ALL, FEDA, MOMAP, OPT"
            ))),
        }
    }
}

fn serialize_rates<S: Serializer>(rates: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    // NaN marks a class absent from the test set; JSON has no NaN, so emit
    // null there.
    let mut seq = s.serialize_seq(Some(rates.len()))?;
    for r in rates {
        if r.is_nan() {
            seq.serialize_element(&Option::<f64>::None)?;
        } else {
            seq.serialize_element(r)?;
        }
    }
    seq.end()
}

/// Balanced-error-rate breakdown for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerResult {
    /// Per-class error rates `e_i / n_i`, indexed by class − 1. Classes
    /// absent from the test set hold NaN (serialized as null).
    #[serde(serialize_with = "serialize_rates")]
    pub per_class_error_rate: Vec<f64>,
    /// Mean of the per-class error rates over classes present in the test
    /// set; 0.0 when the test set is empty.
    pub ber: f64,
    /// Confusion counts; `confusion[i][j]` counts rows of actual class
    /// `i + 1` predicted as class `j + 1`.
    pub confusion: Vec<Vec<usize>>,
    /// 1-based classes with no test rows, excluded from the average.
    pub missing_classes: Vec<usize>,
}

/// Compute the balanced error rate: the mean over classes of each class's
/// error rate on the test set. Classes with no test rows are excluded from
/// the mean and listed in `missing_classes`.
pub fn balanced_error_rate(
    predicted: &[usize],
    actual: &[usize],
    num_classes: usize,
) -> Result<BerResult> {
    if num_classes == 0 {
        return Err(Error::InvalidParameter(
            "balanced error rate needs at least one class".into(),
        ));
    }
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            context: "balanced_error_rate".into(),
            expected: format!("{} predictions", actual.len()),
            actual: format!("{}", predicted.len()),
        });
    }
    for &label in actual.iter().chain(predicted.iter()) {
        if label == 0 || label > num_classes {
            return Err(Error::UnseenLabel {
                label,
                num_classes,
            });
        }
    }

    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &a) in predicted.iter().zip(actual.iter()) {
        confusion[a - 1][p - 1] += 1;
    }

    let mut per_class = Vec::with_capacity(num_classes);
    let mut missing = Vec::new();
    let mut sum = 0.0;
    let mut present = 0usize;
    for class in 1..=num_classes {
        let row = &confusion[class - 1];
        let n_i: usize = row.iter().sum();
        if n_i == 0 {
            per_class.push(f64::NAN);
            missing.push(class);
        } else {
            let e_i = n_i - row[class - 1];
            let rate = e_i as f64 / n_i as f64;
            per_class.push(rate);
            sum += rate;
            present += 1;
        }
    }
    let ber = if present == 0 { 0.0 } else { sum / present as f64 };
    Ok(BerResult {
        per_class_error_rate: per_class,
        ber,
        confusion,
        missing_classes: missing,
    })
}

/// Euclidean k-nearest-neighbour classification with majority vote.
///
/// Fully deterministic: neighbour sets are selected under the total order
/// (distance, train row index) and vote ties resolve to the smallest class
/// index. `k` is capped at the number of training rows. An empty test
/// matrix yields an empty prediction vector.
pub fn knn_classify(
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    test_x: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "k-NN needs k >= 1".into(),
        ));
    }
    let n_train = train_x.nrows();
    if n_train == 0 {
        return Err(Error::EmptyInput(
            "k-NN needs at least one training row".into(),
        ));
    }
    if train_y.len() != n_train {
        return Err(Error::DimensionMismatch {
            context: "knn_classify training labels".into(),
            expected: format!("{n_train} labels"),
            actual: format!("{}", train_y.len()),
        });
    }
    if test_x.nrows() > 0 && test_x.ncols() != train_x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "knn_classify test width".into(),
            expected: format!("{} columns", train_x.ncols()),
            actual: format!("{}", test_x.ncols()),
        });
    }
    let max_label = *train_y.iter().max().expect("non-empty labels");
    if train_y.contains(&0) {
        return Err(Error::UnseenLabel {
            label: 0,
            num_classes: max_label,
        });
    }
    let k_eff = k.min(n_train);

    let predictions: Vec<usize> = (0..test_x.nrows())
        .into_par_iter()
        .map(|t| {
            let query = test_x.row(t);
            let mut dists: Vec<(f64, usize)> = (0..n_train)
                .map(|i| {
                    let mut d2 = 0.0;
                    for c in 0..train_x.ncols() {
                        let diff = train_x[(i, c)] - query[c];
                        d2 += diff * diff;
                    }
                    (d2, i)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
            };
            if k_eff < dists.len() {
                dists.select_nth_unstable_by(k_eff - 1, cmp);
            }
            let mut votes = vec![0usize; max_label + 1];
            for &(_, i) in &dists[..k_eff] {
                votes[train_y[i]] += 1;
            }
            let mut best = 1;
            for class in 2..=max_label {
                if votes[class] > votes[best] {
                    best = class;
                }
            }
            best
        })
        .collect();
    Ok(predictions)
}

/// Sweep configuration for the label-budget experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOptions {
    /// Labeled fractions of the target outlook to sweep, each in (0, 1],
    /// all distinct.
    pub label_fractions: Vec<f64>,
    /// Repetitions per fraction; each fold re-splits with fresh randomness.
    pub folds: usize,
    /// Experiment seed; all cell splits derive from it.
    pub seed: u64,
    /// Neighbour count for the classifier.
    pub knn_k: usize,
    /// Winsorized min-max scaling fraction; `None` evaluates on raw
    /// features.
    pub winsor_fraction: Option<f64>,
    /// Principal directions matched per class when fitting alignments.
    pub h: usize,
    /// Regimes to evaluate, in report order; must be non-empty and
    /// duplicate-free.
    pub methods: Vec<Method>,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            label_fractions: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            folds: 5,
            seed: 0,
            knn_k: 5,
            winsor_fraction: Some(0.02),
            h: 1,
            methods: vec![Method::Trg, Method::Momap, Method::Opt],
        }
    }
}

/// One evaluated (method, component, fraction, fold) combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportCell {
    /// Regime evaluated.
    pub method: Method,
    /// Outlook whose held-out rows were tested.
    pub component: String,
    /// Labeled fraction used for the split.
    pub fraction: f64,
    /// 0-based repetition index.
    pub fold: usize,
    /// Error breakdown on the held-out rows.
    pub result: BerResult,
}

/// Mean and spread of cell error rates for one (method, fraction) pair,
/// pooled over components and folds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    /// Regime aggregated.
    pub method: Method,
    /// Labeled fraction aggregated.
    pub fraction: f64,
    /// Cells pooled into this aggregate.
    pub num_cells: usize,
    /// Mean balanced error rate over those cells.
    pub mean_ber: f64,
    /// Sample standard deviation over those cells; 0.0 with fewer than two.
    pub std_ber: f64,
}

/// Full result of a label-budget sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    /// Regimes evaluated, in report order.
    pub methods: Vec<Method>,
    /// Tested outlook ids, in evaluation order.
    pub components: Vec<String>,
    /// Swept labeled fractions.
    pub label_fractions: Vec<f64>,
    /// Repetitions per (component, fraction).
    pub folds: usize,
    /// Shared class count.
    pub num_classes: usize,
    /// Neighbour count used by the classifier.
    pub knn_k: usize,
    /// Experiment seed.
    pub seed: u64,
    /// Every evaluated cell, ordered by (component, fraction, fold, method).
    pub cells: Vec<ReportCell>,
    /// Per (method, fraction) summaries pooled over components and folds.
    pub aggregates: Vec<Aggregate>,
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

impl ExperimentReport {
    /// Long-format CSV: one row per (cell, class) plus a `ber` summary row
    /// per cell. Absent classes leave the value empty.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("method,component,fraction,fold,class,value\n");
        for cell in &self.cells {
            let prefix = format!(
                "{},{},{},{}",
                cell.method, cell.component, cell.fraction, cell.fold
            );
            for (idx, rate) in cell.result.per_class_error_rate.iter().enumerate() {
                out.push_str(&format!("{prefix},{},{}\n", idx + 1, format_value(*rate)));
            }
            out.push_str(&format!("{prefix},ber,{}\n", format_value(cell.result.ber)));
        }
        out
    }

    /// Pretty-printed JSON with absent-class rates as null.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Recompute the (method, fraction) aggregates from the cells.
    pub fn recompute_aggregates(&self) -> Vec<Aggregate> {
        compute_aggregates(&self.methods, &self.label_fractions, &self.cells)
    }
}

fn compute_aggregates(
    methods: &[Method],
    fractions: &[f64],
    cells: &[ReportCell],
) -> Vec<Aggregate> {
    let mut aggregates = Vec::with_capacity(methods.len() * fractions.len());
    for &method in methods {
        for &fraction in fractions {
            let bers: Vec<f64> = cells
                .iter()
                .filter(|c| c.method == method && c.fraction == fraction)
                .map(|c| c.result.ber)
                .collect();
            let n = bers.len();
            let mean = if n == 0 {
                0.0
            } else {
                bers.iter().sum::<f64>() / n as f64
            };
            let std = if n < 2 {
                0.0
            } else {
                let var =
                    bers.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (n - 1) as f64;
                var.sqrt()
            };
            aggregates.push(Aggregate {
                method,
                fraction,
                num_cells: n,
                mean_ber: mean,
                std_ber: std,
            });
        }
    }
    aggregates
}

fn validate_sweep(opts: &TransferOptions) -> Result<()> {
    if opts.label_fractions.is_empty() {
        return Err(Error::Config("no label fractions configured".into()));
    }
    for &f in &opts.label_fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "label fractions must lie in (0, 1], got {f}"
            )));
        }
    }
    for (i, &f) in opts.label_fractions.iter().enumerate() {
        if opts.label_fractions[..i].contains(&f) {
            return Err(Error::Config(format!("duplicate label fraction {f}")));
        }
    }
    if opts.folds == 0 {
        return Err(Error::Config("folds must be at least 1".into()));
    }
    if opts.knn_k == 0 {
        return Err(Error::Config("knn_k must be at least 1".into()));
    }
    if opts.methods.is_empty() {
        return Err(Error::Config("no methods configured".into()));
    }
    for (i, m) in opts.methods.iter().enumerate() {
        if opts.methods[..i].contains(m) {
            return Err(Error::Config(format!("duplicate method {m}")));
        }
    }
    Ok(())
}

fn fit_scaler_opt(
    features: &DMatrix<f64>,
    winsor_fraction: Option<f64>,
) -> Result<Option<ScalerParams>> {
    winsor_fraction.map(|w| fit_scaler(features, w)).transpose()
}

fn scale_with(scaler: &Option<ScalerParams>, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match scaler {
        Some(params) => apply_scaler(features, params),
        None => Ok(features.clone()),
    }
}

fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Block layout for the feature-augmentation baseline.
enum FedaRole {
    Source,
    Target,
}

fn feda_augment(x: &DMatrix<f64>, role: FedaRole) -> DMatrix<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut out = DMatrix::zeros(n, 3 * d);
    out.columns_mut(0, d).copy_from(x);
    match role {
        FedaRole::Source => out.columns_mut(d, d).copy_from(x),
        FedaRole::Target => out.columns_mut(2 * d, d).copy_from(x),
    }
    out
}

/// Held-out rows of one split, in raw feature space.
struct TestFold {
    features: DMatrix<f64>,
    labels: Vec<usize>,
}

/// Evaluate one regime on one split and wrap the result in a cell.
#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    method: Method,
    component: &str,
    fraction: f64,
    fold: usize,
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    test_x: &DMatrix<f64>,
    test_y: &[usize],
    knn_k: usize,
    num_classes: usize,
) -> Result<ReportCell> {
    let predicted = knn_classify(train_x, train_y, test_x, knn_k)?;
    let result = balanced_error_rate(&predicted, test_y, num_classes)?;
    Ok(ReportCell {
        method,
        component: component.to_string(),
        fraction,
        fold,
        result,
    })
}

/// Empty-test-fold cell: no predictions, zero confusion, every class
/// missing.
fn empty_cell(method: Method, component: &str, fraction: f64, fold: usize, c: usize) -> ReportCell {
    ReportCell {
        method,
        component: component.to_string(),
        fraction,
        fold,
        result: BerResult {
            per_class_error_rate: vec![f64::NAN; c],
            ber: 0.0,
            confusion: vec![vec![0; c]; c],
            missing_classes: (1..=c).collect(),
        },
    }
}

fn transfer_cells(
    target: &Outlook,
    source: &Outlook,
    opts: &TransferOptions,
    fraction_idx: usize,
    fold: usize,
) -> Result<Vec<ReportCell>> {
    let fraction = opts.label_fractions[fraction_idx];
    let num_classes = target.num_classes();
    let split_seed = cell_seed(opts.seed, 0, fraction_idx, fold);
    let split = stratified_split(target, fraction, split_seed)?;
    let labeled = target.select_rows(&split.train_rows)?;
    let test = if split.test_rows.is_empty() {
        None
    } else {
        let held_out = target.select_rows(&split.test_rows)?;
        Some(TestFold {
            features: held_out.features,
            labels: held_out.labels,
        })
    };

    let labeled_scaler = fit_scaler_opt(&labeled.features, opts.winsor_fraction)?;
    let mut cells = Vec::with_capacity(opts.methods.len());
    for &method in &opts.methods {
        let Some(test) = test.as_ref() else {
            cells.push(empty_cell(method, &target.id, fraction, fold, num_classes));
            continue;
        };
        let cell = match method {
            Method::Trg => {
                let train_x = scale_with(&labeled_scaler, &labeled.features)?;
                let test_x = scale_with(&labeled_scaler, &test.features)?;
                evaluate_cell(
                    method, &target.id, fraction, fold, &train_x, &labeled.labels, &test_x,
                    &test.labels, opts.knn_k, num_classes,
                )?
            }
            Method::Opt => {
                let all_scaler = fit_scaler_opt(&target.features, opts.winsor_fraction)?;
                let train_x = scale_with(&all_scaler, &target.features)?;
                let test_x = scale_with(&all_scaler, &test.features)?;
                evaluate_cell(
                    method, &target.id, fraction, fold, &train_x, &target.labels, &test_x,
                    &test.labels, opts.knn_k, num_classes,
                )?
            }
            Method::Src => {
                let source_scaler = fit_scaler_opt(&source.features, opts.winsor_fraction)?;
                let train_x = scale_with(&source_scaler, &source.features)?;
                let test_x = scale_with(&labeled_scaler, &test.features)?;
                evaluate_cell(
                    method, &target.id, fraction, fold, &train_x, &source.labels, &test_x,
                    &test.labels, opts.knn_k, num_classes,
                )?
            }
            Method::All => {
                let source_scaler = fit_scaler_opt(&source.features, opts.winsor_fraction)?;
                let src_x = scale_with(&source_scaler, &source.features)?;
                let trg_x = scale_with(&labeled_scaler, &labeled.features)?;
                let train_x = vstack(&src_x, &trg_x);
                let mut train_y = source.labels.clone();
                train_y.extend_from_slice(&labeled.labels);
                let test_x = scale_with(&labeled_scaler, &test.features)?;
                evaluate_cell(
                    method, &target.id, fraction, fold, &train_x, &train_y, &test_x,
                    &test.labels, opts.knn_k, num_classes,
                )?
            }
            Method::Feda => {
                let source_scaler = fit_scaler_opt(&source.features, opts.winsor_fraction)?;
                let src_x = feda_augment(
                    &scale_with(&source_scaler, &source.features)?,
                    FedaRole::Source,
                );
                let trg_x = feda_augment(
                    &scale_with(&labeled_scaler, &labeled.features)?,
                    FedaRole::Target,
                );
                let train_x = vstack(&src_x, &trg_x);
                let mut train_y = source.labels.clone();
                train_y.extend_from_slice(&labeled.labels);
                let test_x = feda_augment(
                    &scale_with(&labeled_scaler, &test.features)?,
                    FedaRole::Target,
                );
                evaluate_cell(
                    method, &target.id, fraction, fold, &train_x, &train_y, &test_x,
                    &test.labels, opts.knn_k, num_classes,
                )?
            }
            Method::Momap => {
                let fit_opts = FitOptions {
                    winsor_fraction: opts.winsor_fraction,
                    ..FitOptions::default()
                };
                let fit = fit_two_outlooks_with(&labeled, source, opts.h, &fit_opts)?;
                let train_x = map_into_target(&fit.mapping, &source.features, &source.labels)?;
                let test_x = scale_with(&fit.mapping.target_scaler, &test.features)?;
                evaluate_cell(
                    method, &target.id, fraction, fold, &train_x, &source.labels, &test_x,
                    &test.labels, opts.knn_k, num_classes,
                )?
            }
        };
        cells.push(cell);
    }
    Ok(cells)
}

/// Sweep labeled fractions of `target`, evaluating every configured regime
/// on identical stratified splits, with `source` as the auxiliary outlook.
///
/// Cell order is (fraction, fold, method). Splits derive from
/// `(seed, 0, fraction index, fold)`, so results do not depend on thread
/// count.
pub fn run_transfer_experiment(
    target: &Outlook,
    source: &Outlook,
    opts: &TransferOptions,
) -> Result<ExperimentReport> {
    validate_sweep(opts)?;
    if target.num_classes() != source.num_classes() {
        return Err(Error::Config(format!(
            "class counts differ: target '{}' has {}, source '{}' has {}",
            target.id,
            target.num_classes(),
            source.id,
            source.num_classes()
        )));
    }
    if target.id == source.id {
        return Err(Error::Config(format!(
            "target and source share the id '{}'",
            target.id
        )));
    }
    if opts.methods.iter().any(Method::needs_shared_space) && target.dim() != source.dim() {
        let method = opts
            .methods
            .iter()
            .find(|m| m.needs_shared_space())
            .expect("checked above");
        return Err(Error::Config(format!(
            "{method} requires a shared feature space, but target '{}' has {} features and \
             source '{}' has {}",
            target.id,
            target.dim(),
            source.id,
            source.dim()
        )));
    }
    if opts.methods.contains(&Method::Momap) {
        let max_h = target.dim().min(source.dim());
        if opts.h == 0 || opts.h > max_h {
            return Err(Error::Config(format!(
                "h must lie in 1..={max_h}, got {}",
                opts.h
            )));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..opts.label_fractions.len())
        .flat_map(|fi| (0..opts.folds).map(move |fold| (fi, fold)))
        .collect();
    let nested: Vec<Vec<ReportCell>> = jobs
        .into_par_iter()
        .map(|(fi, fold)| transfer_cells(target, source, opts, fi, fold))
        .collect::<Result<_>>()?;
    let cells: Vec<ReportCell> = nested.into_iter().flatten().collect();
    let aggregates = compute_aggregates(&opts.methods, &opts.label_fractions, &cells);
    Ok(ExperimentReport {
        methods: opts.methods.clone(),
        components: vec![target.id.clone()],
        label_fractions: opts.label_fractions.clone(),
        folds: opts.folds,
        num_classes: target.num_classes(),
        knn_k: opts.knn_k,
        seed: opts.seed,
        cells,
        aggregates,
    })
}

fn multi_source_cells(
    outlooks: &[Outlook],
    opts: &TransferOptions,
    component_idx: usize,
    fraction_idx: usize,
    fold: usize,
) -> Result<Vec<ReportCell>> {
    let fraction = opts.label_fractions[fraction_idx];
    let component = &outlooks[component_idx];
    let num_classes = component.num_classes();
    let split_seed = cell_seed(opts.seed, component_idx, fraction_idx, fold);
    let split = stratified_split(component, fraction, split_seed)?;
    let labeled = component.select_rows(&split.train_rows)?;

    if split.test_rows.is_empty() {
        return Ok(vec![empty_cell(
            Method::Momap,
            &component.id,
            fraction,
            fold,
            num_classes,
        )]);
    }
    let held_out = component.select_rows(&split.test_rows)?;

    let mut fit_inputs: Vec<Outlook> = Vec::with_capacity(outlooks.len());
    for (idx, outlook) in outlooks.iter().enumerate() {
        if idx == component_idx {
            fit_inputs.push(labeled.clone());
        } else {
            fit_inputs.push(outlook.clone());
        }
    }
    let fit_opts = FitOptions {
        winsor_fraction: opts.winsor_fraction,
        ..FitOptions::default()
    };
    let fit = fit_multi_outlook(&fit_inputs, &component.id, opts.h, &fit_opts)?;

    // Training data: every other outlook mapped in full into the component's
    // space. None of the component's own rows are trained on.
    let mut train_x: Option<DMatrix<f64>> = None;
    let mut train_y: Vec<usize> = Vec::new();
    for (idx, outlook) in outlooks.iter().enumerate() {
        if idx == component_idx {
            continue;
        }
        let mapping: &OutlookMapping = fit
            .model
            .mappings
            .get(&outlook.id)
            .expect("every non-final outlook has a mapping");
        let mapped = map_into_target(mapping, &outlook.features, &outlook.labels)?;
        train_x = Some(match train_x {
            Some(acc) => vstack(&acc, &mapped),
            None => mapped,
        });
        train_y.extend_from_slice(&outlook.labels);
    }
    let train_x = train_x.expect("at least one non-final outlook");

    let component_scaler = &fit
        .model
        .mappings
        .values()
        .next()
        .expect("non-empty mappings")
        .target_scaler;
    let test_x = scale_with(component_scaler, &held_out.features)?;

    Ok(vec![evaluate_cell(
        Method::Momap,
        &component.id,
        fraction,
        fold,
        &train_x,
        &train_y,
        &test_x,
        &held_out.labels,
        opts.knn_k,
        num_classes,
    )?])
}

/// Rotate the tested role across `outlooks`: for each component, split only
/// that outlook at the labeled fraction, fit a joint alignment of its
/// labeled rows with every other outlook fully labeled, train on the mapped
/// rows of the others, and test on the component's held-out rows.
///
/// Produces `outlooks.len() × |fractions| × folds` cells, all under the
/// mapped-training regime; aggregates pool folds and components per
/// fraction. With two outlooks, each component's cells coincide with the
/// corresponding two-outlook sweep.
pub fn run_multi_source_experiment(
    outlooks: &[Outlook],
    opts: &TransferOptions,
) -> Result<ExperimentReport> {
    validate_sweep(opts)?;
    if outlooks.len() < 2 {
        return Err(Error::Config(format!(
            "multi-source evaluation needs at least two outlooks, got {}",
            outlooks.len()
        )));
    }
    if opts.methods != [Method::Momap] {
        return Err(Error::Config(
            "multi-source evaluation supports only the mapped-training regime; \
             set methods to [\"MOMAP\"]"
                .into(),
        ));
    }
    for (i, outlook) in outlooks.iter().enumerate() {
        if outlooks[..i].iter().any(|o| o.id == outlook.id) {
            return Err(Error::Config(format!(
                "duplicate outlook id '{}'",
                outlook.id
            )));
        }
        if outlook.num_classes() != outlooks[0].num_classes() {
            return Err(Error::Config(format!(
                "class counts differ: outlook '{}' has {}, outlook '{}' has {}",
                outlooks[0].id,
                outlooks[0].num_classes(),
                outlook.id,
                outlook.num_classes()
            )));
        }
    }
    let max_h = outlooks.iter().map(Outlook::dim).min().expect("non-empty");
    if opts.h == 0 || opts.h > max_h {
        return Err(Error::Config(format!(
            "h must lie in 1..={max_h}, got {}",
            opts.h
        )));
    }

    let jobs: Vec<(usize, usize, usize)> = (0..outlooks.len())
        .flat_map(|k| {
            (0..opts.label_fractions.len())
                .flat_map(move |fi| (0..opts.folds).map(move |fold| (k, fi, fold)))
        })
        .collect();
    let nested: Vec<Vec<ReportCell>> = jobs
        .into_par_iter()
        .map(|(k, fi, fold)| multi_source_cells(outlooks, opts, k, fi, fold))
        .collect::<Result<_>>()?;
    let cells: Vec<ReportCell> = nested.into_iter().flatten().collect();
    let aggregates = compute_aggregates(&opts.methods, &opts.label_fractions, &cells);
    Ok(ExperimentReport {
        methods: opts.methods.clone(),
        components: outlooks.iter().map(|o| o.id.clone()).collect(),
        label_fractions: opts.label_fractions.clone(),
        folds: opts.folds,
        num_classes: outlooks[0].num_classes(),
        knn_k: opts.knn_k,
        seed: opts.seed,
        cells,
        aggregates,
    })
}

/// Knobs for [`select_h`].
#[derive(Debug, Clone, PartialEq)]
pub struct HSelectOptions {
    /// Labeled fraction of the target used to fit; the rest validates.
    pub label_fraction: f64,
    /// Neighbour count for the validation classifier.
    pub knn_k: usize,
    /// Scaling fraction passed through to fitting.
    pub winsor_fraction: Option<f64>,
    /// Seed for the single validation split.
    pub seed: u64,
}

impl Default for HSelectOptions {
    fn default() -> Self {
        HSelectOptions {
            label_fraction: 0.2,
            knn_k: 5,
            winsor_fraction: Some(0.02),
            seed: 0,
        }
    }
}

/// Pick the direction count `h` minimizing mapped-training error on one
/// seeded stratified split of `target`. Ties resolve to the smallest
/// candidate.
pub fn select_h(
    target: &Outlook,
    source: &Outlook,
    candidates: &[usize],
    opts: &HSelectOptions,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter(
            "no candidate values for h".into(),
        ));
    }
    let max_h = target.dim().min(source.dim());
    for &h in candidates {
        if h == 0 || h > max_h {
            return Err(Error::InvalidParameter(format!(
                "candidate h = {h} outside 1..={max_h}"
            )));
        }
    }
    if !(opts.label_fraction > 0.0 && opts.label_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "validation label fraction must lie in (0, 1), got {}",
            opts.label_fraction
        )));
    }
    if opts.knn_k == 0 {
        return Err(Error::InvalidParameter("knn_k must be at least 1".into()));
    }

    let mut ordered: Vec<usize> = candidates.to_vec();
    ordered.sort_unstable();
    ordered.dedup();

    let split_seed = derive_seed(opts.seed, &[stream::H_SELECT]);
    let split = stratified_split(target, opts.label_fraction, split_seed)?;
    let labeled = target.select_rows(&split.train_rows)?;
    let held_out = target.select_rows(&split.test_rows)?;
    let num_classes = target.num_classes();

    let fit_opts = FitOptions {
        winsor_fraction: opts.winsor_fraction,
        ..FitOptions::default()
    };
    let mut best: Option<(f64, usize)> = None;
    for &h in &ordered {
        let fit = fit_two_outlooks_with(&labeled, source, h, &fit_opts)?;
        let train_x = map_into_target(&fit.mapping, &source.features, &source.labels)?;
        let test_x = scale_with(&fit.mapping.target_scaler, &held_out.features)?;
        let predicted = knn_classify(&train_x, &source.labels, &test_x, opts.knn_k)?;
        let ber = balanced_error_rate(&predicted, &held_out.labels, num_classes)?.ber;
        // Strict improvement required: ascending iteration makes ties
        // resolve to the smallest h.
        if best.is_none_or(|(b, _)| ber < b) {
            best = Some((ber, h));
        }
    }
    Ok(best.expect("non-empty candidates").1)
}
