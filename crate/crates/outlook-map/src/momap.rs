//! Class-conditional affine alignment between outlooks.
//!
//! A fitted [`OutlookMapping`] carries, per class, an orthogonal rotation
//! plus the two class means: applying it centers a source row at its class
//! mean, rotates it into the target's principal frame, and re-centers it at
//! the target's class mean. Rotations are solved per class by matching the
//! leading eigenvector matrices of the two class covariances
//! ([`crate::procrustes::match_by_rotation`]); outlooks of different widths
//! are reconciled by zero-padding the narrower one.
//!
//! [`MultiOutlookModel`] extends this to `m` outlooks by mapping every
//! outlook into one chosen final outlook; [`switch_final_outlook`] re-roots
//! a fitted model onto another outlook without refitting.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Outlook, class_partition};
use crate::error::{Error, Result};
use crate::moments::{
    ClassMoments, UtilizationMatrix, class_moments, pad_to_dimension, pad_vector,
    utilization_matrix,
};
use crate::preprocess::{ScalerParams, apply_scaler, fit_scaler};
use crate::procrustes::{augment_with_correspondences, match_by_rotation};

/// The affine map for one class: rotation plus the two class means, all in
/// the padded (common-width) scaled space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMapping {
    /// 1-based class index.
    pub class: usize,
    /// Orthogonal `padded_dim x padded_dim` rotation taking centered source
    /// rows into the target frame (applied as `x_row * R^T`).
    pub rotation: DMatrix<f64>,
    /// Scaled source class mean, zero-padded to `padded_dim`.
    pub source_mean: DVector<f64>,
    /// Scaled target class mean, zero-padded to `padded_dim`.
    pub target_mean: DVector<f64>,
}

/// A fitted source-to-target alignment: per-class rotations and means plus
/// the per-outlook scalers that were applied before fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlookMapping {
    /// Outlook whose rows this mapping consumes.
    pub source_id: String,
    /// Outlook whose space mapped rows land in.
    pub target_id: String,
    /// Native feature width of the source outlook.
    pub source_dim: usize,
    /// Native feature width of the target outlook.
    pub target_dim: usize,
    /// Common width: `max(source_dim, target_dim)`.
    pub padded_dim: usize,
    /// Number of principal directions matched per class.
    pub h: usize,
    /// Per-class maps, index `i` holding class `i + 1`.
    pub classes: Vec<ClassMapping>,
    /// Scaler fitted on the source outlook's rows; `None` when fitting ran
    /// on raw features.
    pub source_scaler: Option<ScalerParams>,
    /// Scaler fitted on the target outlook's rows; `None` when fitting ran
    /// on raw features.
    pub target_scaler: Option<ScalerParams>,
}

/// Per-class fit quality: the rotation misfit and spectrum health flags of
/// both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFitDiagnostics {
    /// 1-based class index.
    pub class: usize,
    /// Frobenius misfit `||R * D_src - D_tgt||_F` of the solved rotation
    /// (unsquared). Zero (to rounding) whenever both direction sets are
    /// orthonormal, i.e. whenever no correspondence columns were added.
    pub procrustes_objective: f64,
    /// Singular values of the matching problem, non-increasing.
    pub singular_values: Vec<f64>,
    /// Target-side covariance had fewer than `h` numerically nonzero
    /// eigenvalues.
    pub target_rank_deficient: bool,
    /// Target-side eigen-gap among the matched directions is negligible.
    pub target_degenerate: bool,
    /// Source-side analog of `target_rank_deficient`.
    pub source_rank_deficient: bool,
    /// Source-side analog of `target_degenerate`.
    pub source_degenerate: bool,
}

/// Result of a two-outlook fit: the mapping plus per-class diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoOutlookFit {
    /// The fitted mapping.
    pub mapping: OutlookMapping,
    /// One entry per class, in class order.
    pub diagnostics: Vec<ClassFitDiagnostics>,
}

/// Knobs for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Winsorized min-max scaling fraction applied per outlook before
    /// moment estimation; `None` fits on raw features.
    pub winsor_fraction: Option<f64>,
    /// Known corresponding instances as `(target_row, source_row)` index
    /// pairs; both rows must carry the same label. Each pair is appended as
    /// an extra matched column when solving that class's rotation.
    pub correspondences: Vec<(usize, usize)>,
    /// Column weight for correspondence pairs relative to the unit-length
    /// eigenvector columns.
    pub correspondence_weight: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            winsor_fraction: Some(0.02),
            correspondences: Vec::new(),
            correspondence_weight: 1.0,
        }
    }
}

impl FitOptions {
    /// Options that fit on raw features (no scaling).
    pub fn unscaled() -> Self {
        FitOptions {
            winsor_fraction: None,
            ..FitOptions::default()
        }
    }
}

/// One outlook's fit-ready state: scaled rows, per-class moments, and
/// per-class leading-direction matrices, all in native width.
struct PreparedOutlook {
    scaler: Option<ScalerParams>,
    scaled: DMatrix<f64>,
    moments: Vec<ClassMoments>,
    utilizations: Vec<UtilizationMatrix>,
}

fn prepare_outlook(
    outlook: &Outlook,
    num_classes: usize,
    h: usize,
    winsor_fraction: Option<f64>,
) -> Result<PreparedOutlook> {
    let views = class_partition(outlook);
    for class in 1..=num_classes {
        let count = views.get(class - 1).map_or(0, |v| v.rows.len());
        if count < 2 {
            return Err(Error::ClassTooSmall {
                outlook: outlook.id.clone(),
                class,
                count,
                required: 2,
            });
        }
    }
    let scaler = match winsor_fraction {
        Some(q) => Some(fit_scaler(&outlook.features, q)?),
        None => None,
    };
    let scaled = match &scaler {
        Some(params) => apply_scaler(&outlook.features, params)?,
        None => outlook.features.clone(),
    };
    let mut moments = Vec::with_capacity(num_classes);
    let mut utilizations = Vec::with_capacity(num_classes);
    for view in views.iter().take(num_classes) {
        let rows = DMatrix::from_fn(view.rows.len(), scaled.ncols(), |i, j| {
            scaled[(view.rows[i], j)]
        });
        let m = class_moments(&rows)?;
        let u = utilization_matrix(&m, h)?;
        moments.push(m);
        utilizations.push(u);
    }
    Ok(PreparedOutlook {
        scaler,
        scaled,
        moments,
        utilizations,
    })
}

/// Fit a source-to-target alignment with default options (winsorized
/// scaling at 0.02, no correspondences).
pub fn fit_two_outlooks(target: &Outlook, source: &Outlook, h: usize) -> Result<TwoOutlookFit> {
    fit_two_outlooks_with(target, source, h, &FitOptions::default())
}

/// Fit a source-to-target alignment with explicit options.
///
/// Both outlooks must contain every class `1..=c` (where `c` is the larger
/// class count of the two) with at least 2 samples, and `h` must satisfy
/// `1 <= h <= min(source_dim, target_dim)`.
pub fn fit_two_outlooks_with(
    target: &Outlook,
    source: &Outlook,
    h: usize,
    opts: &FitOptions,
) -> Result<TwoOutlookFit> {
    let num_classes = target.num_classes().max(source.num_classes());
    check_h(h, target.dim(), source.dim())?;
    for &(t_row, s_row) in &opts.correspondences {
        if t_row >= target.num_samples() || s_row >= source.num_samples() {
            return Err(Error::InvalidParameter(format!(
                "correspondence ({t_row}, {s_row}) out of range: outlooks have {} and {} rows",
                target.num_samples(),
                source.num_samples()
            )));
        }
        if target.labels[t_row] != source.labels[s_row] {
            return Err(Error::InvalidParameter(format!(
                "correspondence ({t_row}, {s_row}) pairs label {} with label {}; \
                 corresponding instances must share a class",
                target.labels[t_row], source.labels[s_row]
            )));
        }
    }
    let prepared_target = prepare_outlook(target, num_classes, h, opts.winsor_fraction)?;
    let prepared_source = prepare_outlook(source, num_classes, h, opts.winsor_fraction)?;
    let fit = fit_from_prepared(
        &prepared_target,
        &prepared_source,
        target,
        source,
        h,
        opts,
    )?;
    Ok(fit)
}

fn check_h(h: usize, target_dim: usize, source_dim: usize) -> Result<()> {
    let max_h = target_dim.min(source_dim);
    if h < 1 || h > max_h {
        return Err(Error::InvalidParameter(format!(
            "h = {h} out of range: must satisfy 1 <= h <= {max_h} \
             (the smaller outlook dimension)"
        )));
    }
    Ok(())
}

fn fit_from_prepared(
    prepared_target: &PreparedOutlook,
    prepared_source: &PreparedOutlook,
    target: &Outlook,
    source: &Outlook,
    h: usize,
    opts: &FitOptions,
) -> Result<TwoOutlookFit> {
    let num_classes = prepared_target.moments.len();
    let padded_dim = target.dim().max(source.dim());

    let per_class: Vec<(ClassMapping, ClassFitDiagnostics)> = (0..num_classes)
        .into_par_iter()
        .map(|idx| -> Result<(ClassMapping, ClassFitDiagnostics)> {
            let class = idx + 1;
            let u_target = pad_to_dimension(&prepared_target.utilizations[idx], padded_dim)?;
            let u_source = pad_to_dimension(&prepared_source.utilizations[idx], padded_dim)?;
            let target_mean = pad_vector(&prepared_target.moments[idx].mean, padded_dim)?;
            let source_mean = pad_vector(&prepared_source.moments[idx].mean, padded_dim)?;

            let mut d1 = u_target.directions.clone();
            let mut d2 = u_source.directions.clone();
            let pairs: Vec<(DVector<f64>, DVector<f64>)> = opts
                .correspondences
                .iter()
                .filter(|&&(t_row, _)| target.labels[t_row] == class)
                .map(|&(t_row, s_row)| -> Result<(DVector<f64>, DVector<f64>)> {
                    let t_vec = pad_vector(
                        &(prepared_target.scaled.row(t_row).transpose()
                            - &prepared_target.moments[idx].mean),
                        padded_dim,
                    )?;
                    let s_vec = pad_vector(
                        &(prepared_source.scaled.row(s_row).transpose()
                            - &prepared_source.moments[idx].mean),
                        padded_dim,
                    )?;
                    Ok((t_vec, s_vec))
                })
                .collect::<Result<_>>()?;
            if !pairs.is_empty() {
                (d1, d2) =
                    augment_with_correspondences(&d1, &d2, &pairs, opts.correspondence_weight)?;
            }

            let solution = match_by_rotation(&d1, &d2)?;
            let diagnostics = ClassFitDiagnostics {
                class,
                procrustes_objective: solution.objective,
                singular_values: solution.singular_values.iter().copied().collect(),
                target_rank_deficient: u_target.rank_deficient,
                target_degenerate: u_target.degenerate,
                source_rank_deficient: u_source.rank_deficient,
                source_degenerate: u_source.degenerate,
            };
            let mapping = ClassMapping {
                class,
                rotation: solution.rotation,
                source_mean,
                target_mean,
            };
            Ok((mapping, diagnostics))
        })
        .collect::<Result<_>>()?;

    let (classes, diagnostics) = per_class.into_iter().unzip();
    Ok(TwoOutlookFit {
        mapping: OutlookMapping {
            source_id: source.id.clone(),
            target_id: target.id.clone(),
            source_dim: source.dim(),
            target_dim: target.dim(),
            padded_dim,
            h,
            classes,
            source_scaler: prepared_target_scaler(prepared_source),
            target_scaler: prepared_target_scaler(prepared_target),
        },
        diagnostics,
    })
}

fn prepared_target_scaler(p: &PreparedOutlook) -> Option<ScalerParams> {
    p.scaler.clone()
}

/// Fit an alignment directly from per-class moments (no rows, no scaling).
///
/// `target_moments[i]` and `source_moments[i]` describe class `i + 1`. This
/// is the population-level entry point: supply exact distribution moments
/// and the fitted rotation is the population rotation.
pub fn fit_two_outlooks_from_moments(
    target_id: &str,
    source_id: &str,
    target_moments: &[ClassMoments],
    source_moments: &[ClassMoments],
    h: usize,
) -> Result<TwoOutlookFit> {
    if target_moments.is_empty() || target_moments.len() != source_moments.len() {
        return Err(Error::DimensionMismatch {
            context: "fit_two_outlooks_from_moments".into(),
            expected: "equal non-empty class-moment lists".into(),
            actual: format!("{} and {}", target_moments.len(), source_moments.len()),
        });
    }
    let target_dim = target_moments[0].dim();
    let source_dim = source_moments[0].dim();
    check_h(h, target_dim, source_dim)?;
    let padded_dim = target_dim.max(source_dim);
    let num_classes = target_moments.len();

    let mut classes = Vec::with_capacity(num_classes);
    let mut diagnostics = Vec::with_capacity(num_classes);
    for idx in 0..num_classes {
        let class = idx + 1;
        if target_moments[idx].dim() != target_dim || source_moments[idx].dim() != source_dim {
            return Err(Error::DimensionMismatch {
                context: format!("class {class} moments"),
                expected: format!("{target_dim}- and {source_dim}-dim"),
                actual: format!(
                    "{} and {}",
                    target_moments[idx].dim(),
                    source_moments[idx].dim()
                ),
            });
        }
        let u_target = pad_to_dimension(&utilization_matrix(&target_moments[idx], h)?, padded_dim)?;
        let u_source = pad_to_dimension(&utilization_matrix(&source_moments[idx], h)?, padded_dim)?;
        let solution = match_by_rotation(&u_target.directions, &u_source.directions)?;
        diagnostics.push(ClassFitDiagnostics {
            class,
            procrustes_objective: solution.objective,
            singular_values: solution.singular_values.iter().copied().collect(),
            target_rank_deficient: u_target.rank_deficient,
            target_degenerate: u_target.degenerate,
            source_rank_deficient: u_source.rank_deficient,
            source_degenerate: u_source.degenerate,
        });
        classes.push(ClassMapping {
            class,
            rotation: solution.rotation,
            source_mean: pad_vector(&source_moments[idx].mean, padded_dim)?,
            target_mean: pad_vector(&target_moments[idx].mean, padded_dim)?,
        });
    }
    Ok(TwoOutlookFit {
        mapping: OutlookMapping {
            source_id: source_id.into(),
            target_id: target_id.into(),
            source_dim,
            target_dim,
            padded_dim,
            h,
            classes,
            source_scaler: None,
            target_scaler: None,
        },
        diagnostics,
    })
}

impl OutlookMapping {
    /// Number of classes the mapping covers.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label == 0 || label > self.classes.len() {
            return Err(Error::UnseenLabel {
                label,
                num_classes: self.classes.len(),
            });
        }
        Ok(())
    }
}

/// Map raw source rows into the target's scaled, padded space.
///
/// Each row is scaled with the stored source scaler (if any), zero-padded
/// to the common width, centered at its class's source mean, rotated, and
/// re-centered at the target mean. The output has `padded_dim` columns; use
/// [`truncate_to_target`] to drop the target's padding columns.
pub fn apply_mapping(
    mapping: &OutlookMapping,
    source_rows: &DMatrix<f64>,
    labels: &[usize],
) -> Result<DMatrix<f64>> {
    if source_rows.ncols() != mapping.source_dim {
        return Err(Error::DimensionMismatch {
            context: format!("apply_mapping input for source '{}'", mapping.source_id),
            expected: format!("{} columns", mapping.source_dim),
            actual: format!("{}", source_rows.ncols()),
        });
    }
    if labels.len() != source_rows.nrows() {
        return Err(Error::DimensionMismatch {
            context: "apply_mapping labels".into(),
            expected: format!("{} labels", source_rows.nrows()),
            actual: format!("{}", labels.len()),
        });
    }
    for &label in labels {
        mapping.check_label(label)?;
    }
    let scaled = match &mapping.source_scaler {
        Some(params) => apply_scaler(source_rows, params)?,
        None => source_rows.clone(),
    };
    map_scaled_rows(mapping, &scaled, labels)
}

/// Map rows that are already in the source outlook's scaled native
/// coordinates (skips the scaler step of [`apply_mapping`]).
pub fn map_scaled_rows(
    mapping: &OutlookMapping,
    scaled_rows: &DMatrix<f64>,
    labels: &[usize],
) -> Result<DMatrix<f64>> {
    if scaled_rows.ncols() != mapping.source_dim {
        return Err(Error::DimensionMismatch {
            context: format!("map_scaled_rows input for source '{}'", mapping.source_id),
            expected: format!("{} columns", mapping.source_dim),
            actual: format!("{}", scaled_rows.ncols()),
        });
    }
    if labels.len() != scaled_rows.nrows() {
        return Err(Error::DimensionMismatch {
            context: "map_scaled_rows labels".into(),
            expected: format!("{} labels", scaled_rows.nrows()),
            actual: format!("{}", labels.len()),
        });
    }
    let n = scaled_rows.nrows();
    let p = mapping.padded_dim;
    let mut out = DMatrix::zeros(n, p);
    for (row, &label) in labels.iter().enumerate() {
        mapping.check_label(label)?;
        let cm = &mapping.classes[label - 1];
        let mut x = DVector::zeros(p);
        for j in 0..mapping.source_dim {
            x[j] = scaled_rows[(row, j)];
        }
        let y = &cm.rotation * (x - &cm.source_mean) + &cm.target_mean;
        for j in 0..p {
            out[(row, j)] = y[j];
        }
    }
    Ok(out)
}

/// Drop the padding columns of mapped rows, leaving the target outlook's
/// native width.
pub fn truncate_to_target(mapping: &OutlookMapping, mapped: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if mapped.ncols() != mapping.padded_dim {
        return Err(Error::DimensionMismatch {
            context: "truncate_to_target".into(),
            expected: format!("{} columns", mapping.padded_dim),
            actual: format!("{}", mapped.ncols()),
        });
    }
    Ok(mapped.columns(0, mapping.target_dim).into_owned())
}

/// Map raw source rows all the way into the target outlook's native width:
/// [`apply_mapping`] followed by [`truncate_to_target`].
pub fn map_into_target(
    mapping: &OutlookMapping,
    source_rows: &DMatrix<f64>,
    labels: &[usize],
) -> Result<DMatrix<f64>> {
    let mapped = apply_mapping(mapping, source_rows, labels)?;
    truncate_to_target(mapping, &mapped)
}

/// An alignment of `m` outlooks into one chosen final outlook.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOutlookModel {
    /// The outlook whose space everything is mapped into.
    pub final_outlook_id: String,
    /// One mapping per non-final outlook, keyed by its id; every mapping's
    /// target is the final outlook.
    pub mappings: BTreeMap<String, OutlookMapping>,
    /// Scaled class means of every outlook (final included) in its native
    /// width, one vector per class in class order.
    pub class_means: BTreeMap<String, Vec<DVector<f64>>>,
}

/// Result of a multi-outlook fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOutlookFit {
    /// The fitted model.
    pub model: MultiOutlookModel,
    /// Per-outlook fit diagnostics, keyed by source outlook id.
    pub diagnostics: BTreeMap<String, Vec<ClassFitDiagnostics>>,
    /// Total squared pairwise misfit of the rotated direction sets, summed
    /// over classes and outlook pairs (the final outlook participating with
    /// the identity rotation). Zero to rounding by construction.
    pub pairwise_objective: f64,
}

impl MultiOutlookModel {
    /// Number of classes the model covers.
    pub fn num_classes(&self) -> usize {
        self.mappings
            .values()
            .next()
            .map_or(0, |m| m.classes.len())
    }

    /// Native width of the final outlook.
    pub fn final_dim(&self) -> usize {
        self.mappings
            .values()
            .next()
            .map_or(0, |m| m.target_dim)
    }
}

/// Fit a multi-outlook alignment: every non-final outlook gets a mapping
/// into `final_id`'s space.
///
/// All outlooks must share the class set; correspondences are not supported
/// here (they are pair-specific row indices).
pub fn fit_multi_outlook(
    outlooks: &[Outlook],
    final_id: &str,
    h: usize,
    opts: &FitOptions,
) -> Result<MultiOutlookFit> {
    if outlooks.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "multi-outlook fitting needs at least 2 outlooks, got {}",
            outlooks.len()
        )));
    }
    if !opts.correspondences.is_empty() {
        return Err(Error::InvalidParameter(
            "correspondences are only supported when fitting exactly two outlooks".into(),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for o in outlooks {
        if !seen.insert(o.id.as_str()) {
            return Err(Error::InvalidParameter(format!(
                "duplicate outlook id '{}'",
                o.id
            )));
        }
    }
    let final_outlook = outlooks
        .iter()
        .find(|o| o.id == final_id)
        .ok_or_else(|| {
            Error::InvalidParameter(format!("final outlook '{final_id}' not among the inputs"))
        })?;
    let num_classes = outlooks.iter().map(|o| o.num_classes()).max().unwrap_or(0);
    for o in outlooks {
        check_h(h, final_outlook.dim(), o.dim())?;
    }

    let prepared: Vec<PreparedOutlook> = outlooks
        .iter()
        .map(|o| prepare_outlook(o, num_classes, h, opts.winsor_fraction))
        .collect::<Result<_>>()?;
    let final_idx = outlooks.iter().position(|o| o.id == final_id).expect("found above");

    let mut mappings = BTreeMap::new();
    let mut diagnostics = BTreeMap::new();
    let mut class_means = BTreeMap::new();
    for (idx, outlook) in outlooks.iter().enumerate() {
        class_means.insert(
            outlook.id.clone(),
            prepared[idx].moments.iter().map(|m| m.mean.clone()).collect(),
        );
        if idx == final_idx {
            continue;
        }
        let fit = fit_from_prepared(
            &prepared[final_idx],
            &prepared[idx],
            final_outlook,
            outlook,
            h,
            opts,
        )?;
        mappings.insert(outlook.id.clone(), fit.mapping);
        diagnostics.insert(outlook.id.clone(), fit.diagnostics);
    }

    let pairwise_objective =
        pairwise_alignment_objective(outlooks, &prepared, final_idx, &mappings)?;
    Ok(MultiOutlookFit {
        model: MultiOutlookModel {
            final_outlook_id: final_id.into(),
            mappings,
            class_means,
        },
        diagnostics,
        pairwise_objective,
    })
}

/// Total squared misfit between every pair of rotated direction sets, all
/// embedded in the widest outlook's space. The final outlook contributes
/// its directions unrotated; each other outlook contributes its fitted
/// rotation extended (identity on any extra coordinates).
fn pairwise_alignment_objective(
    outlooks: &[Outlook],
    prepared: &[PreparedOutlook],
    final_idx: usize,
    mappings: &BTreeMap<String, OutlookMapping>,
) -> Result<f64> {
    let global_dim = outlooks.iter().map(|o| o.dim()).max().unwrap_or(0);
    let num_classes = prepared[final_idx].moments.len();
    // Rotated, globally padded direction sets per outlook per class.
    let mut rotated: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(outlooks.len());
    for (idx, outlook) in outlooks.iter().enumerate() {
        let mut per_class = Vec::with_capacity(num_classes);
        for class_idx in 0..num_classes {
            let padded = pad_to_dimension(&prepared[idx].utilizations[class_idx], global_dim)?;
            if idx == final_idx {
                per_class.push(padded.directions);
            } else {
                let mapping = &mappings[&outlook.id];
                let r = extend_with_identity(
                    &mapping.classes[class_idx].rotation,
                    global_dim,
                );
                per_class.push(r * padded.directions);
            }
        }
        rotated.push(per_class);
    }
    let mut total = 0.0;
    for a in 0..outlooks.len() {
        for b in (a + 1)..outlooks.len() {
            for (ra, rb) in rotated[a].iter().zip(&rotated[b]) {
                total += (ra - rb).norm_squared();
            }
        }
    }
    Ok(total)
}

fn extend_with_identity(r: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let d = r.nrows();
    if d == dim {
        return r.clone();
    }
    let mut out = DMatrix::identity(dim, dim);
    out.view_mut((0, 0), (d, d)).copy_from(r);
    out
}

/// Re-express rows living in the final outlook's scaled native space as
/// rows of `new_final_id`'s scaled native space, by inverting that
/// outlook's stored affine map per class.
///
/// `new_final_id` equal to the model's final outlook is the identity.
pub fn switch_final_outlook(
    model: &MultiOutlookModel,
    rows_in_final: &DMatrix<f64>,
    labels: &[usize],
    new_final_id: &str,
) -> Result<DMatrix<f64>> {
    if labels.len() != rows_in_final.nrows() {
        return Err(Error::DimensionMismatch {
            context: "switch_final_outlook labels".into(),
            expected: format!("{} labels", rows_in_final.nrows()),
            actual: format!("{}", labels.len()),
        });
    }
    if rows_in_final.ncols() != model.final_dim() {
        return Err(Error::DimensionMismatch {
            context: "switch_final_outlook input".into(),
            expected: format!("{} columns (final outlook width)", model.final_dim()),
            actual: format!("{}", rows_in_final.ncols()),
        });
    }
    if new_final_id == model.final_outlook_id {
        return Ok(rows_in_final.clone());
    }
    let mapping = model.mappings.get(new_final_id).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "outlook '{new_final_id}' has no stored mapping in this model"
        ))
    })?;
    let n = rows_in_final.nrows();
    let p = mapping.padded_dim;
    let mut out = DMatrix::zeros(n, mapping.source_dim);
    for (row, &label) in labels.iter().enumerate() {
        mapping.check_label(label)?;
        let cm = &mapping.classes[label - 1];
        let mut y = DVector::zeros(p);
        for j in 0..mapping.target_dim {
            y[j] = rows_in_final[(row, j)];
        }
        // Inverse of x -> R(x - mu_src) + mu_tgt; the rotation's transpose
        // is its inverse.
        let x = cm.rotation.transpose() * (y - &cm.target_mean) + &cm.source_mean;
        for j in 0..mapping.source_dim {
            out[(row, j)] = x[j];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ClassMappingDto {
    class: usize,
    rotation: Vec<Vec<f64>>,
    source_mean: Vec<f64>,
    target_mean: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OutlookMappingDto {
    source_id: String,
    target_id: String,
    source_dim: usize,
    target_dim: usize,
    padded_dim: usize,
    h: usize,
    classes: Vec<ClassMappingDto>,
    source_scaler: Option<ScalerParams>,
    target_scaler: Option<ScalerParams>,
}

#[derive(Serialize, Deserialize)]
struct MultiOutlookModelDto {
    final_outlook_id: String,
    mappings: BTreeMap<String, OutlookMappingDto>,
    class_means: BTreeMap<String, Vec<Vec<f64>>>,
}

/// Either kind of fitted model, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
#[expect(
    clippy::large_enum_variant,
    reason = "a short-lived dispatch value; boxing would complicate every use"
)]
pub enum MappingFile {
    /// A single source-to-target mapping.
    Two(OutlookMapping),
    /// A multi-outlook model.
    Multi(MultiOutlookModel),
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            context: context.into(),
            expected: format!("rows of uniform length {ncols}"),
            actual: "ragged rows".into(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl OutlookMapping {
    fn to_dto(&self) -> OutlookMappingDto {
        OutlookMappingDto {
            source_id: self.source_id.clone(),
            target_id: self.target_id.clone(),
            source_dim: self.source_dim,
            target_dim: self.target_dim,
            padded_dim: self.padded_dim,
            h: self.h,
            classes: self
                .classes
                .iter()
                .map(|cm| ClassMappingDto {
                    class: cm.class,
                    rotation: matrix_to_rows(&cm.rotation),
                    source_mean: cm.source_mean.iter().copied().collect(),
                    target_mean: cm.target_mean.iter().copied().collect(),
                })
                .collect(),
            source_scaler: self.source_scaler.clone(),
            target_scaler: self.target_scaler.clone(),
        }
    }

    fn from_dto(dto: OutlookMappingDto) -> Result<Self> {
        let mut classes = Vec::with_capacity(dto.classes.len());
        for cm in &dto.classes {
            classes.push(ClassMapping {
                class: cm.class,
                rotation: rows_to_matrix(&cm.rotation, "mapping rotation")?,
                source_mean: DVector::from_column_slice(&cm.source_mean),
                target_mean: DVector::from_column_slice(&cm.target_mean),
            });
        }
        let mapping = OutlookMapping {
            source_id: dto.source_id,
            target_id: dto.target_id,
            source_dim: dto.source_dim,
            target_dim: dto.target_dim,
            padded_dim: dto.padded_dim,
            h: dto.h,
            classes,
            source_scaler: dto.source_scaler,
            target_scaler: dto.target_scaler,
        };
        mapping.validate()?;
        Ok(mapping)
    }

    /// Check the structural and numeric invariants a stored mapping must
    /// satisfy; called on every load.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::EmptyInput(format!(
                "mapping '{}' -> '{}' has no classes",
                self.source_id, self.target_id
            )));
        }
        if self.padded_dim != self.source_dim.max(self.target_dim) {
            return Err(Error::DimensionMismatch {
                context: "mapping padded_dim".into(),
                expected: format!("{}", self.source_dim.max(self.target_dim)),
                actual: format!("{}", self.padded_dim),
            });
        }
        if self.h < 1 || self.h > self.source_dim.min(self.target_dim) {
            return Err(Error::InvalidParameter(format!(
                "stored h = {} out of range for dims {} and {}",
                self.h, self.source_dim, self.target_dim
            )));
        }
        let p = self.padded_dim;
        for (idx, cm) in self.classes.iter().enumerate() {
            if cm.class != idx + 1 {
                return Err(Error::InvalidParameter(format!(
                    "mapping classes out of order: index {idx} holds class {}",
                    cm.class
                )));
            }
            if cm.rotation.nrows() != p
                || cm.rotation.ncols() != p
                || cm.source_mean.len() != p
                || cm.target_mean.len() != p
            {
                return Err(Error::DimensionMismatch {
                    context: format!("class {} mapping", cm.class),
                    expected: format!("{p}x{p} rotation and length-{p} means"),
                    actual: format!(
                        "{}x{} rotation, means {} and {}",
                        cm.rotation.nrows(),
                        cm.rotation.ncols(),
                        cm.source_mean.len(),
                        cm.target_mean.len()
                    ),
                });
            }
            if cm.rotation.iter().any(|v| !v.is_finite())
                || cm.source_mean.iter().any(|v| !v.is_finite())
                || cm.target_mean.iter().any(|v| !v.is_finite())
            {
                return Err(Error::InvalidParameter(format!(
                    "class {} mapping contains non-finite values",
                    cm.class
                )));
            }
            let gram_err =
                (cm.rotation.transpose() * &cm.rotation - DMatrix::identity(p, p)).norm();
            if gram_err > 1e-10 {
                return Err(Error::RotationInvariant(format!(
                    "class {} rotation deviates from orthogonality by {gram_err:.3e}",
                    cm.class
                )));
            }
        }
        if let Some(s) = &self.source_scaler {
            s.validate()?;
            if s.dim() != self.source_dim {
                return Err(Error::DimensionMismatch {
                    context: "source scaler".into(),
                    expected: format!("{} features", self.source_dim),
                    actual: format!("{}", s.dim()),
                });
            }
        }
        if let Some(s) = &self.target_scaler {
            s.validate()?;
            if s.dim() != self.target_dim {
                return Err(Error::DimensionMismatch {
                    context: "target scaler".into(),
                    expected: format!("{} features", self.target_dim),
                    actual: format!("{}", s.dim()),
                });
            }
        }
        Ok(())
    }

    /// Serialize to pretty JSON (matrices row-major).
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_dto()).expect("plain data serializes")
    }

    /// Parse and validate a mapping from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_dto(serde_json::from_str(text)?)
    }

    /// Write the mapping as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Load and validate a mapping from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_str(&text)
    }
}

impl MultiOutlookModel {
    /// Check structural invariants; called on every load.
    pub fn validate(&self) -> Result<()> {
        if self.mappings.is_empty() {
            return Err(Error::EmptyInput(format!(
                "multi-outlook model '{}' has no mappings",
                self.final_outlook_id
            )));
        }
        let num_classes = self.num_classes();
        for (id, mapping) in &self.mappings {
            if mapping.source_id != *id {
                return Err(Error::InvalidParameter(format!(
                    "model entry '{id}' holds a mapping for source '{}'",
                    mapping.source_id
                )));
            }
            if mapping.target_id != self.final_outlook_id {
                return Err(Error::InvalidParameter(format!(
                    "mapping for '{id}' targets '{}', expected final outlook '{}'",
                    mapping.target_id, self.final_outlook_id
                )));
            }
            if mapping.classes.len() != num_classes {
                return Err(Error::DimensionMismatch {
                    context: format!("mapping for '{id}'"),
                    expected: format!("{num_classes} classes"),
                    actual: format!("{}", mapping.classes.len()),
                });
            }
            mapping.validate()?;
        }
        if !self.class_means.contains_key(&self.final_outlook_id) {
            return Err(Error::InvalidParameter(format!(
                "model stores no class means for final outlook '{}'",
                self.final_outlook_id
            )));
        }
        for (id, means) in &self.class_means {
            if means.len() != num_classes {
                return Err(Error::DimensionMismatch {
                    context: format!("class means for '{id}'"),
                    expected: format!("{num_classes} vectors"),
                    actual: format!("{}", means.len()),
                });
            }
        }
        Ok(())
    }

    /// Serialize to pretty JSON.
    pub fn to_json_string(&self) -> String {
        let dto = MultiOutlookModelDto {
            final_outlook_id: self.final_outlook_id.clone(),
            mappings: self
                .mappings
                .iter()
                .map(|(id, m)| (id.clone(), m.to_dto()))
                .collect(),
            class_means: self
                .class_means
                .iter()
                .map(|(id, means)| {
                    (
                        id.clone(),
                        means.iter().map(|v| v.iter().copied().collect()).collect(),
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&dto).expect("plain data serializes")
    }

    /// Parse and validate a model from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let dto: MultiOutlookModelDto = serde_json::from_str(text)?;
        let mut mappings = BTreeMap::new();
        for (id, m) in dto.mappings {
            mappings.insert(id, OutlookMapping::from_dto(m)?);
        }
        let model = MultiOutlookModel {
            final_outlook_id: dto.final_outlook_id,
            mappings,
            class_means: dto
                .class_means
                .into_iter()
                .map(|(id, means)| {
                    (
                        id,
                        means
                            .iter()
                            .map(|v| DVector::from_column_slice(v))
                            .collect(),
                    )
                })
                .collect(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Write the model as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Load and validate a model from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_str(&text)
    }
}

/// Load either a two-outlook mapping or a multi-outlook model, detecting
/// the kind from the file's top-level structure.
pub fn load_mapping_file(path: impl AsRef<Path>) -> Result<MappingFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("final_outlook_id").is_some() {
        Ok(MappingFile::Multi(MultiOutlookModel::from_json_str(&text)?))
    } else {
        Ok(MappingFile::Two(OutlookMapping::from_json_str(&text)?))
    }
}
