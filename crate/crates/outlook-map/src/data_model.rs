//! Labeled feature matrices ("outlooks") and their CSV representation.
//!
//! An outlook is one view of a phenomenon: `n` samples as rows over its own
//! `d` features, each sample carrying a 1-based class label. Different
//! outlooks may have different dimensions and sample counts; they share only
//! the class set.
//!
//! CSV layout: header `f0,f1,...,f{d-1},label`, one sample per line, LF line
//! endings on emission. Floats are written with shortest round-trip
//! precision, so ingest -> emit -> ingest reproduces the matrix bit for bit.

use crate::error::{Error, Result};
use crate::rng::{self, derive_rng, stream};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use std::path::Path;

/// One view of the data: a sample-by-feature matrix plus 1-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Outlook {
    /// Identifier used in mappings, reports, and error messages.
    pub id: String,
    /// `n x d` feature matrix; samples are rows.
    pub features: DMatrix<f64>,
    /// Per-row class labels, `1..=c`.
    pub labels: Vec<usize>,
}

/// Row indices of a single class within an outlook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassView {
    /// 1-based class index.
    pub class: usize,
    /// Ascending row indices carrying this label.
    pub rows: Vec<usize>,
}

/// Disjoint train/test row-index sets produced by [`stratified_split`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    /// Ascending row indices of the labeled (training) portion.
    pub train_rows: Vec<usize>,
    /// Ascending row indices of the held-out portion; empty at fraction 1.0.
    pub test_rows: Vec<usize>,
}

impl Outlook {
    /// Build an outlook, validating shape, label range, and finiteness.
    pub fn new(id: impl Into<String>, features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let id = id.into();
        if features.nrows() == 0 {
            return Err(Error::EmptyInput(format!("outlook '{id}' has no data rows")));
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: format!("outlook '{id}' labels"),
                expected: format!("{} labels", features.nrows()),
                actual: format!("{}", labels.len()),
            });
        }
        if let Some(row) = labels.iter().position(|&l| l == 0) {
            return Err(Error::LabelOutOfRange {
                row: row + 2, // 1-based file coordinates with a header line
                detail: "labels are 1-based; 0 is not a valid class".into(),
            });
        }
        if let Some((i, j)) = find_non_finite(&features) {
            return Err(Error::CsvParse {
                row: i + 2,
                col: j + 1,
                detail: "non-finite feature value".into(),
            });
        }
        Ok(Outlook {
            id,
            features,
            labels,
        })
    }

    /// Number of samples (rows).
    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    /// Feature dimension (columns).
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of classes, taken as the largest label present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Restrict to a subset of rows (e.g. one side of a split), keeping `id`.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput(format!(
                "row selection for outlook '{}' is empty",
                self.id
            )));
        }
        let mut features = DMatrix::zeros(rows.len(), self.dim());
        let mut labels = Vec::with_capacity(rows.len());
        for (out_i, &r) in rows.iter().enumerate() {
            if r >= self.num_samples() {
                return Err(Error::InvalidParameter(format!(
                    "row index {r} out of bounds for outlook '{}' with {} rows",
                    self.id,
                    self.num_samples()
                )));
            }
            features.row_mut(out_i).copy_from(&self.features.row(r));
            labels.push(self.labels[r]);
        }
        Ok(Outlook {
            id: self.id.clone(),
            features,
            labels,
        })
    }

    /// Parse the documented CSV format from a string.
    ///
    /// Errors carry 1-based (row, column) file coordinates; the header is
    /// row 1. Rejects ragged rows, non-numeric or non-finite cells, and
    /// labels that are not positive integers.
    pub fn from_csv_str(id: impl Into<String>, text: &str) -> Result<Self> {
        let id = id.into();
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::CsvHeader {
                detail: "empty input".into(),
            })?
            .trim_end_matches('\r');
        let dim = parse_header(header)?;

        let mut data: Vec<f64> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        for (line_idx, raw_line) in lines.enumerate() {
            let row = line_idx + 2; // file coordinates: header is row 1
            // `str::lines` never yields a segment for a final trailing
            // newline, so any empty line seen here is a malformed row and
            // falls through to the cell-count check below.
            let line = raw_line.trim_end_matches('\r');
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != dim + 1 {
                return Err(Error::CsvParse {
                    row,
                    col: cells.len().min(dim + 1),
                    detail: format!("expected {} cells, found {}", dim + 1, cells.len()),
                });
            }
            for (j, cell) in cells[..dim].iter().enumerate() {
                let value: f64 = cell.trim().parse().map_err(|_| Error::CsvParse {
                    row,
                    col: j + 1,
                    detail: format!("cannot parse '{cell}' as a number"),
                })?;
                if !value.is_finite() {
                    return Err(Error::CsvParse {
                        row,
                        col: j + 1,
                        detail: format!("non-finite feature value '{cell}'"),
                    });
                }
                data.push(value);
            }
            let label_cell = cells[dim].trim();
            let label: usize = label_cell.parse().map_err(|_| Error::LabelOutOfRange {
                row,
                detail: format!("cannot parse '{label_cell}' as a class index"),
            })?;
            if label == 0 {
                return Err(Error::LabelOutOfRange {
                    row,
                    detail: "labels are 1-based; 0 is not a valid class".into(),
                });
            }
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(Error::EmptyInput(format!("outlook '{id}' has no data rows")));
        }
        let features = DMatrix::from_row_slice(labels.len(), dim, &data);
        Outlook::new(id, features, labels)
    }

    /// Load an outlook from a CSV file; the id is the file stem.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "outlook".to_string());
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv_str(id, &text)
    }

    /// Emit the documented CSV format with LF line endings and shortest
    /// round-trip float formatting.
    pub fn to_csv_string(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("label\n");
        for i in 0..self.num_samples() {
            for j in 0..d {
                out.push_str(&format!("{},", self.features[(i, j)]));
            }
            out.push_str(&format!("{}\n", self.labels[i]));
        }
        out
    }

    /// Write the CSV representation to a file.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn find_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

fn parse_header(header: &str) -> Result<usize> {
    let cells: Vec<&str> = header.split(',').collect();
    if cells.len() < 2 {
        return Err(Error::CsvHeader {
            detail: format!("expected 'f0,...,label', found '{header}'"),
        });
    }
    let dim = cells.len() - 1;
    for (j, cell) in cells[..dim].iter().enumerate() {
        let expected = format!("f{j}");
        if cell.trim() != expected {
            return Err(Error::CsvHeader {
                detail: format!("column {} should be '{expected}', found '{cell}'", j + 1),
            });
        }
    }
    if cells[dim].trim() != "label" {
        return Err(Error::CsvHeader {
            detail: format!("last column should be 'label', found '{}'", cells[dim]),
        });
    }
    Ok(dim)
}

/// Group row indices by class, returning one view per class `1..=c`.
///
/// Views are pairwise disjoint, each sorted ascending, and their union is
/// the full row-index set. Classes missing from the label vector yield empty
/// views.
pub fn class_partition(outlook: &Outlook) -> Vec<ClassView> {
    let c = outlook.num_classes();
    let mut views: Vec<ClassView> = (1..=c)
        .map(|class| ClassView {
            class,
            rows: Vec::new(),
        })
        .collect();
    for (row, &label) in outlook.labels.iter().enumerate() {
        views[label - 1].rows.push(row);
    }
    views
}

/// Split rows into a labeled fraction and a held-out remainder, per class.
///
/// Each class contributes `ceil(fraction * class_size)` rows to the training
/// side, chosen by a per-class deterministic shuffle derived from `seed`.
/// The result is independent of iteration order and thread scheduling, and
/// the test side is empty at fraction 1.0.
pub fn stratified_split(outlook: &Outlook, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "label fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for view in class_partition(outlook) {
        if view.rows.is_empty() {
            continue;
        }
        let take = ceil_count(fraction, view.rows.len());
        let mut shuffled = view.rows.clone();
        let mut rng = derive_rng(seed, &[stream::SPLIT, view.class as u64]);
        shuffled.shuffle(&mut rng);
        train_rows.extend_from_slice(&shuffled[..take]);
        test_rows.extend_from_slice(&shuffled[take..]);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(DatasetSplit {
        train_rows,
        test_rows,
    })
}

/// `ceil(fraction * n)` with a guard against binary-representation noise:
/// products within 1e-9 of an integer round to it instead of ceiling up
/// (0.1 * 30 is 3.0000000000000004 in binary and must count as 3).
fn ceil_count(fraction: f64, n: usize) -> usize {
    let product = fraction * n as f64;
    let rounded = product.round();
    let count = if (product - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        product.ceil() as usize
    };
    count.clamp(1, n)
}

/// Derive the per-cell split seed used by experiment harnesses, exposed so
/// external drivers can reproduce a cell exactly.
pub fn cell_seed(experiment_seed: u64, component: usize, fraction_index: usize, fold: usize) -> u64 {
    rng::derive_seed(
        experiment_seed,
        &[
            stream::EXPERIMENT,
            component as u64,
            fraction_index as u64,
            fold as u64,
        ],
    )
}
