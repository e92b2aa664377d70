//! Experiment configuration: one JSON document describing which outlooks to
//! load and how to fit, evaluate, or study them.
//!
//! A config carries coupled parameters (outlooks, roles, direction count,
//! fractions, folds, seed, classifier and scaling knobs), so it lives in a
//! single file; command-line flags override individual keys. Values are
//! validated structurally here; file existence is the caller's concern.

use serde::{Deserialize, Deserializer, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::Method;

/// What a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One target, one source: fit a mapping or sweep label budgets.
    TwoOutlook,
    /// Several outlooks mapped into one final outlook.
    MultiOutlook,
    /// Rotate the tested role across all outlooks.
    MultiSource,
    /// Sample-complexity and perturbation-bound studies.
    Study,
}

impl Mode {
    /// Canonical kebab-case name, matching the JSON encoding.
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TwoOutlook => "two-outlook",
            Mode::MultiOutlook => "multi-outlook",
            Mode::MultiSource => "multi-source",
            Mode::Study => "study",
        }
    }
}

/// A data file plus the id it is registered under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlookRef {
    /// Id used in roles and reports; defaults to the file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// CSV file with a `label,f1..fd` header.
    pub path: String,
}

impl OutlookRef {
    /// The explicit id, or the file stem when absent.
    pub fn effective_id(&self) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None => Path::new(&self.path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.path.clone()),
        }
    }
}

/// Study-specific knobs; every field has a sensible default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Mixture JSON path; a built-in well-conditioned 3-D two-class
    /// mixture is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_spec: Option<String>,
    /// Ground-truth transform JSON path; a seeded random transform is
    /// generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    /// Per-class sample sizes; default `[50, 200, 800, 3200]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    /// Repetitions per size; default 20.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds_per_size: Option<usize>,
    /// Directions matched per class in the study; default 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    /// Perturbation budgets for the robustness check; default
    /// `[0.1, 1, 10]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_values: Option<Vec<f64>>,
    /// Sampled perturbations per (instance, budget); default 100000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    /// Random instances for the robustness check; default 50.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_instances: Option<usize>,
}

fn tri_state<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Option<f64>>, D::Error> {
    // Distinguishes an absent key (field default: None) from an explicit
    // null (Some(None), disabling the scaler) and a number (Some(Some(w))).
    Ok(Some(Option::<f64>::deserialize(d)?))
}

/// Parsed experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// What this config drives.
    pub mode: Mode,
    /// Data files; roles are picked via `target_id` / `final_id`.
    #[serde(default)]
    pub outlooks: Vec<OutlookRef>,
    /// Two-outlook modes: the outlook whose space is the destination;
    /// defaults to the first outlook.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
    /// Multi-outlook mode: the outlook everything is mapped into;
    /// defaults to the first outlook.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_id: Option<String>,
    /// Directions matched per class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    /// Candidate direction counts; when `h` is absent the best candidate
    /// on a validation split is used (two-outlook evaluation only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_candidates: Option<Vec<usize>>,
    /// Labeled fractions to sweep; default `[0.05, 0.1, 0.2, 0.5, 1.0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_fractions: Option<Vec<f64>>,
    /// Repetitions per fraction; default 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    /// Experiment seed; default 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Neighbour count for the classifier; default 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn_k: Option<usize>,
    /// Winsorized scaling fraction. Omit the key for the default (0.02);
    /// set it to null to evaluate on raw features.
    #[serde(default, deserialize_with = "tri_state", skip_serializing_if = "Option::is_none")]
    pub winsor_fraction: Option<Option<f64>>,
    /// Regimes to evaluate; default `["TRG", "MOMAP", "OPT"]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    /// Worker-thread cap; default: one per logical CPU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Study knobs, used by study mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
}

impl ExperimentConfig {
    /// Parse from JSON text and validate structurally.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Load from a JSON file and validate structurally.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_str(&text)
    }

    /// Serialize to pretty JSON.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// The scaler fraction after resolving the tri-state encoding:
    /// absent key → 0.02, explicit null → no scaling.
    pub fn effective_winsor(&self) -> Option<f64> {
        match self.winsor_fraction {
            None => Some(0.02),
            Some(w) => w,
        }
    }

    /// Effective ids of all outlooks, in declaration order.
    pub fn outlook_ids(&self) -> Vec<String> {
        self.outlooks.iter().map(OutlookRef::effective_id).collect()
    }

    /// Check ranges, role references, duplicates, and per-mode shape; file
    /// existence is checked by the loader.
    pub fn validate(&self) -> Result<()> {
        let ids = self.outlook_ids();
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::Config(format!("duplicate outlook id '{id}'")));
            }
        }
        for outlook in &self.outlooks {
            if outlook.path.is_empty() {
                return Err(Error::Config("outlook with empty path".into()));
            }
            if let Some(id) = &outlook.id
                && id.is_empty() {
                    return Err(Error::Config("outlook with empty id".into()));
                }
        }
        if let Some(fractions) = &self.label_fractions {
            if fractions.is_empty() {
                return Err(Error::Config("label_fractions is empty".into()));
            }
            for &f in fractions {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!(
                        "label fractions must lie in (0, 1], got {f}"
                    )));
                }
            }
        }
        if self.folds == Some(0) {
            return Err(Error::Config("folds must be at least 1".into()));
        }
        if self.knn_k == Some(0) {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        if self.h == Some(0) {
            return Err(Error::Config("h must be at least 1".into()));
        }
        if let Some(candidates) = &self.h_candidates {
            if candidates.is_empty() {
                return Err(Error::Config("h_candidates is empty".into()));
            }
            if candidates.contains(&0) {
                return Err(Error::Config("h candidates must be at least 1".into()));
            }
        }
        if let Some(Some(w)) = self.winsor_fraction
            && !(0.0..0.5).contains(&w) {
                return Err(Error::Config(format!(
                    "winsor_fraction must lie in [0, 0.5) or be null, got {w}"
                )));
            }
        if let Some(methods) = &self.methods {
            if methods.is_empty() {
                return Err(Error::Config("methods is empty".into()));
            }
            for (i, m) in methods.iter().enumerate() {
                if methods[..i].contains(m) {
                    return Err(Error::Config(format!("duplicate method {m}")));
                }
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }

        let require_role = |role: &Option<String>, name: &str| -> Result<()> {
            if let Some(id) = role
                && !ids.contains(id) {
                    return Err(Error::Config(format!(
                        "{name} '{id}' does not name a configured outlook"
                    )));
                }
            Ok(())
        };
        match self.mode {
            Mode::TwoOutlook => {
                if self.outlooks.len() != 2 {
                    return Err(Error::Config(format!(
                        "two-outlook mode needs exactly 2 outlooks, got {}",
                        self.outlooks.len()
                    )));
                }
                require_role(&self.target_id, "target_id")?;
                if self.final_id.is_some() {
                    return Err(Error::Config(
                        "final_id applies to multi-outlook mode; use target_id".into(),
                    ));
                }
            }
            Mode::MultiOutlook => {
                if self.outlooks.len() < 2 {
                    return Err(Error::Config(format!(
                        "multi-outlook mode needs at least 2 outlooks, got {}",
                        self.outlooks.len()
                    )));
                }
                require_role(&self.final_id, "final_id")?;
                if self.target_id.is_some() {
                    return Err(Error::Config(
                        "target_id applies to two-outlook mode; use final_id".into(),
                    ));
                }
            }
            Mode::MultiSource => {
                if self.outlooks.len() < 2 {
                    return Err(Error::Config(format!(
                        "multi-source mode needs at least 2 outlooks, got {}",
                        self.outlooks.len()
                    )));
                }
                if self.target_id.is_some() || self.final_id.is_some() {
                    return Err(Error::Config(
                        "multi-source mode rotates roles; target_id/final_id do not apply"
                            .into(),
                    ));
                }
            }
            Mode::Study => {
                if !self.outlooks.is_empty() {
                    return Err(Error::Config(
                        "study mode generates its own data; outlooks do not apply".into(),
                    ));
                }
            }
        }
        if let Some(study) = &self.study {
            if self.mode != Mode::Study {
                return Err(Error::Config(format!(
                    "study settings do not apply to {} mode",
                    self.mode.as_str()
                )));
            }
            if let Some(sizes) = &study.sizes {
                if sizes.is_empty() {
                    return Err(Error::Config("study sizes is empty".into()));
                }
                for w in sizes.windows(2) {
                    if w[1] <= w[0] {
                        return Err(Error::Config(format!(
                            "study sizes must be strictly increasing, got {} after {}",
                            w[1], w[0]
                        )));
                    }
                }
            }
            if study.seeds_per_size == Some(0) {
                return Err(Error::Config("seeds_per_size must be at least 1".into()));
            }
            if study.h == Some(0) {
                return Err(Error::Config("study h must be at least 1".into()));
            }
            if let Some(rhos) = &study.rho_values {
                if rhos.is_empty() {
                    return Err(Error::Config("rho_values is empty".into()));
                }
                for &rho in rhos {
                    if !(rho > 0.0 && rho.is_finite()) {
                        return Err(Error::Config(format!(
                            "rho values must be positive and finite, got {rho}"
                        )));
                    }
                }
            }
            if study.mc_samples == Some(0) {
                return Err(Error::Config("mc_samples must be at least 1".into()));
            }
            if study.num_instances == Some(0) {
                return Err(Error::Config("num_instances must be at least 1".into()));
            }
        }
        Ok(())
    }
}
