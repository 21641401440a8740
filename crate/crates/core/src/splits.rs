//! Confidence-based EASY/HARD challenge splits.
//!
//! Each model in an ensemble scores every example with its min-aggregated
//! sequence confidence. A threshold is taken at a percentile of all scores
//! pooled across models; an example is HARD when any model scores it
//! strictly below the threshold, and EASY otherwise.
//!
//! Manifests store example ids only.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::PredictionLog;
use crate::metrics::{sequence_scores, EvalSettings, MetricError};
use crate::program::{Aggregation, NormalizationConfig, ProgramDialect};

pub const DEFAULT_PERCENTILE: f64 = 25.0;
pub const PERCENTILE_METHOD: &str = "linear";

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("no confidences to pool")]
    EmptyPool,
    #[error("percentile {0} outside (0, 100)")]
    PercentileOutOfRange(f64),
    #[error("no models given")]
    NoModels,
    #[error("model '{model_id}' is not aligned with '{reference}': {detail}")]
    Unaligned {
        model_id: String,
        reference: String,
        detail: String,
    },
    #[error("manifest and log '{model_id}' disagree on example ids: {detail}")]
    IdMismatch { model_id: String, detail: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One model's min-aggregated sequence confidence per example.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfidences {
    pub model_id: String,
    pub dataset_id: String,
    pub confidences: BTreeMap<String, f64>,
}

impl ModelConfidences {
    pub fn from_log(log: &PredictionLog, dialect: ProgramDialect) -> Result<Self, SplitError> {
        let settings = EvalSettings {
            dialect,
            normalization: NormalizationConfig::default(),
            method: Aggregation::Min,
        };
        let confidences = sequence_scores(log, &settings)?
            .into_iter()
            .map(|s| (s.example_id, s.confidence))
            .collect();
        Ok(Self {
            model_id: log.model_id().to_string(),
            dataset_id: log.dataset_id().to_string(),
            confidences,
        })
    }
}

fn check_aligned(models: &[ModelConfidences]) -> Result<(), SplitError> {
    let first = models.first().ok_or(SplitError::NoModels)?;
    for other in &models[1..] {
        let unaligned = |detail: String| SplitError::Unaligned {
            model_id: other.model_id.clone(),
            reference: first.model_id.clone(),
            detail,
        };
        if other.dataset_id != first.dataset_id {
            return Err(unaligned(format!("dataset '{}' vs '{}'", other.dataset_id, first.dataset_id)));
        }
        if !other.confidences.keys().eq(first.confidences.keys()) {
            let a: BTreeSet<_> = first.confidences.keys().collect();
            let b: BTreeSet<_> = other.confidences.keys().collect();
            return Err(unaligned(format!(
                "{} ids only in reference, {} only in this model",
                a.difference(&b).count(),
                b.difference(&a).count()
            )));
        }
    }
    Ok(())
}

/// Percentile by linear interpolation between order statistics: position
/// `(n - 1) * p / 100` in the sorted values.
pub fn percentile_linear(values: &[f64], percentile: f64) -> Result<f64, SplitError> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(SplitError::PercentileOutOfRange(percentile));
    }
    if values.is_empty() {
        return Err(SplitError::EmptyPool);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * percentile / 100.0;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// The percentile of every model's confidences pooled together.
pub fn pooled_threshold(models: &[ModelConfidences], percentile: f64) -> Result<f64, SplitError> {
    check_aligned(models)?;
    let pool: Vec<f64> = models.iter().flat_map(|m| m.confidences.values().copied()).collect();
    percentile_linear(&pool, percentile)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset_id: String,
    pub threshold: f64,
    /// Set when the threshold came from a pooled percentile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
    pub percentile_method: String,
    pub model_ids: Vec<String>,
    pub hard_ids: BTreeSet<String>,
    pub easy_ids: BTreeSet<String>,
    pub per_model_hard: BTreeMap<String, BTreeSet<String>>,
}

impl SplitManifest {
    pub fn total(&self) -> usize {
        self.hard_ids.len() + self.easy_ids.len()
    }

    /// Structural invariants: disjoint, HARD is the union of per-model sets,
    /// per-model keys match `model_ids`.
    pub fn validate(&self) -> Result<(), SplitError> {
        let bad = |msg: String| Err(SplitError::InvalidManifest(msg));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if let Some(id) = self.hard_ids.intersection(&self.easy_ids).next() {
            return bad(format!("example '{id}' is both EASY and HARD"));
        }
        let keys: BTreeSet<&String> = self.per_model_hard.keys().collect();
        let listed: BTreeSet<&String> = self.model_ids.iter().collect();
        if keys != listed || listed.len() != self.model_ids.len() {
            return bad("per_model_hard keys do not match model_ids".into());
        }
        let union: BTreeSet<String> = self.per_model_hard.values().flatten().cloned().collect();
        if union != self.hard_ids {
            return bad("hard_ids is not the union of per_model_hard".into());
        }
        Ok(())
    }
}

/// Builds the split at a fixed threshold. Comparison is strict: an example
/// scored exactly at the threshold stays EASY.
pub fn extract_splits(models: &[ModelConfidences], threshold: f64) -> Result<SplitManifest, SplitError> {
    check_aligned(models)?;
    let per_model_hard: BTreeMap<String, BTreeSet<String>> = models
        .iter()
        .map(|m| {
            let below = m
                .confidences
                .iter()
                .filter(|(_, &c)| c < threshold)
                .map(|(id, _)| id.clone())
                .collect();
            (m.model_id.clone(), below)
        })
        .collect();
    if per_model_hard.len() != models.len() {
        return Err(SplitError::InvalidManifest("duplicate model_id in ensemble".into()));
    }
    let hard_ids: BTreeSet<String> = per_model_hard.values().flatten().cloned().collect();
    let easy_ids = models[0]
        .confidences
        .keys()
        .filter(|id| !hard_ids.contains(*id))
        .cloned()
        .collect();
    Ok(SplitManifest {
        dataset_id: models[0].dataset_id.clone(),
        threshold,
        percentile: None,
        percentile_method: PERCENTILE_METHOD.to_string(),
        model_ids: models.iter().map(|m| m.model_id.clone()).collect(),
        hard_ids,
        easy_ids,
        per_model_hard,
    })
}

/// Pooled-percentile threshold followed by [`extract_splits`].
pub fn build_splits(models: &[ModelConfidences], percentile: f64) -> Result<SplitManifest, SplitError> {
    let threshold = pooled_threshold(models, percentile)?;
    let mut manifest = extract_splits(models, threshold)?;
    manifest.percentile = Some(percentile);
    Ok(manifest)
}

/// Exact-match accuracy of one model on each subset, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitRow {
    pub model_id: String,
    /// `None` when the subset is empty.
    pub easy_accuracy: Option<f64>,
    pub hard_accuracy: Option<f64>,
    pub easy_count: usize,
    pub hard_count: usize,
    /// Share of all examples this model put below the threshold; `None` for
    /// models outside the ensemble.
    pub hard_percentage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub dataset_id: String,
    pub threshold: f64,
    pub union_hard_percentage: f64,
    pub rows: Vec<SplitRow>,
}

pub fn split_report(
    manifest: &SplitManifest,
    logs: &[PredictionLog],
    dialect: ProgramDialect,
    normalization: &NormalizationConfig,
) -> Result<SplitReport, SplitError> {
    manifest.validate()?;
    let total = manifest.total();
    let settings = EvalSettings {
        dialect,
        normalization: *normalization,
        method: Aggregation::Min,
    };
    let mut rows = Vec::with_capacity(logs.len());
    for log in logs {
        let ids = log.example_ids();
        let covered = ids.len() == total
            && ids
                .iter()
                .all(|id| manifest.hard_ids.contains(*id) || manifest.easy_ids.contains(*id));
        if !covered || log.dataset_id() != manifest.dataset_id {
            return Err(SplitError::IdMismatch {
                model_id: log.model_id().to_string(),
                detail: format!(
                    "log has {} examples of '{}', manifest has {} of '{}'",
                    ids.len(),
                    log.dataset_id(),
                    total,
                    manifest.dataset_id
                ),
            });
        }
        let mut hits = [0usize; 2];
        let mut counts = [0usize; 2];
        for record in &log.records {
            let hard = manifest.hard_ids.contains(&record.example_id) as usize;
            counts[hard] += 1;
            let correct = crate::metrics::record_exact_match(record, &settings)?;
            hits[hard] += correct as usize;
        }
        let pct = |h: usize, n: usize| (n > 0).then(|| 100.0 * h as f64 / n as f64);
        rows.push(SplitRow {
            model_id: log.model_id().to_string(),
            easy_accuracy: pct(hits[0], counts[0]),
            hard_accuracy: pct(hits[1], counts[1]),
            easy_count: counts[0],
            hard_count: counts[1],
            hard_percentage: manifest
                .per_model_hard
                .get(log.model_id())
                .map(|set| 100.0 * set.len() as f64 / total as f64),
        });
    }
    Ok(SplitReport {
        dataset_id: manifest.dataset_id.clone(),
        threshold: manifest.threshold,
        union_hard_percentage: if total == 0 {
            0.0
        } else {
            100.0 * manifest.hard_ids.len() as f64 / total as f64
        },
        rows,
    })
}

pub fn write_manifest(manifest: &SplitManifest, path: impl AsRef<Path>) -> Result<(), SplitError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| SplitError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<SplitManifest, SplitError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SplitError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: SplitManifest =
        serde_json::from_str(&text).map_err(|e| SplitError::InvalidManifest(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}
