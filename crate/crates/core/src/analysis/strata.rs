//! Sequence-level ECE computed separately per difficulty label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::log::PredictionLog;
use crate::metrics::{
    sequence_scores, BinningConfig, BinningStrategy, CalibrationReport, EvalSettings, Level, Sample,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub ece: f64,
    pub accuracy: f64,
    pub count: usize,
    /// Adaptive binning with fewer samples than one bin holds: the whole
    /// stratum was scored as a single bin.
    pub single_bin_fallback: bool,
    pub report: CalibrationReport,
}

/// One independent sequence-level (exact match) report per `difficulty`
/// label, keyed by label.
pub fn stratified_ece(
    log: &PredictionLog,
    settings: &EvalSettings,
    binning: &BinningConfig,
) -> Result<BTreeMap<String, StratumReport>, AnalysisError> {
    binning.validate()?;
    let missing: Vec<String> = log
        .records
        .iter()
        .filter(|r| r.difficulty.is_none())
        .map(|r| r.example_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AnalysisError::MissingLabels { example_ids: missing });
    }
    let scores = sequence_scores(log, settings)?;
    let mut groups: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for (score, record) in scores.iter().zip(&log.records) {
        groups
            .entry(record.difficulty.clone().expect("checked above"))
            .or_default()
            .push(Sample::new(score.confidence, score.exact_match).with_origin(score.example_id.clone(), 0));
    }
    let capacity = binning.adaptive_capacity();
    groups
        .into_iter()
        .map(|(label, samples)| {
            let report = CalibrationReport::from_samples(&samples, Level::Sequence, binning)?;
            let stratum = StratumReport {
                ece: report.ece,
                accuracy: report.overall_accuracy,
                count: samples.len(),
                single_bin_fallback: binning.strategy == BinningStrategy::Adaptive && samples.len() < capacity,
                report,
            };
            Ok((label, stratum))
        })
        .collect()
}
