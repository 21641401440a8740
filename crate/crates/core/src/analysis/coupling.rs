//! Input perplexity against binned confidence and accuracy.

use serde::{Deserialize, Serialize};

use super::{AnalysisError, NGramModel};
use crate::log::PredictionLog;
use crate::metrics::{bin_members, record_exact_match, sequence_confidence, BinningConfig, EvalSettings, Sample};
use crate::program::{Aggregation, NormalizationConfig, ProgramDialect};

#[derive(Debug, Clone, Copy)]
pub enum PerplexitySource<'a> {
    /// The records' `input_perplexity` field.
    Stored,
    /// Score each record's joined input with this model.
    Model(&'a NGramModel),
}

/// One example: input perplexity, min-aggregated sequence confidence and
/// exact-match correctness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingPoint {
    pub example_id: String,
    pub perplexity: f64,
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingOptions {
    pub binning: BinningConfig,
    /// Drop examples whose perplexity exceeds this value.
    pub perplexity_cap: Option<f64>,
    /// Fit slopes over individual examples instead of bin means.
    pub per_example: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingBin {
    pub mean_perplexity: f64,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    /// Ordered by confidence.
    pub bins: Vec<CouplingBin>,
    pub slope_confidence: f64,
    pub slope_accuracy: f64,
    pub coupling_gap: f64,
    pub per_example: bool,
    /// Examples removed by the perplexity cap.
    pub excluded: usize,
}

/// Weighted least-squares slope of `y` on `x`.
pub fn weighted_slope(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64, AnalysisError> {
    assert!(x.len() == y.len() && x.len() == w.len());
    if x.len() < 2 {
        return Err(AnalysisError::TooFewBins(x.len()));
    }
    let total: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        sxy += wi * (xi - mx) * (yi - my);
        sxx += wi * (xi - mx) * (xi - mx);
    }
    if sxx <= f64::EPSILON * total * mx.abs().max(1.0).powi(2) {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok(sxy / sxx)
}

impl CouplingReport {
    /// Slopes over bin means weighted by sample count.
    pub fn from_bins(bins: Vec<CouplingBin>) -> Result<Self, AnalysisError> {
        let x: Vec<f64> = bins.iter().map(|b| b.mean_perplexity).collect();
        let w: Vec<f64> = bins.iter().map(|b| b.sample_count as f64).collect();
        let conf: Vec<f64> = bins.iter().map(|b| b.mean_confidence).collect();
        let acc: Vec<f64> = bins.iter().map(|b| b.mean_accuracy).collect();
        let slope_confidence = weighted_slope(&x, &conf, &w)?;
        let slope_accuracy = weighted_slope(&x, &acc, &w)?;
        Ok(Self {
            bins,
            slope_confidence,
            slope_accuracy,
            coupling_gap: (slope_confidence - slope_accuracy).abs(),
            per_example: false,
            excluded: 0,
        })
    }
}

pub fn coupling_points(
    log: &PredictionLog,
    dialect: ProgramDialect,
    normalization: &NormalizationConfig,
    source: PerplexitySource<'_>,
) -> Result<Vec<CouplingPoint>, AnalysisError> {
    if let PerplexitySource::Stored = source {
        let missing: Vec<String> = log
            .records
            .iter()
            .filter(|r| r.input_perplexity.is_none())
            .map(|r| r.example_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(AnalysisError::MissingPerplexity { example_ids: missing });
        }
    }
    let settings = EvalSettings {
        dialect,
        normalization: *normalization,
        method: Aggregation::Min,
    };
    log.records
        .iter()
        .map(|record| {
            let perplexity = match source {
                PerplexitySource::Stored => record.input_perplexity.expect("checked above"),
                PerplexitySource::Model(lm) => lm.perplexity(&record.input_text()).map_err(|_| {
                    AnalysisError::EmptyInput {
                        example_id: record.example_id.clone(),
                    }
                })?,
            };
            Ok(CouplingPoint {
                example_id: record.example_id.clone(),
                perplexity,
                confidence: sequence_confidence(record, dialect, log.marker_prefixes(), Aggregation::Min)?,
                correct: record_exact_match(record, &settings)?,
            })
        })
        .collect()
}

pub fn coupling_from_points(points: &[CouplingPoint], options: &CouplingOptions) -> Result<CouplingReport, AnalysisError> {
    if let Some(cap) = options.perplexity_cap {
        if cap.is_nan() || cap < 1.0 {
            return Err(AnalysisError::InvalidCap(cap));
        }
    }
    let kept: Vec<&CouplingPoint> = points
        .iter()
        .filter(|p| options.perplexity_cap.is_none_or(|cap| p.perplexity <= cap))
        .collect();
    let excluded = points.len() - kept.len();
    let samples: Vec<Sample> = kept
        .iter()
        .map(|p| Sample::new(p.confidence, p.correct).with_origin(p.example_id.clone(), 0))
        .collect();
    let bins: Vec<CouplingBin> = bin_members(&samples, &options.binning)?
        .into_iter()
        .map(|b| CouplingBin {
            mean_perplexity: b.members.iter().map(|&i| kept[i].perplexity).sum::<f64>() / b.members.len() as f64,
            mean_confidence: b.bin.mean_confidence,
            mean_accuracy: b.bin.mean_accuracy,
            sample_count: b.bin.sample_count,
        })
        .collect();
    let mut report = if options.per_example {
        if bins.len() < 2 {
            return Err(AnalysisError::TooFewBins(bins.len()));
        }
        let mut sorted = kept.clone();
        sorted.sort_by(|a, b| a.example_id.cmp(&b.example_id));
        let x: Vec<f64> = sorted.iter().map(|p| p.perplexity).collect();
        let conf: Vec<f64> = sorted.iter().map(|p| p.confidence).collect();
        let acc: Vec<f64> = sorted.iter().map(|p| if p.correct { 1.0 } else { 0.0 }).collect();
        let w = vec![1.0; x.len()];
        let slope_confidence = weighted_slope(&x, &conf, &w)?;
        let slope_accuracy = weighted_slope(&x, &acc, &w)?;
        CouplingReport {
            bins,
            slope_confidence,
            slope_accuracy,
            coupling_gap: (slope_confidence - slope_accuracy).abs(),
            per_example: true,
            excluded: 0,
        }
    } else {
        CouplingReport::from_bins(bins)?
    };
    report.excluded = excluded;
    Ok(report)
}

/// Bins the log's examples by min-aggregated sequence confidence and fits
/// confidence and accuracy against mean input perplexity per bin.
pub fn coupling_analysis(
    log: &PredictionLog,
    dialect: ProgramDialect,
    normalization: &NormalizationConfig,
    source: PerplexitySource<'_>,
    options: &CouplingOptions,
) -> Result<CouplingReport, AnalysisError> {
    coupling_from_points(&coupling_points(log, dialect, normalization, source)?, options)
}
