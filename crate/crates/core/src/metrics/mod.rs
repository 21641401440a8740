//! Calibration metrics: binning, expected calibration error, exact match,
//! accuracy@k and the token-, sequence- and execution-level reports.

mod binning;
mod sequence;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binning::{
    adaptive_bins, adaptive_members, bin_members, ece, fixed_bins, fixed_members, BinMembers,
    BinningConfig, BinningStrategy, CalibrationBin, Sample,
};
pub use sequence::{
    accuracy_at_k, accuracy_at_k_report, exact_match, execution_report, record_exact_match, sequence_confidence,
    sequence_level_report, sequence_scores, token_level_report, token_samples, EvalSettings,
    SequenceScore,
};

use crate::program::{AlignError, TokenizeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no samples to bin")]
    EmptySamples,
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("invalid binning configuration: {0}")]
    InvalidConfig(String),
    #[error("total sample count is zero")]
    ZeroTotal,
    #[error("example '{example_id}' has no token records")]
    EmptyTokenRecords { example_id: String },
    #[error("example '{example_id}' has no predicted_subwords; sequence confidence needs the free-decoded stream")]
    MissingPredictedSubwords { example_id: String },
    #[error("example '{example_id}': predicted subwords do not align to predicted_program: {source}")]
    Alignment {
        example_id: String,
        #[source]
        source: AlignError,
    },
    #[error("example '{example_id}', {field}: {source}")]
    Tokenize {
        example_id: String,
        field: &'static str,
        #[source]
        source: TokenizeError,
    },
    #[error("records missing exec_correct: {}", example_ids.join(", "))]
    MissingExecLabels { example_ids: Vec<String> },
    #[error("k must be at least 1 (got {0})")]
    InvalidK(usize),
    #[error("example '{example_id}' has an empty beam")]
    EmptyBeam { example_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Token,
    Sequence,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Token => "token",
            Self::Sequence => "sequence",
        })
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token" => Ok(Self::Token),
            "sequence" => Ok(Self::Sequence),
            other => Err(format!("unknown level '{other}' (expected token or sequence)")),
        }
    }
}

/// ECE, bins and accuracy for one (model, dataset, level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub level: Level,
    pub ece: f64,
    pub overall_accuracy: f64,
    pub total_samples: usize,
    pub binning: BinningConfig,
    /// Ordered by confidence.
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationReport {
    pub fn from_samples(samples: &[Sample], level: Level, binning: &BinningConfig) -> Result<Self, MetricError> {
        let bins: Vec<CalibrationBin> = bin_members(samples, binning)?.into_iter().map(|b| b.bin).collect();
        let total = samples.len();
        Ok(Self {
            level,
            ece: ece(&bins, total)?,
            overall_accuracy: samples.iter().filter(|s| s.correct).count() as f64 / total as f64,
            total_samples: total,
            binning: *binning,
            bins,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn ece_bounded_and_counts_add_up(
            raw in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..300),
            capacity in 1usize..40,
            fixed in any::<bool>(),
        ) {
            let samples: Vec<Sample> = raw
                .iter()
                .enumerate()
                .map(|(i, &(c, ok))| Sample::new(c, ok).with_origin(format!("{i:04}"), 0))
                .collect();
            let bins = if fixed { fixed_members(&samples, capacity) } else { adaptive_members(&samples, capacity) }.unwrap();
            let total: usize = bins.iter().map(|b| b.bin.sample_count).sum();
            prop_assert_eq!(total, samples.len());
            let mut all: Vec<usize> = bins.iter().flat_map(|b| b.members.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..samples.len()).collect::<Vec<_>>());
            for pair in bins.windows(2) {
                prop_assert!(pair[0].bin.confidence_hi <= pair[1].bin.confidence_lo);
            }
            for b in &bins {
                prop_assert!(b.bin.confidence_lo <= b.bin.mean_confidence);
                prop_assert!(b.bin.mean_confidence <= b.bin.confidence_hi);
            }
            if !fixed {
                let n = bins.len();
                for b in &bins[..n - 1] {
                    prop_assert_eq!(b.bin.sample_count, capacity);
                }
            }
            let plain: Vec<CalibrationBin> = bins.into_iter().map(|b| b.bin).collect();
            let value = ece(&plain, total).unwrap();
            prop_assert!((0.0..=100.0).contains(&value));
        }

        #[test]
        fn report_is_permutation_invariant(
            raw in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..250),
            seed: u64,
        ) {
            let samples: Vec<Sample> = raw
                .iter()
                .enumerate()
                .map(|(i, &(c, ok))| Sample::new((c * 20.0).round() / 20.0, ok).with_origin(format!("{}", i % 7), i))
                .collect();
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let cfg = BinningConfig { epsilon: 0.3, ..Default::default() };
            let a = CalibrationReport::from_samples(&samples, Level::Token, &cfg).unwrap();
            let b = CalibrationReport::from_samples(&shuffled, Level::Token, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn perfectly_calibrated_bins_give_zero() {
        // Each group of 4 at confidence 0.25 / 0.75 with matching hit rates.
        let mut samples = Vec::new();
        for (i, correct) in [true, false, false, false].iter().enumerate() {
            samples.push(Sample::new(0.25, *correct).with_origin("a", i));
        }
        for (i, correct) in [true, true, true, false].iter().enumerate() {
            samples.push(Sample::new(0.75, *correct).with_origin("b", i));
        }
        let report = CalibrationReport::from_samples(&samples, Level::Token, &BinningConfig::fixed(2)).unwrap();
        assert_eq!(report.ece, 0.0);
        assert_eq!(report.bins.len(), 2);
    }

    #[test]
    fn report_serializes_with_stable_keys() {
        let report =
            CalibrationReport::from_samples(&[Sample::new(0.9, true)], Level::Sequence, &BinningConfig::default())
                .unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.starts_with(r#"{"level":"sequence","ece":"#));
        let back: CalibrationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
