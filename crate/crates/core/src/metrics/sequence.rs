use serde::{Deserialize, Serialize};

use super::{CalibrationReport, Level, MetricError, Sample};
use crate::log::{PredictionLog, PredictionRecord};
use crate::metrics::BinningConfig;
use crate::program::{
    aggregate_confidence, aggregate_subwords, align_subwords, normalize, tokenize_prediction, tokenize_program,
    Aggregation, NormalizationConfig, ProgramDialect, TokenizeError,
};

/// How programs are compared and confidences aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalSettings {
    pub dialect: ProgramDialect,
    pub normalization: NormalizationConfig,
    pub method: Aggregation,
}

/// Token-sequence equality after tokenizing and normalizing both sides.
pub fn exact_match(
    predicted: &str,
    gold: &str,
    dialect: ProgramDialect,
    normalization: &NormalizationConfig,
) -> Result<bool, TokenizeError> {
    let p = tokenize_program(predicted, dialect)?;
    let g = tokenize_program(gold, dialect)?;
    Ok(normalize(&p, normalization) == normalize(&g, normalization))
}

/// Exact match of a record's prediction against its gold program. An empty
/// prediction counts as wrong rather than as an error.
pub fn record_exact_match(record: &PredictionRecord, settings: &EvalSettings) -> Result<bool, MetricError> {
    let gold = tokenize_program(&record.gold_program, settings.dialect).map_err(|source| MetricError::Tokenize {
        example_id: record.example_id.clone(),
        field: "gold_program",
        source,
    })?;
    // An empty prediction is simply wrong.
    let Ok(pred) = tokenize_prediction(&record.predicted_program, settings.dialect) else {
        return Ok(false);
    };
    Ok(normalize(&pred, &settings.normalization) == normalize(&gold, &settings.normalization))
}

/// Whether any of the first `k` beam candidates exact-matches the gold
/// program.
pub fn accuracy_at_k(
    record: &PredictionRecord,
    k: usize,
    dialect: ProgramDialect,
    normalization: &NormalizationConfig,
) -> Result<bool, MetricError> {
    if k < 1 {
        return Err(MetricError::InvalidK(k));
    }
    if record.beam.is_empty() {
        return Err(MetricError::EmptyBeam {
            example_id: record.example_id.clone(),
        });
    }
    let gold = tokenize_program(&record.gold_program, dialect).map_err(|source| MetricError::Tokenize {
        example_id: record.example_id.clone(),
        field: "gold_program",
        source,
    })?;
    let gold = normalize(&gold, normalization);
    Ok(record.beam.iter().take(k).any(|candidate| {
        tokenize_prediction(candidate, dialect).is_ok_and(|c| normalize(&c, normalization) == gold)
    }))
}

/// Teacher-forced token samples: one per gold token record.
pub fn token_samples(records: &[PredictionRecord], method: Aggregation) -> Result<Vec<Sample>, MetricError> {
    let mut out = Vec::new();
    for record in records {
        if record.token_records.is_empty() {
            return Err(MetricError::EmptyTokenRecords {
                example_id: record.example_id.clone(),
            });
        }
        for (position, token) in record.token_records.iter().enumerate() {
            let confidence = aggregate_subwords(&token.subwords, method).map_err(|_| MetricError::EmptyTokenRecords {
                example_id: record.example_id.clone(),
            })?;
            out.push(
                Sample::new(confidence, token.is_match)
                    .with_origin(record.example_id.clone(), position)
                    .with_key(token.gold_token.clone()),
            );
        }
    }
    Ok(out)
}

pub fn token_level_report(
    records: &[PredictionRecord],
    method: Aggregation,
    binning: &BinningConfig,
) -> Result<CalibrationReport, MetricError> {
    CalibrationReport::from_samples(&token_samples(records, method)?, Level::Token, binning)
}

/// Confidence of the free-decoded program: its subword stream is aligned to
/// the predicted program's tokens, each token's subwords are aggregated,
/// then the token confidences are aggregated, both with `method`.
pub fn sequence_confidence(
    record: &PredictionRecord,
    dialect: ProgramDialect,
    markers: &[String],
    method: Aggregation,
) -> Result<f64, MetricError> {
    let stream = record
        .predicted_subwords
        .as_deref()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| MetricError::MissingPredictedSubwords {
            example_id: record.example_id.clone(),
        })?;
    let tokens = tokenize_prediction(&record.predicted_program, dialect).map_err(|source| MetricError::Tokenize {
        example_id: record.example_id.clone(),
        field: "predicted_program",
        source,
    })?;
    let aligned = align_subwords(&tokens, stream, markers).map_err(|source| MetricError::Alignment {
        example_id: record.example_id.clone(),
        source,
    })?;
    let token_confidences = aligned
        .iter()
        .map(|a| aggregate_subwords(a.subwords, method))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|_| MetricError::MissingPredictedSubwords {
            example_id: record.example_id.clone(),
        })?;
    Ok(aggregate_confidence(&token_confidences, method).expect("at least one token"))
}

/// Per-example sequence confidence and correctness labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceScore {
    pub example_id: String,
    pub confidence: f64,
    pub exact_match: bool,
    pub exec_correct: Option<bool>,
}

impl SequenceScore {
    fn sample(&self, correct: bool) -> Sample {
        Sample::new(self.confidence, correct).with_origin(self.example_id.clone(), 0)
    }
}

pub fn sequence_scores(log: &PredictionLog, settings: &EvalSettings) -> Result<Vec<SequenceScore>, MetricError> {
    log.records
        .iter()
        .map(|record| {
            Ok(SequenceScore {
                example_id: record.example_id.clone(),
                confidence: sequence_confidence(record, settings.dialect, log.marker_prefixes(), settings.method)?,
                exact_match: record_exact_match(record, settings)?,
                exec_correct: record.exec_correct,
            })
        })
        .collect()
}

/// Sequence-level report with exact match as correctness.
pub fn sequence_level_report(
    log: &PredictionLog,
    settings: &EvalSettings,
    binning: &BinningConfig,
) -> Result<CalibrationReport, MetricError> {
    let samples: Vec<Sample> = sequence_scores(log, settings)?
        .iter()
        .map(|s| s.sample(s.exact_match))
        .collect();
    CalibrationReport::from_samples(&samples, Level::Sequence, binning)
}

/// Sequence-level report with recorded execution correctness.
pub fn execution_report(
    log: &PredictionLog,
    settings: &EvalSettings,
    binning: &BinningConfig,
) -> Result<CalibrationReport, MetricError> {
    let missing: Vec<String> = log
        .records
        .iter()
        .filter(|r| r.exec_correct.is_none())
        .map(|r| r.example_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::MissingExecLabels { example_ids: missing });
    }
    let samples: Vec<Sample> = sequence_scores(log, settings)?
        .iter()
        .map(|s| s.sample(s.exec_correct.expect("checked above")))
        .collect();
    CalibrationReport::from_samples(&samples, Level::Sequence, binning)
}

/// Sequence-level report with accuracy@k as correctness.
pub fn accuracy_at_k_report(
    log: &PredictionLog,
    k: usize,
    settings: &EvalSettings,
    binning: &BinningConfig,
) -> Result<CalibrationReport, MetricError> {
    let scores = sequence_scores(log, settings)?;
    let samples = scores
        .iter()
        .zip(&log.records)
        .map(|(score, record)| {
            let hit = accuracy_at_k(record, k, settings.dialect, &settings.normalization)?;
            Ok(score.sample(hit))
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    CalibrationReport::from_samples(&samples, Level::Sequence, binning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::{SubwordRecord, TokenRecord};

    fn sw(text: &str, confidence: f64) -> SubwordRecord {
        SubwordRecord { text: text.into(), confidence }
    }

    fn record(id: &str, gold: &str, pred: &str, stream: Vec<SubwordRecord>) -> PredictionRecord {
        PredictionRecord {
            schema_version: 1,
            example_id: id.into(),
            model_id: "m".into(),
            dataset_id: "d".into(),
            input_context: vec!["u".into()],
            gold_program: gold.into(),
            predicted_program: pred.into(),
            token_records: vec![TokenRecord {
                gold_token: gold.into(),
                predicted_token: pred.into(),
                subwords: vec![sw(gold, 0.5)],
                is_match: gold == pred,
            }],
            predicted_subwords: Some(stream),
            beam: vec![pred.into()],
            exec_correct: None,
            difficulty: None,
            input_perplexity: None,
        }
    }

    fn sql() -> EvalSettings {
        EvalSettings {
            dialect: ProgramDialect::Sql,
            ..Default::default()
        }
    }

    #[test]
    fn exact_match_cases() {
        let strict = NormalizationConfig::default();
        let sql = ProgramDialect::Sql;
        assert!(exact_match("SELECT a FROM t", "SELECT  a FROM t", sql, &strict).unwrap());
        assert!(!exact_match("x > 0 AND x < 5", "x < 5 AND x > 0", sql, &strict).unwrap());
        let pred = "WHERE name = 'Janessa'";
        let gold = "WHERE name = \"Janessa\"";
        assert!(!exact_match(pred, gold, sql, &strict).unwrap());
        let lenient = NormalizationConfig { unify_quotes: true, ..Default::default() };
        assert!(exact_match(pred, gold, sql, &lenient).unwrap());
        assert!(exact_match("x = 'oops", "x", sql, &strict).is_err());
    }

    #[test]
    fn accuracy_at_k_cases() {
        let mut r = record("1", "SELECT a", "SELECT b", vec![]);
        let strict = NormalizationConfig::default();
        r.beam = vec!["SELECT b".into(), "SELECT a".into(), "SELECT c".into()];
        assert!(!accuracy_at_k(&r, 1, ProgramDialect::Sql, &strict).unwrap());
        assert!(accuracy_at_k(&r, 2, ProgramDialect::Sql, &strict).unwrap());
        r.beam = vec!["SELECT a".into()];
        r.predicted_program = "SELECT a".into();
        assert!(accuracy_at_k(&r, 1, ProgramDialect::Sql, &strict).unwrap());
        r.beam = vec!["SELECT x".into(), "SELECT y".into()];
        for k in 1..=2 {
            assert!(!accuracy_at_k(&r, k, ProgramDialect::Sql, &strict).unwrap());
        }
        assert_eq!(accuracy_at_k(&r, 0, ProgramDialect::Sql, &strict), Err(MetricError::InvalidK(0)));
        r.beam.clear();
        assert!(matches!(
            accuracy_at_k(&r, 1, ProgramDialect::Sql, &strict),
            Err(MetricError::EmptyBeam { .. })
        ));
    }

    #[test]
    fn sequence_confidence_min_and_mean() {
        let r = record(
            "1",
            "SELECT a FROM t",
            "SELECT a FROM t",
            vec![sw("SEL", 0.99), sw("ECT", 0.99), sw(" a", 0.95), sw(" FROM", 0.7), sw(" t", 0.99)],
        );
        let min = sequence_confidence(&r, ProgramDialect::Sql, &[], Aggregation::Min).unwrap();
        assert_eq!(min, 0.7);
        let mean = sequence_confidence(&r, ProgramDialect::Sql, &[], Aggregation::Mean).unwrap();
        // tokens: 0.99, 0.95, 0.7, 0.99
        assert!((mean - (0.99 + 0.95 + 0.7 + 0.99) / 4.0).abs() < 1e-12);
        assert!(min <= mean);
    }

    #[test]
    fn sequence_confidence_needs_predicted_stream() {
        let mut r = record("1", "SELECT a", "SELECT a", vec![]);
        assert!(matches!(
            sequence_confidence(&r, ProgramDialect::Sql, &[], Aggregation::Min),
            Err(MetricError::MissingPredictedSubwords { .. })
        ));
        r.predicted_subwords = Some(vec![sw("SELECT", 0.9), sw("b", 0.9)]);
        assert!(matches!(
            sequence_confidence(&r, ProgramDialect::Sql, &[], Aggregation::Min),
            Err(MetricError::Alignment { .. })
        ));
    }

    #[test]
    fn token_report_errors_on_empty_records() {
        let mut r = record("1", "a", "a", vec![]);
        r.token_records.clear();
        assert!(matches!(
            token_level_report(&[r], Aggregation::Min, &BinningConfig::default()),
            Err(MetricError::EmptyTokenRecords { .. })
        ));
    }

    #[test]
    fn two_singleton_tokens() {
        // {0.2 wrong, 0.8 right}: fixed bins separate them, each off by 0.2 -> ECE 20.
        // Adaptive (n = 97) pools them: mean conf 0.5, acc 0.5 -> ECE 0.
        let mut a = record("a", "x", "y", vec![]);
        a.token_records[0].subwords[0].confidence = 0.2;
        let mut b = record("b", "x", "x", vec![]);
        b.token_records[0].subwords[0].confidence = 0.8;
        let recs = [a, b];
        let fixed = token_level_report(&recs, Aggregation::Min, &BinningConfig::fixed(10)).unwrap();
        assert!((fixed.ece - 20.0).abs() < 1e-9);
        let adaptive = token_level_report(&recs, Aggregation::Min, &BinningConfig::default()).unwrap();
        assert!(adaptive.ece.abs() < 1e-9);
        assert_eq!(adaptive.overall_accuracy, 0.5);
    }

    fn log_of(records: Vec<PredictionRecord>) -> PredictionLog {
        PredictionLog { header: None, records }
    }

    #[test]
    fn execution_report_matches_sequence_when_labels_agree() {
        let mut recs = Vec::new();
        for i in 0..20 {
            let pred = if i % 3 == 0 { "SELECT b" } else { "SELECT a" };
            let mut r = record(&format!("{i:02}"), "SELECT a", pred, vec![sw("SELECT", 0.9), sw(&pred[7..], 0.5 + i as f64 / 50.0)]);
            r.exec_correct = Some(pred == "SELECT a");
            recs.push(r);
        }
        let log = log_of(recs);
        let cfg = BinningConfig { epsilon: 0.25, ..Default::default() };
        let seq = sequence_level_report(&log, &sql(), &cfg).unwrap();
        let exec = execution_report(&log, &sql(), &cfg).unwrap();
        assert_eq!(seq, exec);

        let mut lenient = log.clone();
        lenient.records[0].exec_correct = Some(true);
        let exec = execution_report(&lenient, &sql(), &cfg).unwrap();
        assert!(exec.overall_accuracy >= seq.overall_accuracy);

        let mut missing = log;
        missing.records[4].exec_correct = None;
        missing.records[7].exec_correct = None;
        match execution_report(&missing, &sql(), &cfg) {
            Err(MetricError::MissingExecLabels { example_ids }) => assert_eq!(example_ids, ["04", "07"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_prediction_still_scored() {
        let r = record("1", "SELECT a", "SELECT 'a", vec![sw("SELECT", 0.9), sw(" 'a", 0.4)]);
        assert!(!record_exact_match(&r, &sql()).unwrap());
        let conf = sequence_confidence(&r, ProgramDialect::Sql, &[], Aggregation::Min).unwrap();
        assert_eq!(conf, 0.4);
    }
}
