//! Synthetic prediction logs for tests, demos and fixtures.
//!
//! Programs are flat lisp-like symbol sequences `f0 f1 ... fN`; a wrong
//! prediction replaces the last symbol. Each program token is one subword, so
//! the per-token confidences given here are exactly what the metrics see.
//! Randomized generators take their seed from `CALIBKIT_SEED` when set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::log::{PredictionLog, PredictionRecord, SubwordRecord, TokenRecord, SCHEMA_VERSION};

pub const SEED_ENV: &str = "CALIBKIT_SEED";

/// `CALIBKIT_SEED` if it parses as an integer, else `default`.
pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(default)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Blueprint for one synthetic example.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExample {
    pub example_id: String,
    /// One confidence per program token, used for both the teacher-forced
    /// and the free-decoded side.
    pub token_confidences: Vec<f64>,
    pub correct: bool,
    pub exec_correct: Option<bool>,
    pub difficulty: Option<String>,
    pub input_perplexity: Option<f64>,
    pub input: String,
}

impl SyntheticExample {
    pub fn new(example_id: impl Into<String>, token_confidences: Vec<f64>, correct: bool) -> Self {
        Self {
            example_id: example_id.into(),
            token_confidences,
            correct,
            exec_correct: None,
            difficulty: None,
            input_perplexity: None,
            input: "synthetic input".into(),
        }
    }

    /// A one-token example whose sequence confidence is `confidence`.
    pub fn single(example_id: impl Into<String>, confidence: f64, correct: bool) -> Self {
        Self::new(example_id, vec![confidence], correct)
    }

    pub fn to_record(&self, model_id: &str, dataset_id: &str) -> PredictionRecord {
        let n = self.token_confidences.len();
        assert!(n > 0, "synthetic example needs at least one token");
        let gold: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
        let mut predicted = gold.clone();
        if !self.correct {
            predicted[n - 1] = format!("g{}", n - 1);
        }
        let token_records = gold
            .iter()
            .zip(&predicted)
            .zip(&self.token_confidences)
            .map(|((g, p), &c)| TokenRecord {
                gold_token: g.clone(),
                predicted_token: p.clone(),
                subwords: vec![SubwordRecord {
                    text: p.clone(),
                    confidence: c,
                }],
                is_match: g == p,
            })
            .collect();
        let predicted_subwords = predicted
            .iter()
            .zip(&self.token_confidences)
            .map(|(p, &c)| SubwordRecord {
                text: p.clone(),
                confidence: c,
            })
            .collect();
        let predicted_program = predicted.join(" ");
        PredictionRecord {
            schema_version: SCHEMA_VERSION,
            example_id: self.example_id.clone(),
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            input_context: vec![self.input.clone()],
            gold_program: gold.join(" "),
            predicted_program: predicted_program.clone(),
            token_records,
            predicted_subwords: Some(predicted_subwords),
            beam: vec![predicted_program],
            exec_correct: self.exec_correct,
            difficulty: self.difficulty.clone(),
            input_perplexity: self.input_perplexity,
        }
    }
}

pub fn build_log(model_id: &str, dataset_id: &str, examples: &[SyntheticExample]) -> PredictionLog {
    PredictionLog {
        header: None,
        records: examples.iter().map(|e| e.to_record(model_id, dataset_id)).collect(),
    }
}

/// `count` single-token examples with confidence uniform in `[lo, hi]` and
/// correctness drawn as Bernoulli(confidence - overconfidence).
pub fn bernoulli_examples(
    rng: &mut impl Rng,
    count: usize,
    lo: f64,
    hi: f64,
    overconfidence: f64,
) -> Vec<SyntheticExample> {
    (0..count)
        .map(|i| {
            let c = rng.random_range(lo..=hi);
            let p = (c - overconfidence).clamp(0.0, 1.0);
            SyntheticExample::single(format!("ex{i:07}"), c, rng.random_bool(p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::{parse_log, to_jsonl};
    use crate::program::ProgramDialect;

    #[test]
    fn generated_records_validate() {
        let mut examples = vec![
            SyntheticExample::new("a", vec![0.9, 0.8, 0.3], true),
            SyntheticExample::new("b", vec![0.9, 0.2], false),
        ];
        examples[1].exec_correct = Some(true);
        let log = build_log("m", "d", &examples);
        let reparsed = parse_log(to_jsonl(&log).as_bytes()).unwrap();
        assert_eq!(reparsed, log);
        reparsed.check_tokenization(ProgramDialect::LispLike).unwrap();
        assert_eq!(log.records[1].predicted_program, "f0 g1");
    }

    #[test]
    fn seed_env_fallback() {
        // The variable is not set by the test harness.
        if std::env::var(SEED_ENV).is_err() {
            assert_eq!(seed_from_env(7), 7);
        }
    }
}
