//! Prediction logs: the record model, JSON Lines I/O and validation.
//!
//! A log file holds the evaluation of one model on one dataset. Each line is
//! a JSON object carrying `"schema_version": 1`. The first line may instead
//! be a header object (no `example_id`, has `marker_prefixes`) that names the
//! tokenizer's word-boundary markers and, optionally, the normalization under
//! which token `match` flags were computed.
//!
//! Writing is canonical: fixed field order, shortest round-trip floats and
//! absent optional fields omitted, so `write(read(f)) == f` byte for byte
//! for files produced by [`write_log`].

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::program::{normalize_token, tokenize_program, NormalizationConfig, ProgramDialect};

pub const SCHEMA_VERSION: u32 = 1;

/// One decoding step: the emitted subword and the maximum probability over
/// the output vocabulary at that step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubwordRecord {
    pub text: String,
    pub confidence: f64,
}

/// A program token scored under teacher forcing (gold prefix fed to the
/// model), with the subwords the model emitted for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub gold_token: String,
    pub predicted_token: String,
    pub subwords: Vec<SubwordRecord>,
    #[serde(rename = "match")]
    pub is_match: bool,
}

impl TokenRecord {
    pub fn recompute_match(&self, normalization: &NormalizationConfig) -> bool {
        normalize_token(&self.predicted_token, normalization)
            == normalize_token(&self.gold_token, normalization)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub schema_version: u32,
    pub example_id: String,
    pub model_id: String,
    pub dataset_id: String,
    /// Input turns in order, e.g. previous utterance, agent reply, current
    /// utterance; or a single utterance with schema strings appended.
    pub input_context: Vec<String>,
    pub gold_program: String,
    pub predicted_program: String,
    /// Gold-side records, one per gold program token.
    pub token_records: Vec<TokenRecord>,
    /// Free-decoded subword stream of `predicted_program`. Required for
    /// sequence-level confidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_subwords: Option<Vec<SubwordRecord>>,
    /// Candidates best-first; when non-empty, `beam[0] == predicted_program`.
    pub beam: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_perplexity: Option<f64>,
}

impl PredictionRecord {
    /// The input turns joined with single spaces.
    pub fn input_text(&self) -> String {
        self.input_context.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub schema_version: u32,
    pub model_id: String,
    pub marker_prefixes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationConfig>,
}

/// All records of one (model, dataset) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLog {
    pub header: Option<LogHeader>,
    pub records: Vec<PredictionRecord>,
}

impl PredictionLog {
    pub fn model_id(&self) -> &str {
        &self.records[0].model_id
    }

    pub fn dataset_id(&self) -> &str {
        &self.records[0].dataset_id
    }

    pub fn marker_prefixes(&self) -> &[String] {
        self.header.as_ref().map_or(&[], |h| h.marker_prefixes.as_slice())
    }

    /// Normalization under which token `match` flags are defined.
    pub fn match_normalization(&self) -> NormalizationConfig {
        self.header
            .as_ref()
            .and_then(|h| h.normalization)
            .unwrap_or_default()
    }

    pub fn example_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.example_id.as_str()).collect()
    }

    /// Checks that every record's gold-side tokens spell the tokenization of
    /// its gold program under `dialect`. Records without token records are
    /// skipped.
    pub fn check_tokenization(&self, dialect: ProgramDialect) -> Result<(), LogError> {
        for record in &self.records {
            if record.token_records.is_empty() {
                continue;
            }
            let expected = tokenize_program(&record.gold_program, dialect).map_err(|e| {
                LogError::Invalid {
                    line: None,
                    example_id: record.example_id.clone(),
                    field: "gold_program".into(),
                    reason: e.to_string(),
                }
            })?;
            let logged: Vec<&str> = record.token_records.iter().map(|t| t.gold_token.as_str()).collect();
            if logged != expected {
                let at = logged
                    .iter()
                    .zip(&expected)
                    .position(|(a, b)| *a != b)
                    .unwrap_or(logged.len().min(expected.len()));
                return Err(LogError::Invalid {
                    line: None,
                    example_id: record.example_id.clone(),
                    field: format!("token_records[{at}].gold_token"),
                    reason: format!(
                        "gold tokens do not reconstruct gold_program ({} logged, {} expected)",
                        logged.len(),
                        expected.len()
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported schema_version {found:?} (expected {SCHEMA_VERSION})")]
    SchemaVersion { line: usize, found: Option<Value> },
    #[error("{}example '{example_id}', field '{field}': {reason}", fmt_line(*line))]
    Invalid {
        line: Option<usize>,
        example_id: String,
        field: String,
        reason: String,
    },
    #[error("line {line}: duplicate example_id '{example_id}'")]
    DuplicateId { line: usize, example_id: String },
    #[error("line {line}: header must be the first line")]
    MisplacedHeader { line: usize },
    #[error("log contains no records")]
    Empty,
    #[error("logs cover different datasets: '{left}' vs '{right}'")]
    DatasetMismatch { left: String, right: String },
}

fn fmt_line(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// Reads and validates a log file.
pub fn read_log(path: impl AsRef<Path>) -> Result<PredictionLog, LogError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_log(BufReader::new(file)).map_err(|e| match e {
        LogError::Io { source, .. } => LogError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Parses and validates JSON Lines from any reader. Blank lines are skipped.
pub fn parse_log(reader: impl BufRead) -> Result<PredictionLog, LogError> {
    let mut header: Option<LogHeader> = None;
    let mut records: Vec<PredictionRecord> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| LogError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Some(object) = value.as_object() else {
            return Err(LogError::Parse {
                line: line_no,
                message: "line is not a JSON object".into(),
            });
        };
        match object.get("schema_version") {
            Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
            other => {
                return Err(LogError::SchemaVersion {
                    line: line_no,
                    found: other.cloned(),
                })
            }
        }

        let is_header = !object.contains_key("example_id") && object.contains_key("marker_prefixes");
        if is_header {
            if header.is_some() || !records.is_empty() {
                return Err(LogError::MisplacedHeader { line: line_no });
            }
            let parsed: LogHeader = serde_json::from_value(value).map_err(|e| LogError::Parse {
                line: line_no,
                message: format!("header: {e}"),
            })?;
            header = Some(parsed);
            continue;
        }

        let record: PredictionRecord = serde_json::from_value(value).map_err(|e| LogError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let normalization = header.as_ref().and_then(|h| h.normalization).unwrap_or_default();
        validate_record(&record, &normalization).map_err(|(field, reason)| LogError::Invalid {
            line: Some(line_no),
            example_id: record.example_id.clone(),
            field,
            reason,
        })?;
        let provenance = header
            .as_ref()
            .map(|h| ("header model_id", h.model_id.as_str(), "model_id", record.model_id.as_str()))
            .into_iter()
            .chain(records.first().into_iter().flat_map(|first| {
                [
                    ("first record", first.model_id.as_str(), "model_id", record.model_id.as_str()),
                    ("first record", first.dataset_id.as_str(), "dataset_id", record.dataset_id.as_str()),
                ]
            }));
        for (source, expected, field, found) in provenance {
            if expected != found {
                return Err(LogError::Invalid {
                    line: Some(line_no),
                    example_id: record.example_id.clone(),
                    field: field.into(),
                    reason: format!("'{found}' differs from {source} ('{expected}'); one log covers one model and dataset"),
                });
            }
        }
        if !seen.insert(record.example_id.clone()) {
            return Err(LogError::DuplicateId {
                line: line_no,
                example_id: record.example_id,
            });
        }
        records.push(record);
    }

    if records.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(PredictionLog { header, records })
}

fn check_subword(sw: &SubwordRecord, path: &str) -> Result<(), (String, String)> {
    if sw.text.is_empty() {
        return Err((format!("{path}.text"), "subword text is empty".into()));
    }
    if !(0.0..=1.0).contains(&sw.confidence) {
        return Err((
            format!("{path}.confidence"),
            format!("confidence {} outside [0, 1]", sw.confidence),
        ));
    }
    Ok(())
}

/// Record-local invariants. Returns the offending field path and a reason.
fn validate_record(record: &PredictionRecord, normalization: &NormalizationConfig) -> Result<(), (String, String)> {
    if record.example_id.is_empty() {
        return Err(("example_id".into(), "must be non-empty".into()));
    }
    for (t, token) in record.token_records.iter().enumerate() {
        if token.subwords.is_empty() {
            return Err((format!("token_records[{t}].subwords"), "must be non-empty".into()));
        }
        for (s, sw) in token.subwords.iter().enumerate() {
            check_subword(sw, &format!("token_records[{t}].subwords[{s}]"))?;
        }
        if token.recompute_match(normalization) != token.is_match {
            return Err((
                format!("token_records[{t}].match"),
                format!(
                    "stored {} but predicted '{}' vs gold '{}' gives {}",
                    token.is_match,
                    token.predicted_token,
                    token.gold_token,
                    !token.is_match
                ),
            ));
        }
    }
    if let Some(stream) = &record.predicted_subwords {
        for (s, sw) in stream.iter().enumerate() {
            check_subword(sw, &format!("predicted_subwords[{s}]"))?;
        }
    }
    if let Some(first) = record.beam.first() {
        if *first != record.predicted_program {
            return Err(("beam[0]".into(), "must equal predicted_program".into()));
        }
    }
    if let Some(ppl) = record.input_perplexity {
        if !(ppl.is_finite() && ppl > 0.0) {
            return Err(("input_perplexity".into(), format!("{ppl} is not a positive real")));
        }
    }
    Ok(())
}

/// Serializes a log in canonical form.
pub fn to_jsonl(log: &PredictionLog) -> String {
    let mut out = String::new();
    if let Some(header) = &log.header {
        out.push_str(&serde_json::to_string(header).expect("header serializes"));
        out.push('\n');
    }
    for record in &log.records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_log(log: &PredictionLog, path: impl AsRef<Path>) -> Result<(), LogError> {
    let path = path.as_ref();
    let io_err = |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(to_jsonl(log).as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Example-id overlap between two logs of the same dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairAlignment {
    pub shared: BTreeSet<String>,
    pub only_left: BTreeSet<String>,
    pub only_right: BTreeSet<String>,
}

impl PairAlignment {
    /// True when both logs cover exactly the same examples, as ensemble
    /// operations require.
    pub fn is_aligned(&self) -> bool {
        self.only_left.is_empty() && self.only_right.is_empty()
    }
}

pub fn validate_pair(left: &PredictionLog, right: &PredictionLog) -> Result<PairAlignment, LogError> {
    if left.dataset_id() != right.dataset_id() {
        return Err(LogError::DatasetMismatch {
            left: left.dataset_id().to_string(),
            right: right.dataset_id().to_string(),
        });
    }
    let a = left.example_ids();
    let b = right.example_ids();
    let owned = |s: std::collections::btree_set::Difference<'_, &str>| s.map(|x| x.to_string()).collect();
    Ok(PairAlignment {
        shared: a.intersection(&b).map(|x| x.to_string()).collect(),
        only_left: owned(a.difference(&b)),
        only_right: owned(b.difference(&a)),
    })
}
