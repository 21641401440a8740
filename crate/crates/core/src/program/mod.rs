//! Program tokenization, exact-match normalization and subword alignment.
//!
//! Models emit subword pieces; calibration is measured over program tokens.
//! This module turns program text into tokens for the two supported
//! dialects, normalizes token sequences for lenient matching, aligns a
//! subword stream onto program tokens and folds subword confidences into a
//! token confidence.

mod align;
mod normalize;
mod sql;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub use align::{align_subwords, strip_marker, AlignError, AlignedToken};
pub use normalize::{normalize, normalize_token, NormalizationConfig};
pub use sql::{is_sql_keyword, lex_sql, lex_sql_lenient, LexemeKind, SqlLexeme};

use crate::log::SubwordRecord;

/// Surface syntax of the programs in a log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramDialect {
    /// S-expression programs (dataflow-style task-oriented dialogue parses).
    #[default]
    LispLike,
    /// SQL queries.
    Sql,
}

impl fmt::Display for ProgramDialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LispLike => "lisp_like",
            Self::Sql => "sql",
        })
    }
}

impl FromStr for ProgramDialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lisp_like" | "lisp" => Ok(Self::LispLike),
            "sql" => Ok(Self::Sql),
            other => Err(format!("unknown dialect '{other}' (expected lisp_like or sql)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("program text is empty")]
    EmptyProgram,
    #[error("unterminated string literal starting at byte {offset}")]
    UnterminatedLiteral { offset: usize },
}

/// Splits a program into program tokens.
///
/// Lisp-like programs are split on whitespace with every parenthesis as a
/// standalone token; unbalanced parentheses are accepted since predictions
/// may be malformed. SQL is split into lexemes, and quoted literals stay
/// single tokens with their quotes.
pub fn tokenize_program(text: &str, dialect: ProgramDialect) -> Result<Vec<String>, TokenizeError> {
    if text.trim().is_empty() {
        return Err(TokenizeError::EmptyProgram);
    }
    match dialect {
        ProgramDialect::LispLike => Ok(tokenize_lisp(text)),
        ProgramDialect::Sql => Ok(lex_sql(text)?.into_iter().map(|l| l.text).collect()),
    }
}

/// Tokenizes a model prediction. Never fails on non-empty text: an
/// unterminated SQL literal extends to the end of the program.
pub fn tokenize_prediction(text: &str, dialect: ProgramDialect) -> Result<Vec<String>, TokenizeError> {
    if text.trim().is_empty() {
        return Err(TokenizeError::EmptyProgram);
    }
    match dialect {
        ProgramDialect::LispLike => Ok(tokenize_lisp(text)),
        ProgramDialect::Sql => Ok(lex_sql_lenient(text).into_iter().map(|l| l.text).collect()),
    }
}

fn tokenize_lisp(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch == '(' || ch == ')' {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Joins tokens back into program text with single spaces.
///
/// Re-tokenizing the output yields the same tokens.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// How subword (or token) confidences are folded into one confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Weakest-link: the smallest confidence.
    #[default]
    Min,
    /// Arithmetic mean.
    Mean,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Min => "min",
            Self::Mean => "mean",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Self::Min),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown aggregation '{other}' (expected min or mean)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot aggregate an empty confidence list")]
pub struct EmptyConfidences;

/// Aggregates a non-empty list of probabilities with `method`.
pub fn aggregate_confidence(confidences: &[f64], method: Aggregation) -> Result<f64, EmptyConfidences> {
    if confidences.is_empty() {
        return Err(EmptyConfidences);
    }
    Ok(match method {
        Aggregation::Min => confidences.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Mean => confidences.iter().sum::<f64>() / confidences.len() as f64,
    })
}

/// Aggregates the confidences of a slice of subword records.
pub fn aggregate_subwords(subwords: &[SubwordRecord], method: Aggregation) -> Result<f64, EmptyConfidences> {
    let confidences: Vec<f64> = subwords.iter().map(|s| s.confidence).collect();
    aggregate_confidence(&confidences, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sql_select_tokens() {
        let got = tokenize_program("SELECT flno FROM flight", ProgramDialect::Sql).unwrap();
        assert_eq!(got, toks(&["SELECT", "flno", "FROM", "flight"]));
    }

    #[test]
    fn lisp_parentheses_are_tokens() {
        let got = tokenize_program("(Yield (x))", ProgramDialect::LispLike).unwrap();
        assert_eq!(got, toks(&["(", "Yield", "(", "x", ")", ")"]));
    }

    #[test]
    fn lisp_accepts_unbalanced() {
        let got = tokenize_program("(Yield (size", ProgramDialect::LispLike).unwrap();
        assert_eq!(got, toks(&["(", "Yield", "(", "size"]));
    }

    #[test]
    fn sql_unterminated_literal() {
        let err = tokenize_program("WHERE origin = 'LA", ProgramDialect::Sql).unwrap_err();
        assert_eq!(err, TokenizeError::UnterminatedLiteral { offset: 15 });
    }

    #[test]
    fn empty_program_rejected() {
        assert_eq!(
            tokenize_program("   ", ProgramDialect::LispLike),
            Err(TokenizeError::EmptyProgram)
        );
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_confidence(&[0.9, 0.8, 0.95], Aggregation::Min).unwrap(), 0.8);
        assert_eq!(aggregate_confidence(&[0.5], Aggregation::Min).unwrap(), 0.5);
        assert_eq!(aggregate_confidence(&[0.5], Aggregation::Mean).unwrap(), 0.5);
        let mean = aggregate_confidence(&[0.9, 0.6, 0.9], Aggregation::Mean).unwrap();
        assert!((mean - 0.8).abs() < 1e-12);
        assert_eq!(aggregate_confidence(&[], Aggregation::Mean), Err(EmptyConfidences));
    }

    #[test]
    fn detokenize_is_stable() {
        for (text, dialect) in [
            ("(Yield (> (size (x)) 0))", ProgramDialect::LispLike),
            ("SELECT count(*) FROM t WHERE name = 'New  York' AND x >= 1.5", ProgramDialect::Sql),
        ] {
            let once = tokenize_program(text, dialect).unwrap();
            let twice = tokenize_program(&detokenize(&once), dialect).unwrap();
            assert_eq!(once, twice);
        }
    }
}
