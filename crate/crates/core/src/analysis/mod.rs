//! Analyses built on sequence-level calibration: input-perplexity coupling,
//! difficulty-stratified ECE and the accuracy/ECE Pareto table. An add-k
//! n-gram model supplies input perplexities when the log has none.

mod coupling;
mod ngram;
mod pareto;
mod strata;

use std::path::PathBuf;

use thiserror::Error;

pub use coupling::{
    coupling_analysis, coupling_from_points, coupling_points, weighted_slope, CouplingBin, CouplingOptions,
    CouplingPoint, CouplingReport, PerplexitySource,
};
pub use ngram::{lm_tokenize, train_lm, NGramModel, BOS, EOS, UNK};
pub use pareto::{pareto_table, ParetoEntry, ParetoRow};
pub use strata::{stratified_ece, StratumReport};

use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("language-model corpus has no tokens")]
    EmptyCorpus,
    #[error("text has no tokens to score")]
    EmptyText,
    #[error("invalid language model: {0}")]
    InvalidModel(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("example '{example_id}' has an empty input")]
    EmptyInput { example_id: String },
    #[error("records missing input_perplexity: {}", example_ids.join(", "))]
    MissingPerplexity { example_ids: Vec<String> },
    #[error("records missing difficulty: {}", example_ids.join(", "))]
    MissingLabels { example_ids: Vec<String> },
    #[error("perplexity cap {0} must be at least 1")]
    InvalidCap(f64),
    #[error("slopes need at least 2 points, got {0}")]
    TooFewBins(usize),
    #[error("all points share one perplexity; slope undefined")]
    ZeroVariance,
    #[error(transparent)]
    Metric(#[from] MetricError),
}
