//! Calibration measurement for sequence-generation semantic parsers.
//!
//! The crate reads prediction logs (JSON Lines), aligns subword confidences
//! to program tokens and reports token- and sequence-level expected
//! calibration error with adaptive binning. On top of that it provides the
//! analyses built from those reports: input-perplexity coupling,
//! difficulty-stratified ECE, accuracy@k and execution-accuracy calibration,
//! confidence-based EASY/HARD challenge splits and SVG reliability diagrams.

pub mod analysis;
pub mod cli;
pub mod log;
pub mod metrics;
pub mod program;
pub mod render;
pub mod splits;
pub mod synthetic;
