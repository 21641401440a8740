//! Accuracy against ECE across models.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub model_id: String,
    pub overall_accuracy: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub model_id: String,
    pub overall_accuracy: f64,
    pub ece: f64,
    pub on_front: bool,
}

fn dominates(a: &ParetoEntry, b: &ParetoEntry) -> bool {
    a.overall_accuracy >= b.overall_accuracy
        && a.ece <= b.ece
        && (a.overall_accuracy > b.overall_accuracy || a.ece < b.ece)
}

/// Rows sorted by accuracy (descending), then ECE, then model id; a model
/// is on the front unless another is at least as accurate and at least as
/// well calibrated, and strictly better on one of the two.
pub fn pareto_table(entries: &[ParetoEntry]) -> Vec<ParetoRow> {
    let mut rows: Vec<ParetoRow> = entries
        .iter()
        .map(|e| ParetoRow {
            model_id: e.model_id.clone(),
            overall_accuracy: e.overall_accuracy,
            ece: e.ece,
            on_front: !entries.iter().any(|other| dominates(other, e)),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.overall_accuracy
            .total_cmp(&a.overall_accuracy)
            .then(a.ece.total_cmp(&b.ece))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    rows
}
