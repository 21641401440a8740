use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MetricError;

/// One (confidence, correctness) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub confidence: f64,
    pub correct: bool,
    /// Token identity, for per-token breakdowns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_key: Option<String>,
    /// Tie-break key: owning example.
    #[serde(default)]
    pub example_id: String,
    /// Tie-break key: token index within the example (0 for sequences).
    #[serde(default)]
    pub position: usize,
}

impl Sample {
    pub fn new(confidence: f64, correct: bool) -> Self {
        Self {
            confidence,
            correct,
            weight_key: None,
            example_id: String::new(),
            position: 0,
        }
    }

    pub fn with_origin(mut self, example_id: impl Into<String>, position: usize) -> Self {
        self.example_id = example_id.into();
        self.position = position;
        self
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.weight_key = Some(key.into());
        self
    }

    /// Total order used before chunking: confidence, then example id, token
    /// position, correctness and key. Makes binning independent of input
    /// order.
    fn sort_cmp(&self, other: &Self) -> Ordering {
        self.confidence
            .total_cmp(&other.confidence)
            .then_with(|| self.example_id.cmp(&other.example_id))
            .then_with(|| self.position.cmp(&other.position))
            .then_with(|| self.correct.cmp(&other.correct))
            .then_with(|| self.weight_key.cmp(&other.weight_key))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningStrategy {
    Adaptive,
    Fixed,
}

impl FromStr for BinningStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "fixed" => Ok(Self::Fixed),
            other => Err(format!("unknown binning strategy '{other}' (expected adaptive or fixed)")),
        }
    }
}

impl fmt::Display for BinningStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adaptive => "adaptive",
            Self::Fixed => "fixed",
        })
    }
}

/// Binning parameters.
///
/// Adaptive bins hold `n = ceil(0.25 * (z / epsilon)^2)` samples each, where
/// `z` is the standard-normal quantile at `1 - alpha / 2`. With the defaults
/// (`alpha = 0.05`, `epsilon = 0.1`) that is 97 samples per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub strategy: BinningStrategy,
    pub alpha: f64,
    pub epsilon: f64,
    /// Only used by the fixed strategy.
    pub fixed_bin_count: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            strategy: BinningStrategy::Adaptive,
            alpha: 0.05,
            epsilon: 0.1,
            fixed_bin_count: 10,
        }
    }
}

impl BinningConfig {
    pub fn fixed(bin_count: usize) -> Self {
        Self {
            strategy: BinningStrategy::Fixed,
            fixed_bin_count: bin_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MetricError::InvalidConfig(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(MetricError::InvalidConfig(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.strategy == BinningStrategy::Fixed && self.fixed_bin_count == 0 {
            return Err(MetricError::InvalidConfig("fixed_bin_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn z_score(&self) -> f64 {
        Normal::standard().inverse_cdf(1.0 - self.alpha / 2.0)
    }

    /// Samples per adaptive bin.
    pub fn adaptive_capacity(&self) -> usize {
        let ratio = self.z_score() / self.epsilon;
        ((0.25 * ratio * ratio).ceil() as usize).max(1)
    }
}

/// A confidence bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub sample_count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
    pub confidence_lo: f64,
    pub confidence_hi: f64,
}

impl CalibrationBin {
    pub fn gap(&self) -> f64 {
        self.mean_confidence - self.mean_accuracy
    }
}

/// A bin plus the indices (into the caller's slice) of its members.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMembers {
    pub bin: CalibrationBin,
    pub members: Vec<usize>,
}

fn sorted_indices(samples: &[Sample]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].sort_cmp(&samples[b]));
    order
}

fn summarize(samples: &[Sample], members: &[usize], lo: f64, hi: f64) -> CalibrationBin {
    let count = members.len();
    let conf_sum: f64 = members.iter().map(|&i| samples[i].confidence).sum();
    let correct = members.iter().filter(|&&i| samples[i].correct).count();
    CalibrationBin {
        sample_count: count,
        // Summation can drift an ulp outside the member range.
        mean_confidence: (conf_sum / count as f64).clamp(lo, hi),
        mean_accuracy: correct as f64 / count as f64,
        confidence_lo: lo,
        confidence_hi: hi,
    }
}

fn check_samples(samples: &[Sample]) -> Result<(), MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptySamples);
    }
    if let Some(bad) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.confidence)) {
        return Err(MetricError::ConfidenceOutOfRange(bad.confidence));
    }
    Ok(())
}

/// Chunks samples, sorted by confidence, into groups of `capacity`.
///
/// A trailing remainder smaller than half a bin is merged into the last full
/// bin; a larger one forms its own bin. Fewer than `capacity` samples give a
/// single bin.
pub fn adaptive_members(samples: &[Sample], capacity: usize) -> Result<Vec<BinMembers>, MetricError> {
    check_samples(samples)?;
    if capacity == 0 {
        return Err(MetricError::InvalidConfig("adaptive bin capacity must be at least 1".into()));
    }
    let order = sorted_indices(samples);
    let mut bounds: Vec<(usize, usize)> = (0..order.len() / capacity)
        .map(|b| (b * capacity, (b + 1) * capacity))
        .collect();
    let full_end = bounds.last().map_or(0, |b| b.1);
    let remainder = order.len() - full_end;
    if remainder > 0 {
        match bounds.last_mut() {
            Some(last) if 2 * remainder < capacity => last.1 = order.len(),
            _ => bounds.push((full_end, order.len())),
        }
    }
    Ok(bounds
        .into_iter()
        .map(|(start, end)| {
            let members = order[start..end].to_vec();
            let lo = samples[members[0]].confidence;
            let hi = samples[*members.last().expect("non-empty")].confidence;
            BinMembers {
                bin: summarize(samples, &members, lo, hi),
                members,
            }
        })
        .collect())
}

/// Equal-width bins over [0, 1]; empty bins are dropped.
pub fn fixed_members(samples: &[Sample], bin_count: usize) -> Result<Vec<BinMembers>, MetricError> {
    check_samples(samples)?;
    if bin_count == 0 {
        return Err(MetricError::InvalidConfig("fixed_bin_count must be at least 1".into()));
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); bin_count];
    for i in sorted_indices(samples) {
        let slot = ((samples[i].confidence * bin_count as f64) as usize).min(bin_count - 1);
        buckets[slot].push(i);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .filter(|(_, members)| !members.is_empty())
        .map(|(slot, members)| {
            let first = samples[members[0]].confidence;
            let last = samples[*members.last().expect("non-empty")].confidence;
            let lo = (slot as f64 / bin_count as f64).min(first);
            let hi = ((slot + 1) as f64 / bin_count as f64).max(last);
            BinMembers {
                bin: summarize(samples, &members, lo, hi),
                members,
            }
        })
        .collect())
}

/// Bins with membership, dispatching on `config.strategy`.
pub fn bin_members(samples: &[Sample], config: &BinningConfig) -> Result<Vec<BinMembers>, MetricError> {
    config.validate()?;
    match config.strategy {
        BinningStrategy::Adaptive => adaptive_members(samples, config.adaptive_capacity()),
        BinningStrategy::Fixed => fixed_members(samples, config.fixed_bin_count),
    }
}

pub fn adaptive_bins(samples: &[Sample], config: &BinningConfig) -> Result<Vec<CalibrationBin>, MetricError> {
    if config.strategy != BinningStrategy::Adaptive {
        return Err(MetricError::InvalidConfig("adaptive_bins requires the adaptive strategy".into()));
    }
    Ok(bin_members(samples, config)?.into_iter().map(|b| b.bin).collect())
}

pub fn fixed_bins(samples: &[Sample], config: &BinningConfig) -> Result<Vec<CalibrationBin>, MetricError> {
    if config.strategy != BinningStrategy::Fixed {
        return Err(MetricError::InvalidConfig("fixed_bins requires the fixed strategy".into()));
    }
    Ok(bin_members(samples, config)?.into_iter().map(|b| b.bin).collect())
}

/// Expected calibration error, scaled to [0, 100]: each bin's absolute
/// confidence/accuracy gap weighted by its share of all samples.
pub fn ece(bins: &[CalibrationBin], total_samples: usize) -> Result<f64, MetricError> {
    if total_samples == 0 {
        return Err(MetricError::ZeroTotal);
    }
    let total = total_samples as f64;
    Ok(100.0
        * bins
            .iter()
            .map(|b| (b.sample_count as f64 / total) * (b.mean_accuracy - b.mean_confidence).abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(confs: &[f64]) -> Vec<Sample> {
        confs.iter().map(|&c| Sample::new(c, c > 0.5)).collect()
    }

    fn bin(count: usize, conf: f64, acc: f64) -> CalibrationBin {
        CalibrationBin {
            sample_count: count,
            mean_confidence: conf,
            mean_accuracy: acc,
            confidence_lo: conf,
            confidence_hi: conf,
        }
    }

    #[test]
    fn default_capacity_is_97() {
        let cfg = BinningConfig::default();
        assert!((cfg.z_score() - 1.959964).abs() < 1e-6);
        // 0.25 * (1.959964 / 0.1)^2 = 96.036...
        let raw = 0.25 * (cfg.z_score() / 0.1_f64).powi(2);
        assert!((raw - 96.036).abs() < 1e-3);
        assert_eq!(cfg.adaptive_capacity(), 97);
    }

    #[test]
    fn exact_division() {
        let s = samples(&[0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.0]);
        let bins = adaptive_members(&s, 5).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].bin.sample_count, 5);
        assert_eq!(bins[1].bin.sample_count, 5);
        assert_eq!(bins[0].bin.confidence_lo, 0.0);
        assert_eq!(bins[0].bin.confidence_hi, 0.4);
        assert_eq!(bins[1].bin.confidence_lo, 0.5);
    }

    #[test]
    fn small_remainder_merges() {
        // 7 = 5 + 2 and 2 < 5 / 2
        let bins = adaptive_members(&samples(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]), 5).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].bin.sample_count, 7);
    }

    #[test]
    fn large_remainder_own_bin() {
        // 8 = 5 + 3 and 3 >= 5 / 2
        let bins = adaptive_members(&samples(&[0.1; 8]), 5).unwrap();
        assert_eq!(bins.iter().map(|b| b.bin.sample_count).collect::<Vec<_>>(), [5, 3]);
    }

    #[test]
    fn fewer_than_capacity_single_bin() {
        let bins = adaptive_members(&samples(&[0.2, 0.4]), 97).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].bin.sample_count, 2);
    }

    #[test]
    fn fixed_examples() {
        let cfg = BinningConfig::fixed(10);
        assert_eq!(fixed_bins(&samples(&[0.05, 0.95]), &cfg).unwrap().len(), 2);
        assert_eq!(fixed_bins(&samples(&[0.42; 6]), &cfg).unwrap().len(), 1);

        // Enumerated: grid point (i + 0.5) / 100 lands in slot i / 10.
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let bins = fixed_bins(&samples(&grid), &cfg).unwrap();
        assert_eq!(bins.len(), 10);
        assert!(bins.iter().all(|b| b.sample_count == 10));
        let one = fixed_bins(&samples(&[1.0]), &cfg).unwrap();
        assert_eq!(one[0].confidence_lo, 0.9);
    }

    #[test]
    fn strategy_mismatch_and_empty() {
        assert!(matches!(
            fixed_bins(&samples(&[0.1]), &BinningConfig::default()),
            Err(MetricError::InvalidConfig(_))
        ));
        assert!(matches!(
            adaptive_bins(&[], &BinningConfig::default()),
            Err(MetricError::EmptySamples)
        ));
        assert!(matches!(
            adaptive_bins(&samples(&[1.5]), &BinningConfig::default()),
            Err(MetricError::ConfidenceOutOfRange(_))
        ));
        let bad = BinningConfig { alpha: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ece_examples() {
        assert!((ece(&[bin(1, 0.9, 0.8)], 1).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(ece(&[bin(3, 0.7, 0.7), bin(2, 0.2, 0.2)], 5).unwrap(), 0.0);
        // 100 * (0.5 * 0.2 + 0.5 * 0.2)
        let two = ece(&[bin(5, 0.9, 0.7), bin(5, 0.6, 0.8)], 10).unwrap();
        assert!((two - 20.0).abs() < 1e-9);
        assert!(matches!(ece(&[], 0), Err(MetricError::ZeroTotal)));
    }

    #[test]
    fn ties_broken_deterministically() {
        let a = vec![
            Sample::new(0.5, true).with_origin("b", 0),
            Sample::new(0.5, false).with_origin("a", 1),
            Sample::new(0.5, true).with_origin("a", 0),
        ];
        let mut b = a.clone();
        b.reverse();
        let ba = adaptive_members(&a, 2).unwrap();
        let bb = adaptive_members(&b, 2).unwrap();
        assert_eq!(
            ba.iter().map(|m| m.bin.clone()).collect::<Vec<_>>(),
            bb.iter().map(|m| m.bin.clone()).collect::<Vec<_>>()
        );
    }
}
