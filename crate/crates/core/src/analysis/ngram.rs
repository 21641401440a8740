//! Add-k smoothed n-gram language model used as an input-perplexity source.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::AnalysisError;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Splits text into word and punctuation tokens: runs of alphanumerics (and
/// `_`) form a word, every other non-space character stands alone.
pub fn lm_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Counts of `token` after each `order - 1` token context, smoothed as
/// `P(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k * |V|)`.
///
/// The vocabulary holds every training token plus the end marker and
/// `<unk>`; the begin marker only ever appears in contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    smoothing_k: f64,
    vocabulary: BTreeSet<String>,
    counts: BTreeMap<Vec<String>, BTreeMap<String, u64>>,
    context_totals: BTreeMap<Vec<String>, u64>,
}

fn padded(tokens: Vec<String>, order: usize) -> Vec<String> {
    let mut out = vec![BOS.to_string(); order - 1];
    out.extend(tokens);
    out.push(EOS.to_string());
    out
}

fn check_params(order: usize, smoothing_k: f64) -> Result<(), AnalysisError> {
    if order == 0 {
        return Err(AnalysisError::InvalidModel("order must be at least 1".into()));
    }
    if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
        return Err(AnalysisError::InvalidModel(format!("smoothing_k {smoothing_k} must be positive")));
    }
    Ok(())
}

/// Trains on `corpus`; the vocabulary comes from this corpus only.
pub fn train_lm(corpus: &[String], order: usize, smoothing_k: f64) -> Result<NGramModel, AnalysisError> {
    check_params(order, smoothing_k)?;
    let sentences: Vec<Vec<String>> = corpus.iter().map(|s| lm_tokenize(s)).filter(|t| !t.is_empty()).collect();
    if sentences.is_empty() {
        return Err(AnalysisError::EmptyCorpus);
    }
    let mut counts: BTreeMap<Vec<String>, BTreeMap<String, u64>> = BTreeMap::new();
    for sentence in sentences {
        let seq = padded(sentence, order);
        for window in seq.windows(order) {
            let (context, token) = window.split_at(order - 1);
            *counts
                .entry(context.to_vec())
                .or_default()
                .entry(token[0].clone())
                .or_insert(0) += 1;
        }
    }
    Ok(NGramModel::from_counts(order, smoothing_k, counts))
}

impl NGramModel {
    fn from_counts(order: usize, smoothing_k: f64, counts: BTreeMap<Vec<String>, BTreeMap<String, u64>>) -> Self {
        let mut vocabulary: BTreeSet<String> = counts.values().flat_map(|m| m.keys().cloned()).collect();
        vocabulary.insert(UNK.to_string());
        vocabulary.insert(EOS.to_string());
        let context_totals = counts.iter().map(|(ctx, m)| (ctx.clone(), m.values().sum())).collect();
        Self {
            order,
            smoothing_k,
            vocabulary,
            counts,
            context_totals,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    /// |V|, including `<unk>` and `</s>`.
    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    fn map_token<'a>(&'a self, token: &'a str) -> &'a str {
        if token == BOS || self.vocabulary.contains(token) {
            token
        } else {
            UNK
        }
    }

    /// Smoothed `P(token | context)`; out-of-vocabulary words score as
    /// `<unk>`. `context` must hold `order - 1` tokens.
    pub fn probability(&self, context: &[String], token: &str) -> f64 {
        debug_assert_eq!(context.len(), self.order - 1);
        let ctx: Vec<String> = context.iter().map(|t| self.map_token(t).to_string()).collect();
        let token = self.map_token(token);
        let total = self.context_totals.get(&ctx).copied().unwrap_or(0) as f64;
        let count = self
            .counts
            .get(&ctx)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0) as f64;
        (count + self.smoothing_k) / (total + self.smoothing_k * self.vocab_size() as f64)
    }

    /// `exp` of the mean negative log-likelihood over the text's tokens and
    /// the end marker, with begin-marker padding for the first contexts.
    pub fn perplexity(&self, text: &str) -> Result<f64, AnalysisError> {
        let tokens = lm_tokenize(text);
        if tokens.is_empty() {
            return Err(AnalysisError::EmptyText);
        }
        let seq = padded(tokens, self.order);
        let mut nll = 0.0;
        let mut n = 0usize;
        for window in seq.windows(self.order) {
            let (context, token) = window.split_at(self.order - 1);
            nll -= self.probability(context, &token[0]).ln();
            n += 1;
        }
        Ok((nll / n as f64).exp())
    }

    /// Flat count table: `order` and `smoothing_k` lines, then one
    /// tab-separated `context token count` line per n-gram with context
    /// tokens joined by spaces.
    pub fn to_count_table(&self) -> String {
        let mut out = format!("order\t{}\nsmoothing_k\t{}\n", self.order, self.smoothing_k);
        for (ctx, tokens) in &self.counts {
            for (token, count) in tokens {
                writeln!(out, "{}\t{}\t{}", ctx.join(" "), token, count).expect("write to string");
            }
        }
        out
    }

    pub fn from_count_table(text: &str) -> Result<Self, AnalysisError> {
        let bad = |line: usize, msg: &str| AnalysisError::InvalidModel(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |name: &str| -> Result<String, AnalysisError> {
            let (no, line) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
            match line.split_once('\t') {
                Some((key, value)) if key == name => Ok(value.to_string()),
                _ => Err(bad(no, &format!("expected '{name}' header"))),
            }
        };
        let order: usize = header("order")?.parse().map_err(|_| bad(1, "order is not an integer"))?;
        let smoothing_k: f64 = header("smoothing_k")?
            .parse()
            .map_err(|_| bad(2, "smoothing_k is not a number"))?;
        check_params(order, smoothing_k)?;
        let mut counts: BTreeMap<Vec<String>, BTreeMap<String, u64>> = BTreeMap::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [ctx, token, count] = fields[..] else {
                return Err(bad(no, "expected 'context<TAB>token<TAB>count'"));
            };
            let context: Vec<String> = if ctx.is_empty() {
                Vec::new()
            } else {
                ctx.split(' ').map(str::to_string).collect()
            };
            if context.len() != order - 1 || token.is_empty() {
                return Err(bad(no, "context length does not match order"));
            }
            let count: u64 = count.parse().map_err(|_| bad(no, "count is not an integer"))?;
            counts.entry(context).or_default().insert(token.to_string(), count);
        }
        if counts.is_empty() {
            return Err(AnalysisError::EmptyCorpus);
        }
        Ok(Self::from_counts(order, smoothing_k, counts))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AnalysisError> {
        let path = path.as_ref();
        fs::write(path, self.to_count_table()).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_count_table(&text)
    }
}
