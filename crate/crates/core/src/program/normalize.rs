use serde::{Deserialize, Serialize};

/// Opt-in token transforms applied before exact-match comparison.
///
/// All flags default to off, which keeps exact match strict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NormalizationConfig {
    /// Rewrite single-quote delimiters at token edges to double quotes.
    #[serde(default)]
    pub unify_quotes: bool,
    /// Lowercase every token.
    #[serde(default)]
    pub case_fold: bool,
    /// Trim each token and collapse interior whitespace runs to one space.
    #[serde(default)]
    pub collapse_whitespace: bool,
}

impl NormalizationConfig {
    pub fn is_identity(&self) -> bool {
        !(self.unify_quotes || self.case_fold || self.collapse_whitespace)
    }
}

pub fn normalize_token(token: &str, config: &NormalizationConfig) -> String {
    let mut out = token.to_string();
    if config.collapse_whitespace {
        out = out.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    if config.case_fold {
        out = out.to_lowercase();
    }
    if config.unify_quotes {
        // Whitespace-split lisp strings leave the quote on the first and last
        // fragment only, so each edge is handled on its own.
        if let Some(rest) = out.strip_prefix('\'') {
            out = format!("\"{rest}");
        }
        if out.len() > 1 {
            if let Some(rest) = out.strip_suffix('\'') {
                out = format!("{rest}\"");
            }
        }
    }
    out
}

/// Applies the enabled transforms to every token. Idempotent.
pub fn normalize(tokens: &[String], config: &NormalizationConfig) -> Vec<String> {
    if config.is_identity() {
        return tokens.to_vec();
    }
    tokens.iter().map(|t| normalize_token(t, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn quotes_unified() {
        let cfg = NormalizationConfig { unify_quotes: true, ..Default::default() };
        assert_eq!(normalize(&toks(&["'Janessa'"]), &cfg), toks(&["\"Janessa\""]));
        assert_eq!(normalize(&toks(&["don't"]), &cfg), toks(&["don't"]));
        assert_eq!(
            normalize(&toks(&["'dinner", "with", "Janessa'"]), &cfg),
            toks(&["\"dinner", "with", "Janessa\""])
        );
        assert_eq!(normalize(&toks(&["'"]), &cfg), toks(&["\""]));
    }

    #[test]
    fn all_off_is_identity() {
        let tokens = toks(&["'A'", "  B  C ", "Los"]);
        assert_eq!(normalize(&tokens, &NormalizationConfig::default()), tokens);
    }

    #[test]
    fn case_fold() {
        let cfg = NormalizationConfig { case_fold: true, ..Default::default() };
        assert_eq!(normalize(&toks(&["Los", "ANGELES"]), &cfg), toks(&["los", "angeles"]));
    }

    #[test]
    fn collapse_whitespace() {
        let cfg = NormalizationConfig { collapse_whitespace: true, ..Default::default() };
        assert_eq!(normalize(&toks(&["'New   York '"]), &cfg), toks(&["'New York '"]));
    }

    proptest! {
        #[test]
        fn idempotent(
            tokens in proptest::collection::vec("[ 'a-zA-Z\"]{0,8}", 0..6),
            unify_quotes: bool, case_fold: bool, collapse_whitespace: bool,
        ) {
            let cfg = NormalizationConfig { unify_quotes, case_fold, collapse_whitespace };
            let once = normalize(&tokens, &cfg);
            prop_assert_eq!(normalize(&once, &cfg), once);
        }
    }
}
