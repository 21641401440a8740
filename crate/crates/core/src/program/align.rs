use std::ops::Range;

use thiserror::Error;

use crate::log::SubwordRecord;

/// One program token and the contiguous run of subwords that spell it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedToken<'a> {
    pub token: &'a str,
    pub span: Range<usize>,
    pub subwords: &'a [SubwordRecord],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    /// Subword at `subword_index` (0-based) does not continue token
    /// `token_index` at character `char_offset` of that token.
    #[error("subword {subword_index} ('{subword}') diverges from token {token_index} ('{token}') at char {char_offset}")]
    Diverged {
        subword_index: usize,
        subword: String,
        token_index: usize,
        token: String,
        char_offset: usize,
    },
    #[error("subword stream ended inside token {token_index} ('{token}')")]
    StreamExhausted { token_index: usize, token: String },
    #[error("subword {subword_index} ('{subword}') remains after every token was covered")]
    TrailingSubwords { subword_index: usize, subword: String },
    #[error("no program tokens to align")]
    NoTokens,
}

/// Removes the longest matching word-boundary marker from the front of a
/// subword.
pub fn strip_marker<'s>(text: &'s str, markers: &[String]) -> &'s str {
    markers
        .iter()
        .filter(|m| !m.is_empty() && text.starts_with(m.as_str()))
        .max_by_key(|m| m.len())
        .map_or(text, |m| &text[m.len()..])
}

fn visible_chars(s: &str) -> impl Iterator<Item = char> + '_ {
    s.chars().filter(|c| !c.is_whitespace())
}

/// Partitions `subwords` into one contiguous slice per program token.
///
/// Subword texts are compared after stripping any marker in `markers` and
/// ignoring whitespace on both sides. Subwords that are empty after stripping
/// join the token currently being spelled; any left over once the last token
/// is complete join the last token.
pub fn align_subwords<'a>(
    tokens: &'a [String],
    subwords: &'a [SubwordRecord],
    markers: &[String],
) -> Result<Vec<AlignedToken<'a>>, AlignError> {
    if tokens.is_empty() {
        return Err(AlignError::NoTokens);
    }
    let mut out = Vec::with_capacity(tokens.len());
    let mut cursor = 0;
    for (token_index, token) in tokens.iter().enumerate() {
        let target: Vec<char> = visible_chars(token).collect();
        let start = cursor;
        let mut matched = 0;
        while matched < target.len() {
            let Some(sw) = subwords.get(cursor) else {
                return Err(AlignError::StreamExhausted {
                    token_index,
                    token: token.clone(),
                });
            };
            for ch in visible_chars(strip_marker(&sw.text, markers)) {
                if target.get(matched) != Some(&ch) {
                    return Err(AlignError::Diverged {
                        subword_index: cursor,
                        subword: sw.text.clone(),
                        token_index,
                        token: token.clone(),
                        char_offset: matched,
                    });
                }
                matched += 1;
            }
            cursor += 1;
        }
        out.push(AlignedToken {
            token,
            span: start..cursor,
            subwords: &subwords[start..cursor],
        });
    }
    // Marker-only subwords after the final token belong to it.
    while let Some(sw) = subwords.get(cursor) {
        if visible_chars(strip_marker(&sw.text, markers)).next().is_some() {
            return Err(AlignError::TrailingSubwords {
                subword_index: cursor,
                subword: sw.text.clone(),
            });
        }
        cursor += 1;
    }
    if let Some(last) = out.last_mut() {
        last.span.end = cursor;
        last.subwords = &subwords[last.span.clone()];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sws(texts: &[&str]) -> Vec<SubwordRecord> {
        texts
            .iter()
            .map(|t| SubwordRecord { text: t.to_string(), confidence: 0.5 })
            .collect()
    }

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Independent oracle: does any contiguous partition of `subwords` into
    /// `tokens.len()` non-empty slices spell the tokens exactly?
    fn brute_force_partition_exists(tokens: &[&str], subwords: &[&str]) -> bool {
        fn go(tokens: &[&str], subwords: &[&str]) -> bool {
            match tokens.split_first() {
                None => subwords.is_empty(),
                Some((head, rest)) => (1..=subwords.len()).any(|k| {
                    subwords[..k].concat() == *head && go(rest, &subwords[k..])
                }),
            }
        }
        go(tokens, subwords)
    }

    #[test]
    fn select_split_into_three() {
        let tokens = toks(&["SELECT"]);
        let subwords = sws(&["SE", "LE", "CT"]);
        let aligned = align_subwords(&tokens, &subwords, &[]).unwrap();
        assert_eq!(aligned.len(), 1);
        assert_eq!(aligned[0].token, "SELECT");
        assert_eq!(aligned[0].subwords.len(), 3);
    }

    #[test]
    fn identity_alignment() {
        let tokens = toks(&["x"]);
        let subwords = sws(&["x"]);
        let aligned = align_subwords(&tokens, &subwords, &[]).unwrap();
        assert_eq!(aligned[0].span, 0..1);
    }

    #[test]
    fn crossing_boundary_fails_at_second_subword() {
        assert!(!brute_force_partition_exists(&["ab", "cd"], &["a", "bc", "d"]));
        let tokens = toks(&["ab", "cd"]);
        let subwords = sws(&["a", "bc", "d"]);
        match align_subwords(&tokens, &subwords, &[]) {
            Err(AlignError::Diverged { subword_index, token_index, char_offset, .. }) => {
                assert_eq!(subword_index, 1);
                assert_eq!(token_index, 0);
                assert_eq!(char_offset, 2);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn markers_are_stripped() {
        let markers = vec!["Ġ".to_string(), "▁".to_string()];
        let tokens = toks(&["SELECT", "flno"]);
        let subwords = sws(&["▁SE", "LECT", "Ġfl", "no"]);
        let aligned = align_subwords(&tokens, &subwords, &markers).unwrap();
        assert_eq!(aligned[0].span, 0..2);
        assert_eq!(aligned[1].span, 2..4);
    }

    #[test]
    fn longest_marker_wins() {
        let markers = vec!["#".to_string(), "##".to_string()];
        assert_eq!(strip_marker("##ab", &markers), "ab");
        assert_eq!(strip_marker("#ab", &markers), "ab");
        assert_eq!(strip_marker("ab", &markers), "ab");
    }

    #[test]
    fn marker_only_subwords_are_assigned() {
        let markers = vec!["▁".to_string()];
        let tokens = toks(&["(", "x", ")"]);
        let subwords = sws(&["▁", "(", "x", "▁", ")", "▁"]);
        let aligned = align_subwords(&tokens, &subwords, &markers).unwrap();
        assert_eq!(aligned[0].span, 0..2);
        assert_eq!(aligned[1].span, 2..3);
        assert_eq!(aligned[2].span, 3..6);
    }

    #[test]
    fn exhausted_and_trailing() {
        let tokens = toks(&["abc"]);
        assert!(matches!(
            align_subwords(&tokens, &sws(&["ab"]), &[]),
            Err(AlignError::StreamExhausted { token_index: 0, .. })
        ));
        assert!(matches!(
            align_subwords(&tokens, &sws(&["abc", "d"]), &[]),
            Err(AlignError::TrailingSubwords { subword_index: 1, .. })
        ));
    }

    #[test]
    fn whitespace_insensitive() {
        let tokens = toks(&["'New York'"]);
        let subwords = sws(&["'New", " York", "'"]);
        let aligned = align_subwords(&tokens, &subwords, &[]).unwrap();
        assert_eq!(aligned[0].span, 0..3);
    }

    proptest! {
        /// Random splits of random tokens always align back, and the slices
        /// concatenate to the original stream.
        #[test]
        fn random_splits_align(
            words in proptest::collection::vec("[a-z()=]{1,6}", 1..8),
            cuts in proptest::collection::vec(any::<u8>(), 0..40),
        ) {
            let mut subwords = Vec::new();
            let mut cut_iter = cuts.iter().cycle();
            for w in &words {
                let chars: Vec<char> = w.chars().collect();
                let mut i = 0;
                while i < chars.len() {
                    let step = 1 + (*cut_iter.next().unwrap_or(&0) as usize % 3);
                    let end = (i + step).min(chars.len());
                    subwords.push(SubwordRecord {
                        text: chars[i..end].iter().collect(),
                        confidence: 0.5,
                    });
                    i = end;
                }
            }
            let aligned = align_subwords(&words, &subwords, &[]).unwrap();
            prop_assert_eq!(aligned.len(), words.len());
            let rejoined: Vec<SubwordRecord> =
                aligned.iter().flat_map(|a| a.subwords.iter().cloned()).collect();
            prop_assert_eq!(rejoined, subwords);
        }
    }
}
