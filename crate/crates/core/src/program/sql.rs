use super::TokenizeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexemeKind {
    Keyword,
    Identifier,
    Number,
    /// Quoted literal, quotes included in the surface text.
    StringLiteral,
    /// Backtick-quoted identifier.
    QuotedIdentifier,
    Operator,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlLexeme {
    pub kind: LexemeKind,
    /// Surface form exactly as written.
    pub text: String,
    pub offset: usize,
}

const KEYWORDS: &[&str] = &[
    "all", "and", "as", "asc", "avg", "between", "by", "case", "count", "cross", "desc", "distinct",
    "else", "end", "except", "exists", "from", "full", "group", "having", "in", "inner", "intersect",
    "is", "join", "left", "like", "limit", "max", "min", "not", "null", "offset", "on", "or",
    "order", "outer", "right", "select", "sum", "then", "union", "when", "where",
];

/// Case-insensitive keyword check. Surface form is never altered.
pub fn is_sql_keyword(word: &str) -> bool {
    let lower = word.to_ascii_lowercase();
    KEYWORDS.binary_search(&lower.as_str()).is_ok()
}

const TWO_CHAR_OPERATORS: &[&str] = &["<=", ">=", "!=", "<>", "==", "||"];

/// Lexes SQL text. Characters that fit no lexeme class become single-char
/// punctuation so that malformed predictions still tokenize.
pub fn lex_sql(text: &str) -> Result<Vec<SqlLexeme>, TokenizeError> {
    lex(text, false)
}

/// Like [`lex_sql`], but an unterminated literal runs to the end of the text
/// instead of failing.
pub fn lex_sql_lenient(text: &str) -> Vec<SqlLexeme> {
    lex(text, true).expect("lenient lexing cannot fail")
}

fn lex(text: &str, lenient: bool) -> Result<Vec<SqlLexeme>, TokenizeError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let ch = text[i..].chars().next().expect("in bounds");
        let start = i;
        if ch.is_whitespace() {
            i += ch.len_utf8();
            continue;
        }
        let kind = if ch == '\'' || ch == '"' || ch == '`' {
            i = match scan_quoted(text, i, ch as u8) {
                Err(_) if lenient => text.len(),
                other => other?,
            };
            if ch == '`' {
                LexemeKind::QuotedIdentifier
            } else {
                LexemeKind::StringLiteral
            }
        } else if ch.is_ascii_digit() {
            i = scan_number(bytes, i);
            LexemeKind::Number
        } else if ch.is_alphabetic() || ch == '_' {
            i += ch.len_utf8();
            while let Some(c) = text[i..].chars().next() {
                if c.is_alphanumeric() || c == '_' {
                    i += c.len_utf8();
                } else {
                    break;
                }
            }
            if is_sql_keyword(&text[start..i]) {
                LexemeKind::Keyword
            } else {
                LexemeKind::Identifier
            }
        } else if TWO_CHAR_OPERATORS.iter().any(|op| text[i..].starts_with(op)) {
            i += 2;
            LexemeKind::Operator
        } else if "=<>+-*/%".contains(ch) {
            i += 1;
            LexemeKind::Operator
        } else {
            i += ch.len_utf8();
            LexemeKind::Punctuation
        };
        out.push(SqlLexeme {
            kind,
            text: text[start..i].to_string(),
            offset: start,
        });
    }
    Ok(out)
}

/// Returns the byte index just past the closing quote. A doubled quote
/// inside the literal is an escaped quote.
fn scan_quoted(text: &str, start: usize, quote: u8) -> Result<usize, TokenizeError> {
    let bytes = text.as_bytes();
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if bytes.get(i + 1) == Some(&quote) {
                i += 2;
                continue;
            }
            return Ok(i + 1);
        }
        i += 1;
    }
    Err(TokenizeError::UnterminatedLiteral { offset: start })
}

fn scan_number(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(src: &str) -> Vec<String> {
        lex_sql(src).unwrap().into_iter().map(|l| l.text).collect()
    }

    #[test]
    fn keyword_table_is_sorted() {
        assert!(KEYWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn keywords_case_insensitive_but_surface_preserved() {
        let lex = lex_sql("select Name FROM t").unwrap();
        assert_eq!(lex[0].kind, LexemeKind::Keyword);
        assert_eq!(lex[0].text, "select");
        assert_eq!(lex[1].kind, LexemeKind::Identifier);
        assert_eq!(lex[2].kind, LexemeKind::Keyword);
        assert_eq!(lex[2].text, "FROM");
    }

    #[test]
    fn literals_and_operators() {
        assert_eq!(
            texts("WHERE T1.city = 'Los Angeles' AND x >= 1.5 AND y<>2"),
            vec![
                "WHERE", "T1", ".", "city", "=", "'Los Angeles'", "AND", "x", ">=", "1.5", "AND",
                "y", "<>", "2"
            ]
        );
    }

    #[test]
    fn escaped_quote_stays_inside_literal() {
        assert_eq!(texts("name = 'O''Brien'"), vec!["name", "=", "'O''Brien'"]);
    }

    #[test]
    fn count_star() {
        assert_eq!(texts("count(*)"), vec!["count", "(", "*", ")"]);
    }

    #[test]
    fn lenient_unterminated_literal() {
        let lex = lex_sql_lenient("x = 'New York");
        assert_eq!(lex.last().unwrap().text, "'New York");
        assert!(lex_sql("x = 'New York").is_err());
    }

    #[test]
    fn double_quoted_literal() {
        let lex = lex_sql("x = \"a b\"").unwrap();
        assert_eq!(lex[2].kind, LexemeKind::StringLiteral);
        assert_eq!(lex[2].text, "\"a b\"");
    }
}
