//! Text shearing: token counting, the token limit `T`, first-clause
//! extraction and the hard-truncation fallback.
//!
//! Generated captions are cut to at most `T` tokens and then reduced to the
//! first complete clause, i.e. the shortest prefix ending in a terminator
//! whose trimmed character length exceeds `min_clause_chars`. When no such
//! clause exists the [`Fallback`] decides what happens.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShearError {
    #[error("no clause longer than {min_chars} characters found")]
    NoValidClause { min_chars: usize },
    #[error("cannot derive a token limit from an empty corpus")]
    EmptyCorpus,
    #[error("invalid shear policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    WhitespacePunct,
}

/// Model-agnostic tokenizer: whitespace splitting with punctuation marks as
/// separate tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    pub lowercase: bool,
}

/// A token as a byte span into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn as_str<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

// Characters that stay inside a word when both neighbours allow it:
// apostrophes and hyphens between letters/digits, '.' and ',' between digits.
fn joins(prev: char, c: char, next: char) -> bool {
    match c {
        '\'' | '\u{2019}' | '-' => is_word_char(prev) && is_word_char(next),
        '.' | ',' => prev.is_ascii_digit() && next.is_ascii_digit(),
        _ => false,
    }
}

impl TokenizerSpec {
    /// Token spans of `text` in order.
    pub fn spans(&self, text: &str) -> Vec<TokenSpan> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut spans = Vec::new();
        let mut word_start: Option<usize> = None;

        for (k, &(pos, c)) in chars.iter().enumerate() {
            if is_word_char(c) {
                word_start.get_or_insert(pos);
                continue;
            }
            if word_start.is_some() {
                let next = chars.get(k + 1).map(|&(_, n)| n).unwrap_or(' ');
                let prev = chars[k - 1].1;
                if joins(prev, c, next) {
                    continue;
                }
            }
            if let Some(start) = word_start.take() {
                spans.push(TokenSpan { start, end: pos });
            }
            if !c.is_whitespace() {
                spans.push(TokenSpan {
                    start: pos,
                    end: pos + c.len_utf8(),
                });
            }
        }
        if let Some(start) = word_start {
            spans.push(TokenSpan {
                start,
                end: text.len(),
            });
        }
        spans
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.spans(text)
            .into_iter()
            .map(|s| {
                let tok = s.as_str(text);
                if self.lowercase {
                    tok.to_lowercase()
                } else {
                    tok.to_string()
                }
            })
            .collect()
    }
}

pub fn count_tokens(text: &str, spec: &TokenizerSpec) -> usize {
    spec.spans(text).len()
}

/// Token limit derived from a corpus: the arithmetic mean token count,
/// rounded half-up, never below 1.
pub fn compute_shear_limit<I, S>(captions: I, spec: &TokenizerSpec) -> Result<usize, ShearError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let (sum, n) = captions
        .into_iter()
        .fold((0u128, 0u128), |(sum, n), c| {
            (sum + count_tokens(c.as_ref(), spec) as u128, n + 1)
        });
    if n == 0 {
        return Err(ShearError::EmptyCorpus);
    }
    // floor(sum / n + 1/2) in exact integer arithmetic
    let t = (2 * sum + n) / (2 * n);
    Ok(t.max(1) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    HardTruncate,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShearPolicy {
    pub max_tokens: usize,
    pub min_clause_chars: usize,
    pub clause_terminators: Vec<char>,
    pub fallback: Fallback,
    pub tokenizer: TokenizerSpec,
}

impl Default for ShearPolicy {
    fn default() -> Self {
        Self {
            max_tokens: 30,
            min_clause_chars: 5,
            clause_terminators: vec!['.'],
            fallback: Fallback::HardTruncate,
            tokenizer: TokenizerSpec::default(),
        }
    }
}

impl ShearPolicy {
    pub fn with_max_tokens(max_tokens: usize) -> Self {
        Self {
            max_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ShearError> {
        if self.max_tokens < 1 {
            return Err(ShearError::InvalidPolicy("max_tokens must be >= 1".into()));
        }
        if self.clause_terminators.is_empty() {
            return Err(ShearError::InvalidPolicy(
                "clause_terminators must not be empty".into(),
            ));
        }
        if self.clause_terminators.iter().any(|c| c.is_whitespace()) {
            return Err(ShearError::InvalidPolicy(
                "clause_terminators must not contain whitespace".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form. Recorded in manifests and
    /// checkpoints so outputs made under different policies are never mixed.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("policy serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    fn is_terminator(&self, c: char) -> bool {
        self.clause_terminators.contains(&c)
    }
}

/// Prefix of `text` covering its first `max_tokens` tokens, original spacing
/// kept. Text with fewer tokens comes back whole (trimmed).
pub fn truncate_to_tokens<'a>(text: &'a str, max_tokens: usize, spec: &TokenizerSpec) -> &'a str {
    let spans = spec.spans(text);
    if spans.len() <= max_tokens {
        return text.trim();
    }
    if max_tokens == 0 {
        return "";
    }
    text[..spans[max_tokens - 1].end].trim()
}

/// Shortest prefix ending at a clause terminator whose trimmed character
/// length is strictly greater than `policy.min_clause_chars`.
///
/// A terminator only closes a clause when followed by whitespace or the end
/// of the text, so decimals such as `3.5` never split a clause.
pub fn extract_first_clause<'a>(text: &'a str, policy: &ShearPolicy) -> Option<&'a str> {
    let text = text.trim_start();
    let mut iter = text.char_indices().peekable();
    let mut chars_seen = 0usize;
    while let Some((pos, c)) = iter.next() {
        chars_seen += 1;
        if !policy.is_terminator(c) {
            continue;
        }
        let at_boundary = iter.peek().is_none_or(|&(_, n)| n.is_whitespace());
        if !at_boundary {
            continue;
        }
        let prefix = &text[..pos + c.len_utf8()];
        // prefix has no leading whitespace and ends in a non-space terminator
        debug_assert_eq!(prefix.chars().count(), chars_seen);
        if chars_seen > policy.min_clause_chars {
            return Some(prefix);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShearMethod {
    Clause,
    HardTruncate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sheared {
    pub text: String,
    /// The output differs from the trimmed input.
    pub sheared: bool,
    pub method: ShearMethod,
    pub raw_token_count: usize,
}

/// Token texts joined by one space wherever the source separates them by
/// whitespace. Tokens that touch in the source keep touching, so no new
/// clause boundary can appear.
fn collapse_whitespace(text: &str, spec: &TokenizerSpec) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev_end = None;
    for span in spec.spans(text) {
        if prev_end.is_some_and(|end| end < span.start) {
            out.push(' ');
        }
        out.push_str(&text[span.start..span.end]);
        prev_end = Some(span.end);
    }
    out
}

/// Applies the full shearing rule to one generated caption.
pub fn shear_caption(text: &str, policy: &ShearPolicy) -> Result<Sheared, ShearError> {
    let spec = &policy.tokenizer;
    let raw_token_count = count_tokens(text, spec);
    let trimmed = text.trim();
    let window = truncate_to_tokens(trimmed, policy.max_tokens, spec);

    let (out, method) = match extract_first_clause(window, policy) {
        Some(clause) => (clause.to_string(), ShearMethod::Clause),
        None => match policy.fallback {
            Fallback::HardTruncate => (collapse_whitespace(window, spec), ShearMethod::HardTruncate),
            Fallback::Reject => {
                return Err(ShearError::NoValidClause {
                    min_chars: policy.min_clause_chars,
                })
            }
        },
    };

    Ok(Sheared {
        sheared: out != trimmed,
        text: out,
        method,
        raw_token_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws() -> TokenizerSpec {
        TokenizerSpec::default()
    }

    #[test]
    fn counts_words_and_punctuation() {
        assert_eq!(count_tokens("", &ws()), 0);
        assert_eq!(count_tokens("   ", &ws()), 0);
        assert_eq!(count_tokens("lovers on a park bench.", &ws()), 6);
    }

    #[test]
    fn possessive_stays_one_token() {
        let expected = ["a", "man's", "hat", ",", "red", "."];
        assert_eq!(ws().tokenize("a man's hat, red."), expected);
        assert_eq!(count_tokens("a man's hat, red.", &ws()), expected.len());
    }

    #[test]
    fn decimals_and_hyphens() {
        assert_eq!(ws().tokenize("a 3.5 m well-lit room."), ["a", "3.5", "m", "well-lit", "room", "."]);
        assert_eq!(ws().tokenize("end-"), ["end", "-"]);
        assert_eq!(ws().tokenize("'quoted'"), ["'", "quoted", "'"]);
    }

    #[test]
    fn lowercase_option() {
        let spec = TokenizerSpec {
            lowercase: true,
            ..TokenizerSpec::default()
        };
        assert_eq!(spec.tokenize("A Cat"), ["a", "cat"]);
    }

    #[test]
    fn limit_is_rounded_mean() {
        assert_eq!(compute_shear_limit(["a b c", "a b c d e"], &ws()), Ok(4));
        assert_eq!(compute_shear_limit(["a b", "a b c"], &ws()), Ok(3)); // 2.5 rounds up
        assert_eq!(compute_shear_limit([""], &ws()), Ok(1));
        assert_eq!(
            compute_shear_limit(Vec::<String>::new(), &ws()),
            Err(ShearError::EmptyCorpus)
        );
        let fifteen = (0..15).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(compute_shear_limit([fifteen], &ws()), Ok(15));
    }

    #[test]
    fn first_clause_cases() {
        let p = ShearPolicy::default();
        assert_eq!(
            extract_first_clause("A cat sits on a mat. It also wears a", &p),
            Some("A cat sits on a mat.")
        );
        assert_eq!(
            extract_first_clause("Hi. A long second sentence follows here.", &p),
            Some("Hi. A long second sentence follows here.")
        );
        assert_eq!(extract_first_clause("no terminator at all", &p), None);
        // exactly five characters is not enough
        assert_eq!(extract_first_clause("abcd. rest", &p), None);
        assert_eq!(extract_first_clause("abcde. rest", &p), Some("abcde."));
        assert_eq!(extract_first_clause("It is 3.5 m tall.", &p), Some("It is 3.5 m tall."));
    }

    #[test]
    fn custom_terminators() {
        let p = ShearPolicy {
            clause_terminators: vec!['.', '!'],
            ..ShearPolicy::default()
        };
        assert_eq!(extract_first_clause("What a view! Then.", &p), Some("What a view!"));
    }

    #[test]
    fn shear_short_caption_is_identity() {
        let out = shear_caption("a cat.", &ShearPolicy::default()).unwrap();
        assert_eq!(out.text, "a cat.");
        assert!(!out.sheared);
        assert_eq!(out.method, ShearMethod::Clause);
    }

    #[test]
    fn shear_long_generation() {
        let long = "The image shows a couple sitting on a bench in a park. ".repeat(8);
        let p = ShearPolicy::with_max_tokens(30);
        let out = shear_caption(&long, &p).unwrap();
        assert_eq!(out.raw_token_count, 13 * 8);
        assert_eq!(out.text, "The image shows a couple sitting on a bench in a park.");
        assert!(count_tokens(&out.text, &p.tokenizer) <= 30);
    }

    #[test]
    fn hard_truncate_collapses_whitespace() {
        let p = ShearPolicy::with_max_tokens(4);
        let out = shear_caption("a  man's\nhat, red and blue", &p).unwrap();
        assert_eq!(out.text, "a man's hat,");
        assert_eq!(out.method, ShearMethod::HardTruncate);
        assert!(out.sheared);
    }

    #[test]
    fn hard_truncate_does_not_create_clauses() {
        let p = ShearPolicy::default();
        let once = shear_caption("a.b.", &p).unwrap();
        assert_eq!(once.text, "a.b.");
        assert_eq!(once.method, ShearMethod::HardTruncate);
        assert_eq!(shear_caption(&once.text, &p).unwrap().text, once.text);
    }

    #[test]
    fn reject_fallback_errors() {
        let p = ShearPolicy {
            fallback: Fallback::Reject,
            ..ShearPolicy::default()
        };
        assert_eq!(
            shear_caption("no terminator here", &p),
            Err(ShearError::NoValidClause { min_chars: 5 })
        );
    }

    #[test]
    fn clause_cut_by_limit_falls_back() {
        // the only terminator lies beyond the token window
        let p = ShearPolicy::with_max_tokens(3);
        let out = shear_caption("one two three four.", &p).unwrap();
        assert_eq!(out.text, "one two three");
        assert_eq!(out.method, ShearMethod::HardTruncate);
    }

    #[test]
    fn digest_is_stable_and_policy_sensitive() {
        let a = ShearPolicy::default();
        assert_eq!(a.digest(), ShearPolicy::default().digest());
        assert_ne!(a.digest(), ShearPolicy::with_max_tokens(15).digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn policy_validation() {
        assert!(ShearPolicy::with_max_tokens(0).validate().is_err());
        assert!(ShearPolicy::default().validate().is_ok());
    }
}
