//! Whitespace tokenization and per-token script-based language tagging.
//!
//! Tokens are produced by splitting on Unicode whitespace and then peeling
//! leading and trailing punctuation/symbol codepoints off into tokens of
//! their own. Each token is then tagged by counting its letters per script:
//! a Devanagari majority is Hindi, a Latin majority is English, and anything
//! else (no letters at all, or a tie) is language-independent.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A single whitespace-free token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawToken {
    pub text: String,
    /// Byte offsets `[start, end)` into the source string.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageTag {
    Hindi,
    English,
    Independent,
}

impl LanguageTag {
    pub fn is_language(self) -> bool {
        !matches!(self, LanguageTag::Independent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LanguageTag::Hindi => "hindi",
            LanguageTag::English => "english",
            LanguageTag::Independent => "independent",
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub token: RawToken,
    pub tag: LanguageTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedUtterance {
    pub source: String,
    pub tokens: Vec<TaggedToken>,
}

impl TaggedUtterance {
    pub fn tags(&self) -> impl Iterator<Item = LanguageTag> + '_ {
        self.tokens.iter().map(|t| t.tag)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Devanagari (U+0900–U+097F) or Devanagari Extended (U+A8E0–U+A8FF).
pub fn in_devanagari_block(c: char) -> bool {
    matches!(c, '\u{0900}'..='\u{097F}' | '\u{A8E0}'..='\u{A8FF}')
}

/// Devanagari codepoints that count as letters. Combining signs (matras,
/// nukta, virama) count because they live in the block; dandas, the
/// abbreviation sign and the digits do not.
pub fn is_devanagari_letter(c: char) -> bool {
    in_devanagari_block(c) && !matches!(c, '\u{0964}'..='\u{0970}')
}

/// Latin letters from Basic Latin, Latin-1 Supplement, Latin Extended-A/B
/// and Latin Extended Additional.
pub fn is_latin_letter(c: char) -> bool {
    match c {
        'A'..='Z' | 'a'..='z' => true,
        '\u{00D7}' | '\u{00F7}' => false,
        '\u{00C0}'..='\u{024F}' | '\u{1E00}'..='\u{1EFF}' => c.is_alphabetic(),
        _ => false,
    }
}

fn is_combining_mark(c: char) -> bool {
    matches!(
        c,
        '\u{0300}'..='\u{036F}'
            | '\u{1AB0}'..='\u{1AFF}'
            | '\u{1DC0}'..='\u{1DFF}'
            | '\u{20D0}'..='\u{20FF}'
            | '\u{FE20}'..='\u{FE2F}'
            // ZWNJ / ZWJ show up inside Devanagari conjuncts
            | '\u{200C}'
            | '\u{200D}'
    )
}

/// Punctuation and symbol codepoints that get split off the edges of a word.
fn is_detachable(c: char) -> bool {
    if matches!(c, '\u{0964}' | '\u{0965}' | '\u{0970}') {
        return true;
    }
    !(c.is_alphanumeric() || in_devanagari_block(c) || is_combining_mark(c))
}

pub fn tokenize(text: &str) -> Vec<RawToken> {
    let mut tokens = Vec::new();
    let mut chunk_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = chunk_start.take() {
                split_chunk(text, start, i, &mut tokens);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(start) = chunk_start {
        split_chunk(text, start, text.len(), &mut tokens);
    }
    tokens
}

fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<RawToken>) {
    let chunk = &text[start..end];
    let core_start = chunk.char_indices().find(|&(_, c)| !is_detachable(c)).map(|(i, _)| i);
    let Some(core_start) = core_start else {
        // nothing but punctuation: one token per codepoint
        push_chars(chunk, start, out);
        return;
    };
    let core_end = chunk
        .char_indices()
        .rev()
        .find(|&(_, c)| !is_detachable(c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(chunk.len());

    push_chars(&chunk[..core_start], start, out);
    out.push(RawToken {
        text: chunk[core_start..core_end].to_string(),
        span: (start + core_start, start + core_end),
    });
    push_chars(&chunk[core_end..], start + core_end, out);
}

fn push_chars(s: &str, offset: usize, out: &mut Vec<RawToken>) {
    for (i, c) in s.char_indices() {
        out.push(RawToken {
            text: c.to_string(),
            span: (offset + i, offset + i + c.len_utf8()),
        });
    }
}

/// Per-script letter counts of a token.
pub fn script_counts(token: &str) -> (usize, usize) {
    token.chars().fold((0, 0), |(dev, lat), c| {
        if is_devanagari_letter(c) {
            (dev + 1, lat)
        } else if is_latin_letter(c) {
            (dev, lat + 1)
        } else {
            (dev, lat)
        }
    })
}

pub fn classify_token(token: &str) -> LanguageTag {
    let (dev, lat) = script_counts(token);
    match dev.cmp(&lat) {
        std::cmp::Ordering::Greater => LanguageTag::Hindi,
        std::cmp::Ordering::Less => LanguageTag::English,
        std::cmp::Ordering::Equal => LanguageTag::Independent,
    }
}

pub fn tag_utterance(text: &str) -> TaggedUtterance {
    let tokens = tokenize(text)
        .into_iter()
        .map(|token| {
            let tag = classify_token(&token.text);
            TaggedToken { token, tag }
        })
        .collect();
    TaggedUtterance {
        source: text.to_string(),
        tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t\n").is_empty());
        assert_eq!(texts("hello, world"), ["hello", ",", "world"]);
        assert_eq!(texts("क्या LLM useful है?"), ["क्या", "LLM", "useful", "है", "?"]);
        assert_eq!(texts("(yes)..."), ["(", "yes", ")", ".", ".", "."]);
        assert_eq!(texts("don't 3.5 e-mail"), ["don't", "3.5", "e-mail"]);
        assert_eq!(texts("वह घर गया।"), ["वह", "घर", "गया", "।"]);
    }

    #[test]
    fn spans_point_into_source() {
        let src = "  क्या hotel, अच्छा  है ?";
        for t in tokenize(src) {
            assert_eq!(&src[t.span.0..t.span.1], t.text);
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_token("hello"), LanguageTag::English);
        assert_eq!(classify_token("नमस्ते"), LanguageTag::Hindi);
        assert_eq!(classify_token("42"), LanguageTag::Independent);
        assert_eq!(classify_token(","), LanguageTag::Independent);
        assert_eq!(classify_token("।"), LanguageTag::Independent);
        assert_eq!(classify_token("१२३"), LanguageTag::Independent);
        // 3 Latin vs 2 Devanagari letters
        assert_eq!(classify_token("LLMका"), LanguageTag::English);
        assert_eq!(classify_token("abका"), LanguageTag::Independent);
        assert_eq!(classify_token("café"), LanguageTag::English);
        assert_eq!(classify_token("привет"), LanguageTag::Independent);
    }

    #[test]
    fn tag_examples() {
        let tags = |s: &str| tag_utterance(s).tags().collect::<Vec<_>>();
        use LanguageTag::*;
        assert_eq!(tags("good morning"), [English, English]);
        assert_eq!(tags("क्या hotel अच्छा है ?"), [Hindi, English, Hindi, Hindi, Independent]);
        assert_eq!(tags("123 456"), [Independent, Independent]);
    }

    proptest! {
        #[test]
        fn tokens_never_contain_whitespace(s in "\\PC{0,40}") {
            let toks = tokenize(&s);
            let mut last_end = 0;
            for t in &toks {
                prop_assert!(!t.text.is_empty());
                prop_assert!(!t.text.chars().any(char::is_whitespace));
                prop_assert!(t.span.0 >= last_end && t.span.1 > t.span.0);
                prop_assert_eq!(&s[t.span.0..t.span.1], t.text.as_str());
                // gaps between tokens are whitespace only
                prop_assert!(s[last_end..t.span.0].chars().all(char::is_whitespace));
                last_end = t.span.1;
            }
            prop_assert!(s[last_end..].chars().all(char::is_whitespace));
        }

        #[test]
        fn rejoin_retokenizes_identically(s in "[a-zA-Z0-9क-हािीुूेैोौ्ं.,!?()' ]{0,40}") {
            let first = texts(&s);
            let rejoined = first.join(" ");
            prop_assert_eq!(texts(&rejoined), first);
        }

        #[test]
        fn pure_script_tokens(dev in "[क-ह]{1,6}", lat in "[a-zA-Z]{1,6}") {
            prop_assert_eq!(classify_token(&dev), LanguageTag::Hindi);
            prop_assert_eq!(classify_token(&lat), LanguageTag::English);
        }

        #[test]
        fn tagging_is_deterministic(s in "\\PC{0,30}") {
            let a = tag_utterance(&s);
            prop_assert_eq!(a.len(), tokenize(&s).len());
            prop_assert_eq!(a, tag_utterance(&s));
        }
    }
}
