//! Code-switched sentence generation under a target CMI bucket.
//!
//! Two generators are provided. [`substitute`] swaps lexicon-covered English
//! words for Hindi ones, searching over how many words to swap until the
//! measured CMI lands in the requested bucket. [`generate_via_endpoint`]
//! asks a chat model to rewrite the sentence and rejection-samples on the
//! measured CMI.

use crate::client::{ChatMessage, ModelClient, SamplingParams};
use crate::cmi::{bucket_of, compute_cmi, CmiBreakdown, CmiBucket};
use crate::langid::{classify_token, is_devanagari_letter, tag_utterance, tokenize, LanguageTag};
use crate::util::{rng, sha256_hex};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 8;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_GENERATION_MAX_TOKENS: u32 = 256;

const BUILTIN_TEMPLATE: &str = include_str!("../assets/prompts/hinglish_v1.txt");

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("line {line}: expected `english<TAB>hindi`, got {content:?}")]
    Format { line: usize, content: String },
    #[error("line {line}: key {key:?} must be a single lowercase word")]
    BadKey { line: usize, key: String },
    #[error("line {line}: value {value:?} contains no Devanagari letter")]
    BadValue { line: usize, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("lexicon covers no word of {0:?}")]
    UncoverableSentence(String),
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("endpoint returned an empty completion")]
    MalformedCompletion,
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Lexicon,
    Endpoint,
}

impl GeneratorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorKind::Lexicon => "lexicon",
            GeneratorKind::Endpoint => "endpoint",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexicon" => Ok(GeneratorKind::Lexicon),
            "endpoint" => Ok(GeneratorKind::Endpoint),
            other => Err(format!("unknown generator {other:?} (expected lexicon or endpoint)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub target_bucket: CmiBucket,
    pub seed: u64,
    pub max_attempts: u32,
    pub generator: GeneratorKind,
    /// When false, off-bucket outputs are kept downstream instead of dropped.
    /// Only meaningful for the endpoint generator, which then makes one attempt.
    pub enforce_bucket: bool,
}

impl GenerationSpec {
    pub fn new(target_bucket: CmiBucket, generator: GeneratorKind, seed: u64) -> Self {
        Self {
            target_bucket,
            seed,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            generator,
            enforce_bucket: true,
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.max_attempts == 0 {
            return Err(GenerateError::InvalidSpec("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// Starting fraction of covered words to substitute.
    fn initial_fraction(&self) -> f64 {
        match self.target_bucket {
            CmiBucket::Low => 0.08,
            CmiBucket::Medium => 0.35,
            CmiBucket::High => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub text: String,
    pub breakdown: CmiBreakdown,
    pub attempts_used: u32,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_sha256: Option<String>,
}

impl GenerationOutcome {
    fn measure(text: String, target: CmiBucket, attempts_used: u32) -> Self {
        let breakdown = compute_cmi(&tag_utterance(&text));
        let accepted = breakdown.bucket() == target;
        Self {
            text,
            breakdown,
            attempts_used,
            accepted,
            template_sha256: None,
        }
    }
}

/// Lowercased word with edge punctuation removed; the lexicon lookup key.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BilingualLexicon {
    entries: BTreeMap<String, String>,
}

impl BilingualLexicon {
    pub fn from_tsv(text: &str) -> Result<Self, LexiconError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut cols = raw.split('\t');
            let (Some(en), Some(hi), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(LexiconError::Format {
                    line,
                    content: raw.to_string(),
                });
            };
            let (en, hi) = (en.trim(), hi.trim());
            if en.is_empty() || en.chars().any(char::is_whitespace) || normalize_word(en) != en {
                return Err(LexiconError::BadKey {
                    line,
                    key: en.to_string(),
                });
            }
            if !hi.chars().any(is_devanagari_letter) {
                return Err(LexiconError::BadValue {
                    line,
                    value: hi.to_string(),
                });
            }
            entries.insert(en.to_string(), hi.to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, english: &str, hindi: &str) {
        self.entries.insert(normalize_word(english), hindi.to_string());
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.entries.get(&normalize_word(word)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// An English token of `sentence` that the lexicon can replace.
struct Slot<'a> {
    span: (usize, usize),
    hindi: &'a str,
}

fn covered_slots<'a>(sentence: &str, lexicon: &'a BilingualLexicon) -> Vec<Slot<'a>> {
    tokenize(sentence)
        .into_iter()
        .filter(|t| classify_token(&t.text) == LanguageTag::English)
        .filter_map(|t| lexicon.get(&t.text).map(|hindi| Slot { span: t.span, hindi }))
        .collect()
}

fn render(sentence: &str, slots: &[Slot<'_>], chosen: &[bool]) -> String {
    let mut out = String::with_capacity(sentence.len() * 2);
    let mut cursor = 0;
    for (slot, &take) in slots.iter().zip(chosen) {
        if take {
            out.push_str(&sentence[cursor..slot.span.0]);
            out.push_str(slot.hindi);
            cursor = slot.span.1;
        }
    }
    out.push_str(&sentence[cursor..]);
    out
}

/// Replaces a seeded subset of lexicon-covered words so the result's CMI
/// falls in `spec.target_bucket`.
///
/// The subset is a prefix of a seeded permutation of the covered words; its
/// length is binary-searched on the measured CMI, starting from a
/// bucket-specific fraction.
pub fn substitute(
    sentence: &str,
    lexicon: &BilingualLexicon,
    spec: &GenerationSpec,
) -> Result<GenerationOutcome, GenerateError> {
    spec.validate()?;
    let slots = covered_slots(sentence, lexicon);
    if slots.is_empty() {
        return Err(GenerateError::UncoverableSentence(sentence.to_string()));
    }
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut rng(spec.seed));

    let covered = slots.len();
    let target = spec.target_bucket;
    let (mut lo, mut hi) = (0usize, covered);
    let mut k = ((spec.initial_fraction() * covered as f64).round() as usize).min(covered);
    let mut last = None;

    for attempt in 1..=spec.max_attempts {
        let mut chosen = vec![false; covered];
        for &i in &order[..k] {
            chosen[i] = true;
        }
        let outcome = GenerationOutcome::measure(render(sentence, &slots, &chosen), target, attempt);
        if outcome.accepted {
            return Ok(outcome);
        }
        let b = &outcome.breakdown;
        let past_peak = b.count(LanguageTag::Hindi) > b.count(LanguageTag::English);
        if outcome.breakdown.cmi_percent < target.range().0 && !past_peak {
            lo = k + 1;
        } else {
            hi = k.saturating_sub(1);
            if k == 0 {
                lo = 1;
            }
        }
        last = Some(outcome);
        if lo > hi {
            break;
        }
        k = lo + (hi - lo) / 2;
    }
    Ok(last.expect("max_attempts >= 1"))
}

/// Versioned system prompt for endpoint generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
    pub sha256: String,
}

impl PromptTemplate {
    pub fn builtin() -> Self {
        Self::from_text("hinglish_v1", BUILTIN_TEMPLATE)
    }

    pub fn from_text(name: &str, text: &str) -> Self {
        Self {
            name: name.to_string(),
            text: text.to_string(),
            sha256: sha256_hex(text.as_bytes()),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        Ok(Self::from_text(name, &text))
    }

    pub fn messages(&self, sentence: &str) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system(self.text.trim_end()),
            ChatMessage::user(format!("English: {sentence}\nHinglish:")),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for EndpointParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_GENERATION_MAX_TOKENS,
        }
    }
}

fn clean_completion(raw: &str) -> &str {
    let line = raw.trim();
    let line = line.strip_prefix("Hinglish:").unwrap_or(line);
    line.trim()
}

/// Asks `client` to rewrite `sentence` as Hinglish, retrying until the
/// measured CMI falls in the target bucket or attempts run out. With
/// `enforce_bucket` off, a single attempt is made.
pub fn generate_via_endpoint<C: ModelClient + ?Sized>(
    sentence: &str,
    client: &C,
    spec: &GenerationSpec,
    template: &PromptTemplate,
    params: EndpointParams,
) -> Result<GenerationOutcome, GenerateError> {
    spec.validate()?;
    let messages = template.messages(sentence);
    let sampling = SamplingParams {
        temperature: params.temperature,
        max_tokens: params.max_tokens,
        n: 1,
    };
    let attempts = if spec.enforce_bucket { spec.max_attempts } else { 1 };
    let mut last = None;
    for attempt in 1..=attempts {
        let completions = client
            .complete(&messages, &sampling)
            .map_err(|e| GenerateError::EndpointUnavailable(e.to_string()))?;
        let text = completions.first().map(|c| clean_completion(c)).unwrap_or("");
        if text.is_empty() {
            return Err(GenerateError::MalformedCompletion);
        }
        let mut outcome = GenerationOutcome::measure(text.to_string(), spec.target_bucket, attempt);
        outcome.template_sha256 = Some(template.sha256.clone());
        if outcome.accepted {
            return Ok(outcome);
        }
        last = Some(outcome);
    }
    Ok(last.expect("at least one attempt"))
}

/// Measures each candidate and accepts those already in `target`.
pub fn rejection_filter<S: AsRef<str>>(candidates: &[S], target: CmiBucket) -> Vec<GenerationOutcome> {
    candidates
        .iter()
        .map(|c| GenerationOutcome::measure(c.as_ref().to_string(), target, 1))
        .collect()
}

/// A stem rewriter usable by dataset transforms.
pub trait StemGenerator: Sync {
    fn id(&self) -> String;
    fn generate(&self, text: &str, spec: &GenerationSpec) -> Result<GenerationOutcome, GenerateError>;
}

pub struct LexiconGenerator {
    pub lexicon: BilingualLexicon,
}

impl StemGenerator for LexiconGenerator {
    fn id(&self) -> String {
        "lexicon".into()
    }

    fn generate(&self, text: &str, spec: &GenerationSpec) -> Result<GenerationOutcome, GenerateError> {
        substitute(text, &self.lexicon, spec)
    }
}

pub struct EndpointGenerator<C> {
    pub client: C,
    pub template: PromptTemplate,
    pub params: EndpointParams,
}

impl<C: ModelClient> StemGenerator for EndpointGenerator<C> {
    fn id(&self) -> String {
        format!("endpoint:{}", self.template.name)
    }

    fn generate(&self, text: &str, spec: &GenerationSpec) -> Result<GenerationOutcome, GenerateError> {
        generate_via_endpoint(text, &self.client, spec, &self.template, self.params)
    }
}

/// Re-measures an outcome from its text alone.
pub fn verify_outcome(outcome: &GenerationOutcome, target: CmiBucket) -> bool {
    let b = compute_cmi(&tag_utterance(&outcome.text));
    b == outcome.breakdown && bucket_of(b.cmi_percent).ok() == Some(target)
}
