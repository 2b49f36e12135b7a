//! Multiple-choice evaluation: prompt construction, sampled inference with a
//! majority vote per question, per-fold accuracy and cross-fold summaries.

use crate::client::{ChatMessage, ModelClient, SamplingParams};
use crate::dataset::{Label, McqItem};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_SAMPLES: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 16;
pub const DEFAULT_CONCURRENCY: usize = 4;
/// A fold is abandoned when more than this share of items hit transport errors.
pub const MAX_TRANSPORT_FAILURE_RATE: f64 = 0.2;

const INSTRUCTION: &str =
    "Answer the following multiple-choice question. Reply with exactly one option letter (A, B, C, D or E) and nothing else.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("item {id:?} has no {variant} stem")]
    MissingVariant { id: String, variant: PromptVariant },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("fold aborted: {failed} of {total} items failed to reach the model")]
    FoldAborted { failed: usize, total: usize },
    #[error("cannot evaluate an empty fold")]
    EmptyFold,
}

/// Which stem of an item is shown to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    English,
    Hindi,
    #[serde(rename = "codeswitched")]
    CodeSwitched,
}

impl PromptVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::English => "english",
            PromptVariant::Hindi => "hindi",
            PromptVariant::CodeSwitched => "codeswitched",
        }
    }

    fn title(self) -> &'static str {
        match self {
            PromptVariant::English => "English",
            PromptVariant::Hindi => "Hindi",
            PromptVariant::CodeSwitched => "Code-switched",
        }
    }

    pub fn stem(self, item: &McqItem) -> Option<&str> {
        match self {
            PromptVariant::English => Some(&item.stem),
            PromptVariant::Hindi => item.hindi_stem.as_deref(),
            PromptVariant::CodeSwitched => item.cs_stem.as_deref(),
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "english" | "en" => Ok(PromptVariant::English),
            "hindi" | "hi" => Ok(PromptVariant::Hindi),
            "codeswitched" | "code-switched" | "cs" => Ok(PromptVariant::CodeSwitched),
            other => Err(format!("unknown language {other:?} (expected english, hindi or codeswitched)")),
        }
    }
}

/// Instruction line, the stem, then the five choices in label order.
pub fn build_prompt(item: &McqItem, variant: PromptVariant) -> Result<String, EvalError> {
    let stem = variant.stem(item).ok_or_else(|| EvalError::MissingVariant {
        id: item.id.clone(),
        variant,
    })?;
    let mut prompt = format!("{INSTRUCTION}\n\nQuestion: {stem}\n");
    for choice in &item.choices {
        prompt.push_str(&format!("{}) {}\n", choice.label, choice.text));
    }
    prompt.push_str("Answer:");
    Ok(prompt)
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// The first standalone option letter (either case); failing that, the
/// choice whose text occurs earliest verbatim; failing that, `None`.
pub fn parse_answer(completion: &str, item: &McqItem) -> Option<Label> {
    let chars: Vec<char> = completion.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if let Some(label) = Label::from_char(c) {
            let before = i.checked_sub(1).map(|j| chars[j]);
            let after = chars.get(i + 1).copied();
            if !is_word_char(before) && !is_word_char(after) {
                return Some(label);
            }
        }
    }
    item.choices
        .iter()
        .filter(|c| !c.text.is_empty())
        .filter_map(|c| completion.find(&c.text).map(|pos| (pos, std::cmp::Reverse(c.text.len()), c.label)))
        .min()
        .map(|(_, _, label)| label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Majority {
    Answer(Label),
    NoMajorityTie,
    AllUnparseable,
}

impl Majority {
    pub fn label(self) -> Option<Label> {
        match self {
            Majority::Answer(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Majority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Majority::Answer(l) => write!(f, "{l}"),
            Majority::NoMajorityTie => f.write_str("tie"),
            Majority::AllUnparseable => f.write_str("unparseable"),
        }
    }
}

impl FromStr for Majority {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tie" => Ok(Majority::NoMajorityTie),
            "unparseable" => Ok(Majority::AllUnparseable),
            other => other.parse().map(Majority::Answer),
        }
    }
}

impl Serialize for Majority {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Majority {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Plurality over parsed votes, `None` being unparseable. Requires exactly
/// [`DEFAULT_SAMPLES`] votes; see [`majority_vote_n`] for other arities.
pub fn majority_vote(votes: &[Option<Label>]) -> Result<Majority, EvalError> {
    majority_vote_n(votes, DEFAULT_SAMPLES)
}

pub fn majority_vote_n(votes: &[Option<Label>], expected: usize) -> Result<Majority, EvalError> {
    if expected == 0 || votes.len() != expected {
        return Err(EvalError::ContractViolation(format!(
            "expected {expected} votes, got {}",
            votes.len()
        )));
    }
    let mut counts = [0usize; 5];
    for label in votes.iter().flatten() {
        counts[*label as usize] += 1;
    }
    let top = *counts.iter().max().unwrap();
    if top == 0 {
        return Ok(Majority::AllUnparseable);
    }
    let mut leaders = Label::ALL.iter().filter(|l| counts[**l as usize] == top);
    let first = *leaders.next().unwrap();
    Ok(if leaders.next().is_some() {
        Majority::NoMajorityTie
    } else {
        Majority::Answer(first)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub language: PromptVariant,
    pub raw_completions: Vec<String>,
    pub parsed_votes: Vec<Option<Label>>,
    pub majority: Majority,
    pub answer_key: Label,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub config: String,
    pub language: PromptVariant,
    pub fold: usize,
    pub n_items: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

impl FoldResult {
    pub fn new(config: &str, language: PromptVariant, fold: usize, n_items: usize, n_correct: usize) -> Self {
        Self {
            config: config.to_string(),
            language,
            fold,
            n_items,
            n_correct,
            accuracy: if n_items == 0 { 0.0 } else { n_correct as f64 / n_items as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub config_name: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            config_name: "Baseline".into(),
            n_samples: DEFAULT_SAMPLES,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }
}

fn score_item(
    client: &dyn ModelClient,
    item: &McqItem,
    prompt: &str,
    variant: PromptVariant,
    params: &SamplingParams,
) -> EvalRecord {
    let messages = [ChatMessage::user(prompt)];
    let (raw_completions, transport_error) = match client.complete(&messages, params) {
        Ok(c) if c.len() == params.n => (c, None),
        Ok(c) => (
            vec![String::new(); params.n],
            Some(format!("client returned {} completions, expected {}", c.len(), params.n)),
        ),
        Err(e) => (vec![String::new(); params.n], Some(e.to_string())),
    };
    let parsed_votes: Vec<Option<Label>> = raw_completions.iter().map(|c| parse_answer(c, item)).collect();
    let majority = majority_vote_n(&parsed_votes, params.n).expect("vote count equals n");
    EvalRecord {
        id: item.id.clone(),
        language: variant,
        raw_completions,
        parsed_votes,
        majority,
        answer_key: item.answer_key,
        correct: majority == Majority::Answer(item.answer_key),
        transport_error,
    }
}

/// Prompts every item `n_samples` times, votes, and scores against the
/// answer key. Items whose requests fail are scored as unparseable; if more
/// than 20% fail the whole fold is rejected.
pub fn evaluate_fold(
    client: &dyn ModelClient,
    items: &[McqItem],
    variant: PromptVariant,
    fold: usize,
    config: &EvalConfig,
) -> Result<(FoldResult, Vec<EvalRecord>), EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyFold);
    }
    if config.n_samples == 0 {
        return Err(EvalError::ContractViolation("n_samples must be at least 1".into()));
    }
    let prompts = items
        .iter()
        .map(|item| build_prompt(item, variant))
        .collect::<Result<Vec<_>, _>>()?;
    let params = SamplingParams {
        temperature: config.temperature,
        max_tokens: config.max_tokens,
        n: config.n_samples,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency.max(1))
        .build()
        .map_err(|e| EvalError::ContractViolation(e.to_string()))?;
    let records: Vec<EvalRecord> = pool.install(|| {
        use rayon::prelude::*;
        items
            .par_iter()
            .zip(prompts.par_iter())
            .map(|(item, prompt)| score_item(client, item, prompt, variant, &params))
            .collect()
    });

    let failed = records.iter().filter(|r| r.transport_error.is_some()).count();
    if failed as f64 > MAX_TRANSPORT_FAILURE_RATE * records.len() as f64 {
        return Err(EvalError::FoldAborted {
            failed,
            total: records.len(),
        });
    }
    let n_correct = records.iter().filter(|r| r.correct).count();
    Ok((
        FoldResult::new(&config.config_name, variant, fold, records.len(), n_correct),
        records,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub language: PromptVariant,
    pub mean_accuracy: f64,
    /// Sample standard deviation; absent with fewer than two folds.
    pub std_dev: Option<f64>,
    pub fold_accuracies: Vec<f64>,
}

impl SummaryRow {
    pub fn from_folds(config: &str, language: PromptVariant, fold_accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_and_sample_std(&fold_accuracies);
        Self {
            config: config.to_string(),
            language,
            mean_accuracy: mean,
            std_dev: std,
            fold_accuracies,
        }
    }
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, Option<f64>) {
    if values.is_empty() {
        return (0.0, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (mean, std)
}

const KNOWN_CONFIGS: [&str; 5] = ["Baseline", "GPTgen", "CMI1", "CMI2", "CMI3"];

fn config_rank(name: &str) -> usize {
    KNOWN_CONFIGS.iter().position(|c| c.eq_ignore_ascii_case(name)).unwrap_or(KNOWN_CONFIGS.len())
}

/// Groups fold results by (config, language) into mean / sample-std rows.
/// Known configurations come first in their conventional order.
pub fn aggregate(folds: &[FoldResult]) -> Vec<SummaryRow> {
    let mut first_seen: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize, PromptVariant), Vec<&FoldResult>> = BTreeMap::new();
    for f in folds {
        if !first_seen.contains(&f.config.as_str()) {
            first_seen.push(&f.config);
        }
        if f.n_items == 0 {
            log::warn!("skipping empty fold {} of {} / {}", f.fold, f.config, f.language);
            continue;
        }
        let appearance = first_seen.iter().position(|c| *c == f.config).unwrap();
        groups
            .entry((config_rank(&f.config), appearance, f.language))
            .or_default()
            .push(f);
    }
    groups
        .into_values()
        .map(|mut group| {
            group.sort_by_key(|f| f.fold);
            let accs = group.iter().map(|f| f.accuracy).collect();
            SummaryRow::from_folds(&group[0].config, group[0].language, accs)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub config: String,
    pub english: Option<f64>,
    pub hindi: Option<f64>,
    /// English minus Hindi mean accuracy, in percentage points.
    pub gap_points: Option<f64>,
    /// This config's gap minus the Baseline gap, in percentage points.
    pub delta_vs_baseline: Option<f64>,
    pub complete: bool,
}

pub fn gap_report(rows: &[SummaryRow]) -> Vec<GapRow> {
    let mut configs: Vec<&str> = Vec::new();
    for r in rows {
        if !configs.contains(&r.config.as_str()) {
            configs.push(&r.config);
        }
    }
    let lookup = |config: &str, lang: PromptVariant| {
        rows.iter()
            .find(|r| r.config == config && r.language == lang)
            .map(|r| r.mean_accuracy * 100.0)
    };
    let mut out: Vec<GapRow> = configs
        .iter()
        .map(|&config| {
            let english = lookup(config, PromptVariant::English);
            let hindi = lookup(config, PromptVariant::Hindi);
            let gap_points = english.zip(hindi).map(|(e, h)| e - h);
            GapRow {
                config: config.to_string(),
                english,
                hindi,
                gap_points,
                delta_vs_baseline: None,
                complete: gap_points.is_some(),
            }
        })
        .collect();
    let baseline_gap = out
        .iter()
        .find(|g| g.config.eq_ignore_ascii_case("baseline"))
        .and_then(|g| g.gap_points);
    for g in &mut out {
        g.delta_vs_baseline = g.gap_points.zip(baseline_gap).map(|(a, b)| a - b);
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn points(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

/// Column headers and the two Table-1-style rows (mean, std) as display strings.
fn wide_table(rows: &[SummaryRow]) -> (Vec<String>, Vec<String>, Vec<String>) {
    let headers = rows.iter().map(|r| format!("{} {}", r.config, r.language.title())).collect();
    let means = rows.iter().map(|r| pct(r.mean_accuracy)).collect();
    let stds = rows.iter().map(|r| r.std_dev.map(pct).unwrap_or_default()).collect();
    (headers, means, stds)
}

pub fn render_markdown(rows: &[SummaryRow]) -> String {
    let (headers, means, stds) = wide_table(rows);
    let mut s = String::new();
    s.push_str(&format!("| | {} |\n", headers.join(" | ")));
    s.push_str(&format!("|---|{}\n", "---|".repeat(headers.len())));
    s.push_str(&format!("| Mean Accuracy | {} |\n", means.join(" | ")));
    s.push_str(&format!("| Std Dev (%) | {} |\n", stds.join(" | ")));

    let gaps = gap_report(rows);
    s.push_str("\n| Config | English | Hindi | Gap (pts) | Gap change vs Baseline (pts) |\n");
    s.push_str("|---|---|---|---|---|\n");
    for g in gaps {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}%")).unwrap_or_else(|| "n/a".into());
        let gap = if g.complete { points(g.gap_points) } else { "incomplete".into() };
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            g.config,
            cell(g.english),
            cell(g.hindi),
            gap,
            points(g.delta_vs_baseline)
        ));
    }
    s
}

pub fn render_csv(rows: &[SummaryRow]) -> Result<String, csv::Error> {
    let (headers, means, stds) = wide_table(rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("metric".to_string()).chain(headers))?;
    w.write_record(std::iter::once("Mean Accuracy".to_string()).chain(means))?;
    w.write_record(std::iter::once("Std Dev (%)".to_string()).chain(stds))?;
    let bytes = w.into_inner().map_err(|e| csv::Error::from(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
