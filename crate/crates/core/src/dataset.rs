//! CommonSenseQA-style JSONL datasets: ingestion, question-only code-switching,
//! QA review sampling, k-fold splitting and aligned Hindi test sets.

use crate::cmi::{bucket_of, CmiBucket};
use crate::generate::{GenerationSpec, StemGenerator};
use crate::util::{created_at, derive_seed, rng, TOOL_VERSION};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Reserved id of the provenance header line.
pub const MANIFEST_ID: &str = "__manifest__";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {msg}")]
    Parse { line: usize, msg: String },
    #[error("item {id:?} (line {line}): {msg}")]
    Schema { id: String, line: usize, msg: String },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("translated set is not aligned with the base set at id {id:?}: {msg}")]
    Alignment { id: String, msg: String },
    #[error("cannot split {items} items into {k} folds")]
    InsufficientItems { items: usize, k: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("generator failed on {failed} of {total} items (more than half); check the lexicon or endpoint")]
    AbortThresholdExceeded { failed: usize, total: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    C,
    D,
    E,
}

impl Label {
    pub const ALL: [Label; 5] = [Label::A, Label::B, Label::C, Label::D, Label::E];

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_char(c: char) -> Option<Label> {
        match c.to_ascii_uppercase() {
            'A' => Some(Label::A),
            'B' => Some(Label::B),
            'C' => Some(Label::C),
            'D' => Some(Label::D),
            'E' => Some(Label::E),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Label::from_char(c).ok_or_else(|| format!("bad label {s:?}")),
            _ => Err(format!("bad label {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    English,
    Hindi,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::English => "english",
            Language::Hindi => "hindi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Choice {
    pub label: Label,
    pub text: String,
}

/// One five-way multiple-choice question.
///
/// `raw` keeps the object exactly as ingested so unknown fields survive;
/// the typed fields mirror it and the code-switching fields are layered on
/// top when the item is written back out.
#[derive(Debug, Clone, PartialEq)]
pub struct McqItem {
    pub id: String,
    pub stem: String,
    pub choices: Vec<Choice>,
    pub answer_key: Label,
    pub cs_stem: Option<String>,
    pub cmi: Option<f64>,
    pub bucket: Option<CmiBucket>,
    pub generator: Option<String>,
    pub hindi_stem: Option<String>,
    raw: Map<String, Value>,
}

const EXTENSION_KEYS: [&str; 5] = ["cs_stem", "cmi", "bucket", "generator", "hindi_stem"];

impl McqItem {
    /// Builds an item in the CommonSenseQA layout.
    pub fn new(id: &str, stem: &str, choices: [&str; 5], answer_key: Label) -> Self {
        let choice_values: Vec<Value> = Label::ALL
            .iter()
            .zip(choices)
            .map(|(l, t)| serde_json::json!({"label": l.to_string(), "text": t}))
            .collect();
        let raw = serde_json::json!({
            "id": id,
            "question": {"stem": stem, "choices": choice_values},
            "answerKey": answer_key.to_string(),
        });
        Self::from_value(raw, 0).expect("constructed item is valid")
    }

    pub fn choice_text(&self, label: Label) -> &str {
        &self.choices[label as usize].text
    }

    pub fn from_value(value: Value, line: usize) -> Result<Self, DatasetError> {
        let Value::Object(raw) = value else {
            return Err(DatasetError::Parse {
                line,
                msg: "expected a JSON object".into(),
            });
        };
        let id = match raw.get("id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            _ => {
                return Err(DatasetError::Schema {
                    id: "<missing>".into(),
                    line,
                    msg: "missing string field `id`".into(),
                })
            }
        };
        let schema = |msg: String| DatasetError::Schema {
            id: id.clone(),
            line,
            msg,
        };
        let question = raw.get("question").and_then(Value::as_object).ok_or_else(|| schema("missing `question` object".into()))?;
        let stem = question
            .get("stem")
            .and_then(Value::as_str)
            .ok_or_else(|| schema("missing `question.stem`".into()))?
            .to_string();
        let raw_choices = question
            .get("choices")
            .and_then(Value::as_array)
            .ok_or_else(|| schema("missing `question.choices`".into()))?;
        if raw_choices.len() != 5 {
            return Err(schema(format!("expected 5 choices, found {}", raw_choices.len())));
        }
        let mut choices = Vec::with_capacity(5);
        for c in raw_choices {
            let label = c
                .get("label")
                .and_then(Value::as_str)
                .and_then(|s| s.parse::<Label>().ok())
                .ok_or_else(|| schema(format!("choice with bad label: {c}")))?;
            let text = c
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| schema(format!("choice {label} has no text")))?;
            choices.push(Choice {
                label,
                text: text.to_string(),
            });
        }
        choices.sort_by_key(|c| c.label);
        if choices.iter().map(|c| c.label).ne(Label::ALL) {
            return Err(schema("choice labels must be exactly A, B, C, D, E".into()));
        }
        let answer_key = raw
            .get("answerKey")
            .and_then(Value::as_str)
            .ok_or_else(|| schema("missing `answerKey`".into()))?
            .parse::<Label>()
            .map_err(schema)?;

        let opt_str = |key: &str| raw.get(key).and_then(Value::as_str).map(str::to_string);
        let cs_stem = opt_str("cs_stem");
        let cmi = raw.get("cmi").and_then(Value::as_f64);
        let bucket = match raw.get("bucket").and_then(Value::as_str) {
            Some(b) => Some(b.parse::<CmiBucket>().map_err(|e| schema(e.to_string()))?),
            None => None,
        };
        if cs_stem.is_some() {
            let (Some(cmi), Some(bucket)) = (cmi, bucket) else {
                return Err(schema("`cs_stem` present without `cmi` and `bucket`".into()));
            };
            if bucket_of(cmi).ok() != Some(bucket) {
                return Err(schema(format!("cmi {cmi} is not in bucket {bucket}")));
            }
        }
        Ok(McqItem {
            id,
            stem,
            choices,
            answer_key,
            cs_stem,
            cmi,
            bucket,
            generator: opt_str("generator"),
            hindi_stem: opt_str("hindi_stem"),
            raw,
        })
    }

    /// The ingested object extended with any code-switching fields.
    pub fn to_value(&self) -> Value {
        let mut obj = self.raw.clone();
        for key in EXTENSION_KEYS {
            obj.shift_remove(key);
        }
        if let Some(Value::Object(q)) = obj.get_mut("question") {
            q.insert("stem".into(), self.stem.clone().into());
        }
        if let Some(s) = &self.cs_stem {
            obj.insert("cs_stem".into(), s.clone().into());
        }
        if let Some(c) = self.cmi {
            obj.insert("cmi".into(), c.into());
        }
        if let Some(b) = self.bucket {
            obj.insert("bucket".into(), b.as_str().into());
        }
        if let Some(g) = &self.generator {
            obj.insert("generator".into(), g.clone().into());
        }
        if let Some(h) = &self.hindi_stem {
            obj.insert("hindi_stem".into(), h.clone().into());
        }
        Value::Object(obj)
    }

    /// The `question.choices` and `answerKey` values as ingested.
    pub fn answer_fields(&self) -> (Option<&Value>, Option<&Value>) {
        (
            self.raw.get("question").and_then(|q| q.get("choices")),
            self.raw.get("answerKey"),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_path: String,
    #[serde(default)]
    pub generator_id: Option<String>,
    #[serde(default)]
    pub target_bucket: Option<CmiBucket>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub created_at: String,
    pub tool_version: String,
    #[serde(default = "default_language")]
    pub language: Language,
}

fn default_language() -> Language {
    Language::English
}

impl Provenance {
    pub fn new(source_path: impl Into<String>) -> Self {
        Self {
            source_path: source_path.into(),
            generator_id: None,
            target_bucket: None,
            seed: None,
            created_at: created_at(),
            tool_version: TOOL_VERSION.to_string(),
            language: Language::English,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub items: Vec<McqItem>,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn new(items: Vec<McqItem>, provenance: Provenance) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(DatasetError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Self { items, provenance })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn language(&self) -> Language {
        self.provenance.language
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, DatasetError> {
        let mut provenance = None;
        let mut items = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            if value.get("id").and_then(Value::as_str) == Some(MANIFEST_ID) {
                let p = value.get("provenance").cloned().unwrap_or(Value::Null);
                provenance = Some(serde_json::from_value(p).map_err(|e| DatasetError::Parse {
                    line: lineno,
                    msg: format!("bad provenance header: {e}"),
                })?);
                continue;
            }
            items.push(McqItem::from_value(value, lineno)?);
        }
        Self::new(items, provenance.unwrap_or_else(|| Provenance::new(source)))
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = std::io::BufWriter::new(file);
        let header = serde_json::json!({"id": MANIFEST_ID, "provenance": self.provenance});
        let mut emit = |v: &Value| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, v)?;
            w.write_all(b"\n")
        };
        emit(&header).map_err(io_err(path))?;
        for item in &self.items {
            emit(&item.to_value()).map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Items whose id is in `ids`, in manifest order.
    pub fn subset(&self, keep: impl Fn(&McqItem) -> bool) -> DatasetManifest {
        DatasetManifest {
            items: self.items.iter().filter(|i| keep(i)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}

pub fn load_csqa(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err(path))?);
        text.push('\n');
    }
    DatasetManifest::parse(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub id: String,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeswitchOutput {
    pub manifest: DatasetManifest,
    pub dropped: Vec<DroppedItem>,
}

/// Rewrites every question stem with `generator`; choices and answer keys
/// are carried over untouched. Items the generator cannot place in the
/// target bucket are dropped and reported.
pub fn codeswitch_dataset(
    manifest: &DatasetManifest,
    generator: &dyn StemGenerator,
    spec: &GenerationSpec,
    concurrency: usize,
) -> Result<CodeswitchOutput, DatasetError> {
    spec.validate().map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;
    if let Some(item) = manifest.items.iter().find(|i| i.cs_stem.is_some()) {
        return Err(DatasetError::Schema {
            id: item.id.clone(),
            line: 0,
            msg: "item already has a code-switched stem".into(),
        });
    }
    let generator_id = generator.id();
    let run = |item: &McqItem| {
        let mut item_spec = spec.clone();
        item_spec.seed = derive_seed(spec.seed, &item.id);
        generator.generate(&item.stem, &item_spec)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| DatasetError::InvalidArgument(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        manifest.items.par_iter().map(run).collect()
    });

    let mut items = Vec::with_capacity(manifest.len());
    let mut dropped = Vec::new();
    for (item, outcome) in manifest.items.iter().zip(outcomes) {
        match outcome {
            Ok(o) if o.accepted || !spec.enforce_bucket => {
                let mut out = item.clone();
                out.bucket = Some(o.breakdown.bucket());
                out.cmi = Some(o.breakdown.cmi_percent);
                out.cs_stem = Some(o.text);
                out.generator = Some(generator_id.clone());
                items.push(out);
            }
            Ok(o) => {
                log::info!("dropping {}: cmi {:.1} after {} attempts", item.id, o.breakdown.cmi_percent, o.attempts_used);
                dropped.push(DroppedItem {
                    id: item.id.clone(),
                    reason: format!("not in {} bucket after {} attempts", spec.target_bucket, o.attempts_used),
                    cmi: Some(o.breakdown.cmi_percent),
                });
            }
            Err(e) => {
                log::info!("dropping {}: {e}", item.id);
                dropped.push(DroppedItem {
                    id: item.id.clone(),
                    reason: e.to_string(),
                    cmi: None,
                });
            }
        }
    }
    let total = manifest.len();
    if dropped.len() * 2 > total {
        return Err(DatasetError::AbortThresholdExceeded {
            failed: dropped.len(),
            total,
        });
    }
    let provenance = Provenance {
        generator_id: Some(generator_id),
        target_bucket: Some(spec.target_bucket),
        seed: Some(spec.seed),
        ..Provenance::new(manifest.provenance.source_path.clone())
    };
    Ok(CodeswitchOutput {
        manifest: DatasetManifest { items, provenance },
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub batch: usize,
    pub id: String,
    pub stem: String,
    pub cs_stem: String,
}

/// One seeded pick from each consecutive batch of `batch_size` items.
pub fn qa_sample(manifest: &DatasetManifest, batch_size: usize, seed: u64) -> Result<Vec<ReviewRow>, DatasetError> {
    if batch_size == 0 {
        return Err(DatasetError::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut r = rng(seed);
    Ok(manifest
        .items
        .chunks(batch_size)
        .enumerate()
        .map(|(batch, chunk)| {
            let item = &chunk[r.gen_range(0..chunk.len())];
            ReviewRow {
                batch,
                id: item.id.clone(),
                stem: item.stem.clone(),
                cs_stem: item.cs_stem.clone().unwrap_or_default(),
            }
        })
        .collect())
}

pub fn write_review_csv(rows: &[ReviewRow], path: &Path) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn ids_in(&self, fold: usize) -> HashSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse { line: e.line(), msg: e.to_string() })
    }
}

/// Seeded shuffle, then round-robin assignment to `k` folds.
pub fn kfold_split(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidArgument("k must be at least 1".into()));
    }
    if manifest.len() < k {
        return Err(DatasetError::InsufficientItems {
            items: manifest.len(),
            k,
        });
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut rng(seed));
    let assignment = order
        .into_iter()
        .enumerate()
        .map(|(pos, idx)| (manifest.items[idx].id.clone(), pos % k))
        .collect();
    Ok(FoldAssignment { k, seed, assignment })
}

/// Attaches the Hindi stems from `path` to a copy of `base`. Ids and answer
/// keys must match one-to-one.
pub fn import_translated(path: &Path, base: &DatasetManifest) -> Result<DatasetManifest, DatasetError> {
    let translated = load_csqa(path)?;
    align_translated(&translated, base)
}

pub fn align_translated(translated: &DatasetManifest, base: &DatasetManifest) -> Result<DatasetManifest, DatasetError> {
    let by_id: HashMap<&str, &McqItem> = translated.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let base_ids: HashSet<&str> = base.items.iter().map(|i| i.id.as_str()).collect();
    if let Some(extra) = translated.items.iter().find(|i| !base_ids.contains(i.id.as_str())) {
        return Err(DatasetError::Alignment {
            id: extra.id.clone(),
            msg: "id not present in the base set".into(),
        });
    }
    let mut items = Vec::with_capacity(base.len());
    for item in &base.items {
        let Some(hi) = by_id.get(item.id.as_str()) else {
            return Err(DatasetError::Alignment {
                id: item.id.clone(),
                msg: "missing from the translated set".into(),
            });
        };
        if hi.answer_key != item.answer_key {
            return Err(DatasetError::Alignment {
                id: item.id.clone(),
                msg: format!("answer key {} differs from base {}", hi.answer_key, item.answer_key),
            });
        }
        let mut out = item.clone();
        out.hindi_stem = Some(hi.stem.clone());
        items.push(out);
    }
    let provenance = Provenance {
        language: Language::Hindi,
        ..base.provenance.clone()
    };
    Ok(DatasetManifest { items, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmi::CmiBucket;
    use crate::generate::{GenerateError, GenerationOutcome, GeneratorKind};

    const LINE: &str = r#"{"answerKey":"A","id":"q1","question":{"question_concept":"x","choices":[{"label":"A","text":"ignore"},{"label":"B","text":"enforce"},{"label":"C","text":"authoritarian"},{"label":"D","text":"yell at"},{"label":"E","text":"avoid"}],"stem":"The sanctions against the school were a punishing blow."}}"#;

    fn line_with(id: &str) -> String {
        LINE.replace("\"q1\"", &format!("\"{id}\""))
    }

    fn items(n: usize) -> DatasetManifest {
        let items = (0..n)
            .map(|i| McqItem::new(&format!("q{i}"), "where is the bank", ["a", "b", "c", "d", "e"], Label::ALL[i % 5]))
            .collect();
        DatasetManifest::new(items, Provenance::new("mem")).unwrap()
    }

    struct Identity;
    impl StemGenerator for Identity {
        fn id(&self) -> String {
            "identity".into()
        }
        fn generate(&self, text: &str, spec: &GenerationSpec) -> Result<GenerationOutcome, GenerateError> {
            Ok(crate::generate::rejection_filter(&[text], spec.target_bucket).remove(0))
        }
    }

    struct Fixed(&'static str);
    impl StemGenerator for Fixed {
        fn id(&self) -> String {
            "fixed".into()
        }
        fn generate(&self, _: &str, spec: &GenerationSpec) -> Result<GenerationOutcome, GenerateError> {
            Ok(crate::generate::rejection_filter(&[self.0], spec.target_bucket).remove(0))
        }
    }

    struct Failing;
    impl StemGenerator for Failing {
        fn id(&self) -> String {
            "failing".into()
        }
        fn generate(&self, text: &str, _: &GenerationSpec) -> Result<GenerationOutcome, GenerateError> {
            Err(GenerateError::UncoverableSentence(text.into()))
        }
    }

    fn spec(b: CmiBucket) -> GenerationSpec {
        GenerationSpec::new(b, GeneratorKind::Lexicon, 1)
    }

    #[test]
    fn parses_csqa_lines_and_preserves_extras() {
        let text = format!("{}\n{}\n\n{}\n", line_with("a"), line_with("b"), line_with("c"));
        let m = DatasetManifest::parse(&text, "t").unwrap();
        assert_eq!(m.len(), 3);
        let item = &m.items[0];
        assert_eq!(item.choice_text(Label::D), "yell at");
        assert_eq!(item.answer_key, Label::A);
        assert_eq!(item.to_value()["question"]["question_concept"], "x");
        let original: Value = serde_json::from_str(&line_with("a")).unwrap();
        assert_eq!(item.to_value(), original);
    }

    #[test]
    fn four_choices_is_schema_error() {
        let bad = LINE.replace(r#",{"label":"E","text":"avoid"}"#, "");
        let err = DatasetManifest::parse(&format!("{}\n{bad}", line_with("ok")), "t").unwrap_err();
        match err {
            DatasetError::Schema { id, line, .. } => assert_eq!((id.as_str(), line), ("q1", 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_schema_errors() {
        let no_key = LINE.replace(r#""answerKey":"A","#, "");
        assert!(matches!(DatasetManifest::parse(&no_key, "t"), Err(DatasetError::Schema { .. })));
        let dup_label = LINE.replace(r#""label":"E""#, r#""label":"D""#);
        assert!(matches!(DatasetManifest::parse(&dup_label, "t"), Err(DatasetError::Schema { .. })));
        let bad_key = LINE.replace(r#""answerKey":"A""#, r#""answerKey":"F""#);
        assert!(matches!(DatasetManifest::parse(&bad_key, "t"), Err(DatasetError::Schema { .. })));
        let err = DatasetManifest::parse("{\"id\": ", "t").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
        let twice = format!("{LINE}\n{LINE}");
        assert!(matches!(DatasetManifest::parse(&twice, "t"), Err(DatasetError::DuplicateId(_))));
        let inconsistent = LINE.replace(r#""id":"q1""#, r#""id":"q1","cs_stem":"x","cmi":40.0,"bucket":"low""#);
        assert!(matches!(DatasetManifest::parse(&inconsistent, "t"), Err(DatasetError::Schema { .. })));
    }

    #[test]
    fn write_then_load_roundtrip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut m = items(3);
        m.provenance.seed = Some(9);
        m.write(&path).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(r#"{"id":"__manifest__""#));
        let back = load_csqa(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_csqa(Path::new("/nonexistent/x.jsonl")), Err(DatasetError::Io { .. })));
    }

    #[test]
    fn identity_generator_low() {
        let m = items(4);
        let out = codeswitch_dataset(&m, &Identity, &spec(CmiBucket::Low), 2).unwrap();
        assert_eq!(out.manifest.len(), 4);
        for (a, b) in out.manifest.items.iter().zip(&m.items) {
            assert_eq!(a.cs_stem.as_deref(), Some(b.stem.as_str()));
            assert_eq!(a.cmi, Some(0.0));
            assert_eq!(a.bucket, Some(CmiBucket::Low));
            assert_eq!(a.answer_fields(), b.answer_fields());
            assert_eq!(a.choices, b.choices);
        }
        assert_eq!(out.manifest.provenance.target_bucket, Some(CmiBucket::Low));
    }

    #[test]
    fn fixed_mix_generator_high() {
        let m = items(3);
        let out = codeswitch_dataset(&m, &Fixed("मैं market गया , fresh फल और milk bread ."), &spec(CmiBucket::High), 1).unwrap();
        assert!(out.dropped.is_empty());
        assert!(out.manifest.items.iter().all(|i| i.cmi == Some(50.0)));
    }

    #[test]
    fn rejected_items_are_dropped_and_threshold_enforced() {
        let m = items(4);
        let err = codeswitch_dataset(&m, &Failing, &spec(CmiBucket::Low), 1).unwrap_err();
        assert!(matches!(err, DatasetError::AbortThresholdExceeded { failed: 4, total: 4 }));

        // exactly half failing is tolerated; the failures are listed
        struct FailOn;
        impl StemGenerator for FailOn {
            fn id(&self) -> String {
                "fail-on".into()
            }
            fn generate(&self, text: &str, spec: &GenerationSpec) -> Result<GenerationOutcome, GenerateError> {
                let out = if text == "bad" { "मैं market गया" } else { text };
                Ok(crate::generate::rejection_filter(&[out], spec.target_bucket).remove(0))
            }
        }
        let mut m = items(4);
        m.items[0].stem = "bad".into();
        m.items[2].stem = "bad".into();
        let out = codeswitch_dataset(&m, &FailOn, &spec(CmiBucket::Low), 1).unwrap();
        assert_eq!(out.manifest.items.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["q1", "q3"]);
        assert_eq!(out.dropped.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["q0", "q2"]);
        m.items[1].stem = "bad".into();
        assert!(matches!(
            codeswitch_dataset(&m, &FailOn, &spec(CmiBucket::Low), 1),
            Err(DatasetError::AbortThresholdExceeded { failed: 3, total: 4 })
        ));
    }

    #[test]
    fn already_switched_input_rejected() {
        let mut m = items(1);
        m.items[0].cs_stem = Some("x".into());
        assert!(codeswitch_dataset(&m, &Identity, &spec(CmiBucket::Low), 1).is_err());
    }

    #[test]
    fn qa_sample_cadence() {
        assert_eq!(qa_sample(&items(1200), 50, 3).unwrap().len(), 24);
        assert_eq!(qa_sample(&items(49), 50, 3).unwrap().len(), 1);
        assert_eq!(qa_sample(&items(101), 50, 3).unwrap().len(), 3);
        let a = qa_sample(&items(300), 50, 11).unwrap();
        assert_eq!(a, qa_sample(&items(300), 50, 11).unwrap());
        for row in &a {
            let idx: usize = row.id[1..].parse().unwrap();
            assert_eq!(idx / 50, row.batch);
        }
        let every = qa_sample(&items(7), 1, 0).unwrap();
        assert_eq!(every.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["q0", "q1", "q2", "q3", "q4", "q5", "q6"]);
        assert!(qa_sample(&items(3), 0, 0).is_err());
    }

    #[test]
    fn review_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_review_csv(&qa_sample(&items(60), 50, 0).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("batch,id,stem,cs_stem\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn kfold_sizes() {
        let f = kfold_split(&items(250), 5, 42).unwrap();
        assert_eq!(f.sizes(), [50; 5]);
        let mut sizes = kfold_split(&items(7), 5, 1).unwrap().sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, [2, 2, 1, 1, 1]);
        assert!(matches!(kfold_split(&items(3), 5, 0), Err(DatasetError::InsufficientItems { items: 3, k: 5 })));
        assert!(kfold_split(&items(3), 0, 0).is_err());
        assert_eq!(kfold_split(&items(250), 5, 42).unwrap(), f);
        assert_ne!(kfold_split(&items(250), 5, 43).unwrap(), f);
    }

    fn write_file(dir: &Path, name: &str, lines: &[String]) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        p
    }

    #[test]
    fn translated_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let base = DatasetManifest::parse(&[line_with("a"), line_with("b"), line_with("c")].join("\n"), "b").unwrap();
        let hi = |id: &str| line_with(id).replace("The sanctions against the school were a punishing blow.", "स्कूल पर लगे प्रतिबंध एक कड़ा झटका थे।");

        let ok = write_file(dir.path(), "ok.jsonl", &[hi("c"), hi("a"), hi("b")]);
        let m = import_translated(&ok, &base).unwrap();
        assert_eq!(m.language(), Language::Hindi);
        assert_eq!(m.items.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(m.items.iter().all(|i| i.hindi_stem.as_deref().unwrap().contains("स्कूल")));
        assert!(m.items.iter().zip(&base.items).all(|(x, y)| x.answer_key == y.answer_key && x.choices == y.choices));

        let missing = write_file(dir.path(), "missing.jsonl", &[hi("a"), hi("b")]);
        match import_translated(&missing, &base).unwrap_err() {
            DatasetError::Alignment { id, .. } => assert_eq!(id, "c"),
            e => panic!("{e}"),
        }
        let extra = write_file(dir.path(), "extra.jsonl", &[hi("a"), hi("b"), hi("c"), hi("zz")]);
        assert!(matches!(import_translated(&extra, &base), Err(DatasetError::Alignment { .. })));
    }

    #[test]
    fn label_parsing() {
        assert_eq!("C".parse::<Label>(), Ok(Label::C));
        assert!("c".parse::<Label>().is_err());
        assert!("AB".parse::<Label>().is_err());
        assert_eq!(Label::E.to_string(), "E");
    }
}
