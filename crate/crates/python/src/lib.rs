//! Python bindings for `csforge_core`.
//!
//! Structured values cross the boundary as plain dicts and lists (through
//! the `json` module) so the Python side never sees Rust types it cannot
//! pickle.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(value_err)
}

#[pymodule]
mod csforge {
    use super::*;
    use csforge_core::client::mock::OracleClient;
    use csforge_core::cmi::{self, CmiBucket};
    use csforge_core::dataset::{self, DatasetManifest, Label, McqItem};
    use csforge_core::eval::{self, EvalConfig, FoldResult, PromptVariant, SummaryRow};
    use csforge_core::generate::{self, GenerationSpec, GeneratorKind, LexiconGenerator};
    use csforge_core::langid;
    use csforge_core::training::{self, TrainConfigOverrides};

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        m.add("__version__", csforge_core::util::TOOL_VERSION)?;
        m.add("BUCKET_CONVENTION", cmi::BUCKET_CONVENTION)
    }

    /// Tokens of `text` as `(token, (start, end))` with byte offsets.
    #[pyfunction]
    fn tokenize(text: &str) -> Vec<(String, (usize, usize))> {
        langid::tokenize(text).into_iter().map(|t| (t.text, t.span)).collect()
    }

    /// `"hindi"`, `"english"` or `"independent"`.
    #[pyfunction]
    fn classify_token(token: &str) -> &'static str {
        langid::classify_token(token).as_str()
    }

    #[pyfunction]
    fn tag_utterance(text: &str) -> Vec<(String, &'static str)> {
        langid::tag_utterance(text)
            .tokens
            .into_iter()
            .map(|t| (t.token.text, t.tag.as_str()))
            .collect()
    }

    /// Per-tag counts plus `n`, `u`, `max_w`, `cmi_percent` and `bucket`.
    #[pyfunction]
    fn compute_cmi<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let b = cmi::compute_cmi(&langid::tag_utterance(text));
        let out = to_py(py, &b)?;
        out.set_item("bucket", b.bucket().as_str())?;
        Ok(out)
    }

    #[pyfunction]
    fn bucket_of(cmi_percent: f64) -> PyResult<&'static str> {
        cmi::bucket_of(cmi_percent).map(CmiBucket::as_str).map_err(value_err)
    }

    /// Corpus statistics over `(id, text)` pairs.
    #[pyfunction]
    fn corpus_stats<'py>(py: Python<'py>, utterances: Vec<(String, String)>) -> PyResult<Bound<'py, PyAny>> {
        let tagged: Vec<(String, langid::TaggedUtterance)> =
            utterances.into_iter().map(|(id, t)| (id, langid::tag_utterance(&t))).collect();
        to_py(py, &cmi::corpus_stats(tagged.iter().map(|(id, u)| (id.as_str(), u))))
    }

    /// English-to-Hindi word lexicon for substitution.
    #[pyclass(module = "csforge", frozen)]
    struct Lexicon {
        inner: generate::BilingualLexicon,
    }

    #[pymethods]
    impl Lexicon {
        #[new]
        #[pyo3(signature = (tsv = ""))]
        fn new(tsv: &str) -> PyResult<Self> {
            Ok(Self {
                inner: generate::BilingualLexicon::from_tsv(tsv).map_err(value_err)?,
            })
        }

        #[staticmethod]
        fn load(path: &str) -> PyResult<Self> {
            Ok(Self {
                inner: generate::BilingualLexicon::load(std::path::Path::new(path)).map_err(value_err)?,
            })
        }

        fn get(&self, word: &str) -> Option<String> {
            self.inner.get(word).map(str::to_string)
        }

        fn __len__(&self) -> usize {
            self.inner.len()
        }

        fn __contains__(&self, word: &str) -> bool {
            self.inner.get(word).is_some()
        }

        /// Substitutes words so the sentence lands in `bucket`; returns the outcome dict.
        #[pyo3(signature = (sentence, bucket, seed = 0, max_attempts = 8))]
        fn substitute<'py>(
            &self,
            py: Python<'py>,
            sentence: &str,
            bucket: &str,
            seed: u64,
            max_attempts: u32,
        ) -> PyResult<Bound<'py, PyAny>> {
            let mut spec = GenerationSpec::new(parse(bucket)?, GeneratorKind::Lexicon, seed);
            spec.max_attempts = max_attempts;
            let out = generate::substitute(sentence, &self.inner, &spec).map_err(value_err)?;
            to_py(py, &out)
        }
    }

    /// A loaded multiple-choice dataset.
    #[pyclass(module = "csforge", frozen)]
    struct Dataset {
        inner: DatasetManifest,
    }

    #[pymethods]
    impl Dataset {
        #[staticmethod]
        fn load(path: &str) -> PyResult<Self> {
            let inner = dataset::load_csqa(std::path::Path::new(path)).map_err(value_err)?;
            Ok(Self { inner })
        }

        #[staticmethod]
        #[pyo3(signature = (text, source = "<memory>"))]
        fn parse(text: &str, source: &str) -> PyResult<Self> {
            Ok(Self {
                inner: DatasetManifest::parse(text, source).map_err(value_err)?,
            })
        }

        fn write(&self, path: &str) -> PyResult<()> {
            self.inner
                .write(std::path::Path::new(path))
                .map_err(|e| PyIOError::new_err(e.to_string()))
        }

        fn __len__(&self) -> usize {
            self.inner.len()
        }

        #[getter]
        fn ids(&self) -> Vec<String> {
            self.inner.items.iter().map(|i| i.id.clone()).collect()
        }

        #[getter]
        fn provenance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
            to_py(py, &self.inner.provenance)
        }

        /// The item as it would be written, as a dict.
        fn item<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyAny>> {
            let item = self
                .inner
                .items
                .get(index)
                .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(index))?;
            to_py(py, &item.to_value())
        }

        /// Code-switches every stem; returns `(dataset, dropped)`.
        #[pyo3(signature = (lexicon, bucket, seed = 0, concurrency = 4))]
        fn codeswitch<'py>(
            &self,
            py: Python<'py>,
            lexicon: &Lexicon,
            bucket: &str,
            seed: u64,
            concurrency: usize,
        ) -> PyResult<(Dataset, Bound<'py, PyAny>)> {
            let spec = GenerationSpec::new(parse(bucket)?, GeneratorKind::Lexicon, seed);
            let generator = LexiconGenerator {
                lexicon: lexicon.inner.clone(),
            };
            let out = py
                .detach(|| dataset::codeswitch_dataset(&self.inner, &generator, &spec, concurrency))
                .map_err(value_err)?;
            Ok((Dataset { inner: out.manifest }, to_py(py, &out.dropped)?))
        }

        /// `{id: fold}` for a seeded k-fold split.
        #[pyo3(signature = (k = 5, seed = 0))]
        fn kfold<'py>(&self, py: Python<'py>, k: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
            let folds = dataset::kfold_split(&self.inner, k, seed).map_err(value_err)?;
            to_py(py, &folds.assignment)
        }

        #[pyo3(signature = (batch_size = 50, seed = 0))]
        fn qa_sample<'py>(&self, py: Python<'py>, batch_size: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
            to_py(py, &dataset::qa_sample(&self.inner, batch_size, seed).map_err(value_err)?)
        }

        /// Scores the dataset against an offline oracle answering correctly with
        /// probability `accuracy`; returns `(fold_result, records)`.
        #[pyo3(signature = (language = "english", accuracy = 1.0, seed = 0, fold = 0, config = "Baseline", samples = 5))]
        #[allow(clippy::too_many_arguments)]
        fn evaluate_oracle<'py>(
            &self,
            py: Python<'py>,
            language: &str,
            accuracy: f64,
            seed: u64,
            fold: usize,
            config: &str,
            samples: usize,
        ) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
            let variant: PromptVariant = parse(language)?;
            let client = OracleClient::new(&self.inner.items, variant, accuracy, seed);
            let cfg = EvalConfig {
                config_name: config.to_string(),
                n_samples: samples,
                ..EvalConfig::default()
            };
            let (result, records) = py
                .detach(|| eval::evaluate_fold(&client, &self.inner.items, variant, fold, &cfg))
                .map_err(value_err)?;
            Ok((to_py(py, &result)?, to_py(py, &records)?))
        }

        /// Writes `train.jsonl` and `train_config.json` for all folds but `held_out`.
        #[pyo3(signature = (folds, held_out, out_dir, variant = "codeswitched", overrides = None))]
        fn emit_train<'py>(
            &self,
            py: Python<'py>,
            folds: &Bound<'py, PyAny>,
            held_out: usize,
            out_dir: &str,
            variant: &str,
            overrides: Option<&Bound<'py, PyAny>>,
        ) -> PyResult<Bound<'py, PyAny>> {
            let assignment: std::collections::BTreeMap<String, usize> = from_py(folds)?;
            let k = assignment.values().max().map_or(0, |m| m + 1);
            let folds = dataset::FoldAssignment { k, seed: 0, assignment };
            let overrides: TrainConfigOverrides = match overrides {
                Some(o) => from_py(o)?,
                None => TrainConfigOverrides::default(),
            };
            let dir = std::path::Path::new(out_dir);
            std::fs::create_dir_all(dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
            let manifest = dir.join("train.jsonl");
            training::TrainConfig::with_overrides(overrides.clone()).map_err(value_err)?;
            training::emit_manifest(&self.inner, &folds, held_out, parse(variant)?, &manifest).map_err(value_err)?;
            let emitted =
                training::emit_config(overrides, Some(&manifest), &dir.join("train_config.json")).map_err(value_err)?;
            to_py(py, &emitted)
        }
    }

    /// The option letter a completion selects, or `None`.
    #[pyfunction]
    fn parse_answer(completion: &str, choices: [String; 5]) -> Option<String> {
        let texts = choices.each_ref().map(String::as_str);
        let item = McqItem::new("_", "_", texts, Label::A);
        eval::parse_answer(completion, &item).map(|l| l.to_string())
    }

    /// `"A"`..`"E"`, `"tie"` or `"unparseable"`; `None` entries are unparseable votes.
    #[pyfunction]
    fn majority_vote(votes: Vec<Option<String>>) -> PyResult<String> {
        let parsed = votes
            .iter()
            .map(|v| v.as_deref().map(parse::<Label>).transpose())
            .collect::<PyResult<Vec<_>>>()?;
        let m = eval::majority_vote_n(&parsed, parsed.len()).map_err(value_err)?;
        Ok(m.to_string())
    }

    /// Mean / sample-std rows from a list of fold-result dicts.
    #[pyfunction]
    fn aggregate<'py>(py: Python<'py>, folds: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let folds: Vec<FoldResult> = from_py(folds)?;
        to_py(py, &eval::aggregate(&folds))
    }

    #[pyfunction]
    fn gap_report<'py>(py: Python<'py>, rows: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let rows: Vec<SummaryRow> = from_py(rows)?;
        to_py(py, &eval::gap_report(&rows))
    }

    #[pyfunction]
    #[pyo3(signature = (rows, format = "markdown"))]
    fn render_report(rows: &Bound<'_, PyAny>, format: &str) -> PyResult<String> {
        let rows: Vec<SummaryRow> = from_py(rows)?;
        match format {
            "markdown" | "md" => Ok(eval::render_markdown(&rows)),
            "csv" => eval::render_csv(&rows).map_err(value_err),
            other => Err(PyValueError::new_err(format!("unknown format {other:?}"))),
        }
    }

    /// The fine-tuning config with `overrides` applied and validated.
    #[pyfunction]
    #[pyo3(signature = (overrides = None))]
    fn train_config<'py>(py: Python<'py>, overrides: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let overrides: TrainConfigOverrides = match overrides {
            Some(o) => from_py(o)?,
            None => TrainConfigOverrides::default(),
        };
        to_py(py, &training::TrainConfig::with_overrides(overrides).map_err(value_err)?)
    }
}
