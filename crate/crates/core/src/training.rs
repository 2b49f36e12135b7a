//! Fine-tuning artifacts for an external trainer: a prompt/completion
//! manifest for the training folds and a hyperparameter config.

use crate::dataset::{DatasetManifest, FoldAssignment, McqItem};
use crate::eval::{build_prompt, EvalError, PromptVariant};
use crate::util::{sha256_hex, write_jsonl, TOOL_VERSION};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::Path;

pub const DEFAULT_BASE_MODEL: &str = "meta-llama/Meta-Llama-3-8B-Instruct";

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("held-out fold {fold} is out of range for k = {k}")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("item {0:?} has no fold assignment")]
    Unassigned(String),
    #[error("invalid config: {0}")]
    Validation(String),
    #[error(transparent)]
    Prompt(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub completion: String,
}

impl TrainingExample {
    /// Completion is `"<label>) <choice text>"` for the correct choice.
    pub fn from_item(item: &McqItem, variant: PromptVariant) -> Result<Self, EvalError> {
        Ok(Self {
            prompt: build_prompt(item, variant)?,
            completion: format!("{}) {}", item.answer_key, item.choice_text(item.answer_key)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub optimizer: String,
    pub peft_method: String,
    pub base_model: String,
    pub seed: u64,
    /// Method-specific knobs (rank, alpha, quantization bits...) passed through as-is.
    #[serde(default)]
    pub peft_options: Map<String, Value>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 3e-5,
            batch_size: 32,
            optimizer: "adam".into(),
            peft_method: "qlora".into(),
            base_model: DEFAULT_BASE_MODEL.into(),
            seed: 0,
            peft_options: Map::new(),
        }
    }
}

/// Partial config; every present field replaces the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfigOverrides {
    pub epochs: Option<i64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<i64>,
    pub optimizer: Option<String>,
    pub peft_method: Option<String>,
    pub base_model: Option<String>,
    pub seed: Option<u64>,
    pub peft_options: Option<Map<String, Value>>,
}

fn positive_u32(name: &str, v: i64) -> Result<u32, TrainingError> {
    if v <= 0 {
        return Err(TrainingError::Validation(format!("{name} must be positive, got {v}")));
    }
    u32::try_from(v).map_err(|_| TrainingError::Validation(format!("{name} is too large: {v}")))
}

fn non_empty(name: &str, v: String) -> Result<String, TrainingError> {
    if v.trim().is_empty() {
        return Err(TrainingError::Validation(format!("{name} must not be empty")));
    }
    Ok(v)
}

impl TrainConfig {
    pub fn with_overrides(overrides: TrainConfigOverrides) -> Result<Self, TrainingError> {
        let mut cfg = TrainConfig::default();
        if let Some(e) = overrides.epochs {
            cfg.epochs = positive_u32("epochs", e)?;
        }
        if let Some(b) = overrides.batch_size {
            cfg.batch_size = positive_u32("batch_size", b)?;
        }
        if let Some(lr) = overrides.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(TrainingError::Validation(format!("learning_rate must be positive, got {lr}")));
            }
            cfg.learning_rate = lr;
        }
        if let Some(o) = overrides.optimizer {
            cfg.optimizer = non_empty("optimizer", o)?;
        }
        if let Some(p) = overrides.peft_method {
            cfg.peft_method = non_empty("peft_method", p)?;
        }
        if let Some(m) = overrides.base_model {
            cfg.base_model = non_empty("base_model", m)?;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(p) = overrides.peft_options {
            cfg.peft_options = p;
        }
        Ok(cfg)
    }
}

/// The config file as written: the config plus attribution fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmittedConfig {
    #[serde(flatten)]
    pub config: TrainConfig,
    pub tool_version: String,
    pub manifest_sha256: Option<String>,
}

impl EmittedConfig {
    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Training examples for every item outside `held_out`, in manifest order.
pub fn training_examples(
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    held_out: usize,
    variant: PromptVariant,
) -> Result<Vec<TrainingExample>, TrainingError> {
    if held_out >= folds.k {
        return Err(TrainingError::FoldOutOfRange { fold: held_out, k: folds.k });
    }
    let mut out = Vec::new();
    for item in &manifest.items {
        let fold = folds.fold_of(&item.id).ok_or_else(|| TrainingError::Unassigned(item.id.clone()))?;
        if fold != held_out {
            out.push(TrainingExample::from_item(item, variant)?);
        }
    }
    Ok(out)
}

/// Writes the training manifest JSONL; returns the number of lines written.
pub fn emit_manifest(
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    held_out: usize,
    variant: PromptVariant,
    path: &Path,
) -> Result<usize, TrainingError> {
    let examples = training_examples(manifest, folds, held_out, variant)?;
    write_jsonl(path, &examples)?;
    Ok(examples.len())
}

/// Writes the config JSON, recording the hash of the manifest it pairs with.
pub fn emit_config(
    overrides: TrainConfigOverrides,
    manifest_path: Option<&Path>,
    path: &Path,
) -> Result<EmittedConfig, TrainingError> {
    let config = TrainConfig::with_overrides(overrides)?;
    let manifest_sha256 = match manifest_path {
        Some(p) => Some(sha256_hex(&std::fs::read(p)?)),
        None => None,
    };
    let emitted = EmittedConfig {
        config,
        tool_version: TOOL_VERSION.to_string(),
        manifest_sha256,
    };
    let mut text = serde_json::to_string_pretty(&emitted)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(emitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{kfold_split, Label, Provenance};

    fn manifest(n: usize) -> DatasetManifest {
        let items = (0..n)
            .map(|i| {
                let mut it = McqItem::new(&format!("q{i}"), "where is the bank", ["a", "b", "c", "d", "e"], Label::ALL[i % 5]);
                it.cs_stem = Some("bank कहाँ है".into());
                it.cmi = Some(40.0);
                it
            })
            .collect();
        DatasetManifest::new(items, Provenance::new("t")).unwrap()
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size), (5, 32));
        assert_eq!(c.learning_rate, 3e-5);
        assert_eq!((c.optimizer.as_str(), c.peft_method.as_str()), ("adam", "qlora"));
    }

    #[test]
    fn overrides_and_validation() {
        let c = TrainConfig::with_overrides(TrainConfigOverrides {
            epochs: Some(1),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.epochs, 1);
        assert_eq!(c.batch_size, 32);
        let bad = |o: TrainConfigOverrides| matches!(TrainConfig::with_overrides(o), Err(TrainingError::Validation(_)));
        assert!(bad(TrainConfigOverrides { batch_size: Some(0), ..Default::default() }));
        assert!(bad(TrainConfigOverrides { epochs: Some(-2), ..Default::default() }));
        assert!(bad(TrainConfigOverrides { learning_rate: Some(0.0), ..Default::default() }));
        assert!(bad(TrainConfigOverrides { optimizer: Some(" ".into()), ..Default::default() }));
        assert!(serde_json::from_str::<TrainConfigOverrides>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn manifest_excludes_held_out_fold() {
        let m = manifest(250);
        let folds = kfold_split(&m, 5, 1).unwrap();
        let ex = training_examples(&m, &folds, 0, PromptVariant::CodeSwitched).unwrap();
        assert_eq!(ex.len(), 200);
        let train_ids: Vec<&McqItem> = m.items.iter().filter(|i| folds.fold_of(&i.id) != Some(0)).collect();
        for (e, item) in ex.iter().zip(train_ids) {
            assert!(e.completion.starts_with(&format!("{}) ", item.answer_key)));
            assert_eq!(e.prompt, build_prompt(item, PromptVariant::CodeSwitched).unwrap());
        }
        assert!(matches!(
            training_examples(&m, &folds, 5, PromptVariant::English),
            Err(TrainingError::FoldOutOfRange { fold: 5, k: 5 })
        ));
    }

    #[test]
    fn config_roundtrip_with_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("train.jsonl");
        let m = manifest(10);
        let folds = kfold_split(&m, 5, 0).unwrap();
        assert_eq!(emit_manifest(&m, &folds, 2, PromptVariant::English, &mpath).unwrap(), 8);
        let cpath = dir.path().join("config.json");
        let mut peft = Map::new();
        peft.insert("r".into(), 16.into());
        let written = emit_config(
            TrainConfigOverrides {
                peft_options: Some(peft),
                ..Default::default()
            },
            Some(&mpath),
            &cpath,
        )
        .unwrap();
        let back = EmittedConfig::load(&cpath).unwrap();
        assert_eq!(back, written);
        assert_eq!(back.manifest_sha256.unwrap(), sha256_hex(&std::fs::read(&mpath).unwrap()));
        assert_eq!(back.config.peft_options["r"], 16);
    }
}
