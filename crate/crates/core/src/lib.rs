//! Toolkit for building CMI-controlled code-switched (Hindi-English) question
//! sets from monolingual multiple-choice corpora, and for scoring models on
//! them with sampled majority-vote inference over k folds.

pub mod cli;
pub mod client;
pub mod cmi;
pub mod dataset;
pub mod eval;
pub mod generate;
pub mod langid;
pub mod training;
pub mod util;

pub use cmi::{bucket_of, compute_cmi, corpus_stats, CmiBreakdown, CmiBucket, CmiStats};
pub use dataset::{DatasetManifest, FoldAssignment, Label, McqItem};
pub use eval::{build_prompt, majority_vote, parse_answer, EvalRecord, FoldResult, PromptVariant, SummaryRow};
pub use generate::{substitute, BilingualLexicon, GenerationOutcome, GenerationSpec};
pub use langid::{classify_token, tag_utterance, tokenize, LanguageTag, TaggedUtterance};
