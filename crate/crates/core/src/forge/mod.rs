//! Training corpora: the pre-training mix and the instruction-tuning set.

pub mod corpus;
pub mod sft;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gateway::GatewayError;
use crate::report::ReportError;

pub use corpus::{
    build_manifest, clean_doc, clean_docs, filter_by_keywords, load_general_docs, recount_tokens,
    CleanedDoc, CorpusDoc, CorpusManifest, FilterResult, KeywordCategory, KeywordMatcher, KeywordTable,
    ManifestDoc, MixRatio, Side,
};
pub use sft::{
    augment_all, augment_counterfactual, behavior_hash, build_sft_pairs, bundle_pair, counterfactual_bundle_pair,
    mix_sft, plan_counterfactuals, read_seeds, validate_sft_jsonl, SeedRecord, SftBuild, SftPair,
};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid mix ratio {0}")]
    InvalidRatio(String),
    #[error("{0} side of the corpus is empty")]
    EmptySide(&'static str),
    #[error("mix ratio unreachable within tolerance: {0}")]
    RatioUnreachable(String),
    #[error("duplicate seed id {0:?}")]
    DuplicateSeed(String),
    #[error("pair is already a counterfactual")]
    AlreadyAugmented,
    #[error("counterfactual rejected: {reason}")]
    CfRejected { reason: String, response: String },
    #[error("invalid pair: {0}")]
    InvalidPair(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ForgeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ForgeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
