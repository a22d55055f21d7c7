//! Retrieval-grounded reward engine for image captions.
//!
//! A caption embedding is used as a text query against a gallery of paired
//! image/text embeddings. The images behind the top-K text matches form the
//! support set, from which two scores are derived:
//!
//! - **consistency** (GRC): the mean resultant length of the support's unit
//!   image embeddings, high when a caption is specific enough to retrieve a
//!   visually coherent gallery;
//! - **relevance** (QIR): a rank-decayed sum of cosine similarities between the
//!   source image and each retrieved image.
//!
//! The reward is `grc + beta * qir`, and a group of candidate captions for one
//! image is turned into standardized advantages. The [`correlation`] module
//! bins scored samples and correlates mean metric against the logit of a
//! downstream accuracy.
//!
//! All vectors are stored as `f32`; every reduction accumulates in `f64`.

pub mod correlation;
pub mod error;
pub mod retrieval;
pub mod reward;
pub mod store;
pub mod vecfile;
pub mod vector;

mod serde_sig;

pub use correlation::{
    bin_samples, logit, pearson, read_samples_jsonl, run_correlation, write_samples_jsonl,
    BinSummary, Binning, CorrelationReport, Metric, ScoredSample, DEFAULT_BIN_SIZE,
    DEFAULT_LOGIT_EPS,
};
pub use error::{CimError, Result};
pub use retrieval::{top_k, top_k_batch, top_k_with, ScanOptions, SupportEntry, SupportSet};
pub use reward::{
    grc, group_advantages, qir, relevance, reward, score_candidate, score_candidate_with,
    score_group, score_group_with, GroupResult, GroupScore, RewardParams, ScoreReport,
};
pub use store::{ingest_corpus, CorpusBuilder, CorpusIndex, EmbeddingRecord, Manifest};
pub use vector::{cosine, dot, normalize, UnitVector};

/// Version of the on-disk corpus format (`manifest.json` and `*.vec`).
pub const CORPUS_FORMAT_VERSION: u32 = 1;
