//! Target-aware subset selection over discretized speech corpora.
//!
//! Utterances are represented as sequences of discrete unit labels (K-means
//! clusters over MFCC frames, or labels produced by an external model). A
//! corpus is summarized by its order-N gram distribution, two corpora are
//! compared by the KL divergence between those distributions, and a subset of
//! a large unlabeled pool is chosen so that its distribution matches a small
//! query corpus.
//!
//! Pipeline stages:
//!
//! - [`corpus`]: label-corpus data model and file formats.
//! - [`discretizer`]: MFCC front-end, K-means training and label assignment.
//! - [`ngram`]: sparse gram counting, additive smoothing, pruning, interpolation.
//! - [`divergence`]: KL divergence over the full gram space with a closed-form
//!   term for grams unseen on both sides.
//! - [`selection`]: bucketed greedy search, random / contrastive baselines, an
//!   exhaustive oracle and a synthetic Markov corpus generator.
//! - [`cli`]: run configuration echo and report formats used by the `scd` binary.

pub mod cli;
pub mod corpus;
pub mod discretizer;
pub mod divergence;
pub mod error;
pub mod ngram;
pub mod selection;

pub use corpus::{AudioManifest, LabelCorpus, LabelSequence};
pub use divergence::{scd, scd_incremental, CandidateStats, ScdValue};
pub use error::{Error, Result};
pub use ngram::{count_ngrams, interpolate, Distribution, GramKey, NGramStats};
pub use selection::{Budget, SelectionConfig, SelectionResult, Strategy};
