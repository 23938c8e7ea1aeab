//! Sequence labeling with linear-chain CRFs trained from labeled data,
//! from bitext carrying projected label expectations, or both.
//!
//! The workflow: a source-language model tags the source side of a bitext;
//! its posterior marginals travel through word alignments to become target
//! expectations ([`projection`]); a target model is then trained to match
//! them with a generalized expectation term ([`ge`]), optionally jointly with
//! the likelihood of labeled target data ([`trainer`]).

pub mod config;
pub mod crf;
pub mod error;
pub mod eval;
pub mod features;
pub mod ge;
pub mod io;
pub mod labels;
pub mod lbfgs;
mod parallel;
pub mod pipeline;
pub mod projection;
pub mod sentence;
pub mod synth;
pub mod trainer;

pub use crf::{supervised_value_and_gradient, CrfModel, InferenceTables};
pub use error::{Error, Result};
pub use eval::{decode_spans, paired_bootstrap, score, EntitySpan, ScoreReport};
pub use features::{extract_features, FeatureIndex, FeatureVector, SentenceFeatures};
pub use ge::{ge_gradient, ge_value, harden, GeWorkspace, TargetExpectations};
pub use labels::{LabelSet, Scheme};
pub use projection::{project, project_hard_labels, source_posteriors, AlignedPair, LabelMap, PosteriorTable};
pub use sentence::{LabelSequence, Sentence};
pub use trainer::{joint_value_and_gradient, train, Corpus, ProjectionMode, Regime, TrainConfig, TrainReport};
