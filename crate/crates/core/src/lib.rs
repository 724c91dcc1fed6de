//! Implicit-sexism classification with an adaptive-threshold supervised
//! contrastive objective.
//!
//! The pipeline cleans and tokenizes a post, encodes it with a small
//! transformer, pools the token states with word-level attention, joins the
//! pooled vector to the `[CLS]` state, appends 20 lexicon-based perception
//! features and classifies with a linear head. Training minimizes
//! cross-entropy plus a supervised contrastive loss whose positive pairs must
//! share a label *and* exceed a learnable cosine-similarity threshold.

#![allow(clippy::needless_range_loop)]

pub mod attention;
pub mod checkpoint;
pub mod classifier;
pub mod contrastive;
pub mod convert;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod labels;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod params;
pub mod perception;
pub mod preprocess;
pub mod synth;
pub mod train;

pub use attention::{augment, wla, AttentionWeights, AugmentedRepresentation, WlaParams};
pub use checkpoint::Checkpoint;
pub use classifier::{ce_loss, total_loss, ClassifierParams, Prediction};
pub use contrastive::{
    adaptive_positive_weights, cosine_similarity, label_mask, supcon_loss, supcon_loss_with_grad,
    ContrastiveConfig, LabelMaskMatrix, MaskMode, PositiveRule, SimilarityMatrix,
};
pub use encoder::{load_embeddings, save_embeddings, Encoder, EncoderConfig, HiddenStates};
pub use error::{Error, ErrorClass, Result};
pub use labels::{LabelMap, LabelSet, TaskMode};
pub use linalg::Matrix;
pub use metrics::{evaluate_predictions, ClassMetrics, MetricsReport};
pub use model::{Encoded, Example, Model, ModelConfig, ModelParams};
pub use params::Parameters;
pub use perception::{PerceptionExtractor, PerceptionFeatures, ToxicitySource, PERCEPTION_DIM};
pub use preprocess::{clean_text, tokenize, RawPost, TokenSequence, Tokenizer, Vocabulary};
pub use synth::{generate_synthetic, SynthSpec};
pub use train::{evaluate, threshold_sweep, train, OptimizerKind, TrainConfig, TrainLog};
