//! Single-queue decoding for sequence models.
//!
//! A single priority queue holds hypotheses of every length, ranked by a
//! universal score (length-normalized log-probability plus optional progress
//! and length matching penalties). Fixed-width beam search and an exhaustive
//! oracle are included for comparison, together with two toy sequence models
//! and the length predictor that feeds the length matching penalty.

pub mod error;
pub mod lengthpred;
pub mod model;
pub mod nn;
pub mod search;
pub mod types;

pub use error::{Error, Result};
pub use lengthpred::{LengthPredictor, PredictorConfig, PredictorState, TrainingExample};
pub use model::{AnyModel, ModelFile, NeuralModel, SequenceModel, TabularModel};
pub use search::{beam_search, exhaustive_best, greedy_decode, single_queue_decode, Scorer};
pub use types::{
    DecodeResult, GaussianParams, Hypothesis, LmsMode, ScoreConfig, SearchConfig, SourceSentence, TokenId, Vocab,
};
