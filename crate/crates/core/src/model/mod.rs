//! The sequence-model contract consumed by the decoders, and the two toy
//! models implementing it.

mod file;
mod neural;
mod tabular;

pub use file::{AnyModel, AnyState, ModelFile, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use neural::{NeuralConfig, NeuralModel};
pub use tabular::{FixtureConfig, SourceEntry, StartRule, TabularModel, TabularState};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{SourceSentence, TokenId, Vocab};

/// Fixed-size vector summarizing the source sentence, consumed by the
/// length predictor's encoder head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary(pub Vec<f64>);

impl SourceSummary {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Next-token log-distribution and the decoder state after consuming the
/// last token.
#[derive(Debug, Clone)]
pub struct ModelStepOutput<S> {
    pub logprobs: Vec<f64>,
    pub next_state: S,
}

/// Anything that can score continuations of a partial output.
///
/// States are immutable snapshots: `step` never mutates its input, so a
/// suspended hypothesis can be resumed at any later time.
pub trait SequenceModel: Send + Sync {
    type State: Clone + Send + Sync;

    fn vocab(&self) -> &Vocab;

    fn summary_dim(&self) -> usize;

    fn embedding_dim(&self) -> usize;

    /// Source summary and the decoder state before BOS is consumed.
    fn encode(&self, source: &SourceSentence) -> Result<(SourceSummary, Self::State)>;

    /// Consumes `last_token` (BOS on the first step) and returns the
    /// distribution over the following token.
    ///
    /// Panics on an out-of-range token; decoders only pass vocabulary ids.
    fn step(&self, state: &Self::State, last_token: TokenId) -> ModelStepOutput<Self::State>;

    fn embed(&self, token: TokenId) -> Result<Vec<f64>>;
}

/// Log-probability of emitting `tokens` after BOS, chaining `step`.
pub fn sequence_logprob<M: SequenceModel>(model: &M, source: &SourceSentence, tokens: &[TokenId]) -> Result<f64> {
    for &t in tokens {
        model.vocab().check(t)?;
    }
    let (_, mut state) = model.encode(source)?;
    let mut last = model.vocab().bos();
    let mut total = 0.0;
    for &t in tokens {
        let out = model.step(&state, last);
        total += out.logprobs[t];
        state = out.next_state;
        last = t;
    }
    Ok(total)
}

pub(crate) fn check_source(vocab: &Vocab, source: &SourceSentence) -> Result<()> {
    for &t in source.tokens() {
        vocab.check(t)?;
    }
    Ok(())
}
