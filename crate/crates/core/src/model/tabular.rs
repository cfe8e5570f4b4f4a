use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_source, ModelStepOutput, SequenceModel, SourceSummary};
use crate::error::{Error, Result};
use crate::types::{SourceSentence, TokenId, Vocab};

/// One automaton state: the distribution over the token that follows, and
/// the successor state for every consumed token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularState {
    /// Probabilities (not logs) over the vocabulary.
    pub probs: Vec<f64>,
    pub next: Vec<usize>,
}

/// Declared encoding of one source sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub tokens: Vec<TokenId>,
    pub summary: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<usize>,
}

/// How undeclared sources pick their start state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartRule {
    /// Always `initial_state`.
    #[default]
    Fixed,
    /// `(initial_state + |X| + sum of source ids) mod num_states`.
    SourceHash,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TabularRepr {
    vocab: Vocab,
    summary_dim: usize,
    #[serde(default)]
    initial_state: usize,
    #[serde(default)]
    start_rule: StartRule,
    states: Vec<TabularState>,
    #[serde(default)]
    sources: Vec<SourceEntry>,
}

/// Exact finite-state language model.
///
/// Decoder states are automaton state indices. Embeddings are one-hot. The
/// source summary is looked up from the declared `sources`; undeclared
/// sources get `[|X| / 10, token histogram..., 0...]` truncated to
/// `summary_dim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TabularRepr", into = "TabularRepr")]
pub struct TabularModel {
    repr: TabularRepr,
    logprobs: Vec<Vec<f64>>,
    declared: HashMap<Vec<TokenId>, usize>,
}

impl PartialEq for TabularModel {
    fn eq(&self, other: &Self) -> bool {
        self.repr.vocab == other.repr.vocab
            && self.repr.summary_dim == other.repr.summary_dim
            && self.repr.initial_state == other.repr.initial_state
            && self.repr.start_rule == other.repr.start_rule
            && self.repr.states == other.repr.states
            && self.repr.sources == other.repr.sources
    }
}

impl TryFrom<TabularRepr> for TabularModel {
    type Error = Error;

    fn try_from(repr: TabularRepr) -> Result<Self> {
        let v = repr.vocab.len();
        let n = repr.states.len();
        if n == 0 {
            return Err(Error::input("tabular model needs at least one state"));
        }
        if repr.initial_state >= n {
            return Err(Error::input(format!("initial state {} out of range", repr.initial_state)));
        }
        let mut logprobs = Vec::with_capacity(n);
        for (q, st) in repr.states.iter().enumerate() {
            if st.probs.len() != v || st.next.len() != v {
                return Err(Error::input(format!("state {q}: probs and next must both have {v} entries")));
            }
            if st.probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::input(format!("state {q}: probabilities must lie in [0, 1]")));
            }
            let total: f64 = st.probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::input(format!("state {q}: probabilities sum to {total}, not 1")));
            }
            if let Some(&bad) = st.next.iter().find(|&&s| s >= n) {
                return Err(Error::input(format!("state {q}: transition to unknown state {bad}")));
            }
            logprobs.push(st.probs.iter().map(|p| p.ln()).collect());
        }
        let mut declared = HashMap::new();
        for (i, entry) in repr.sources.iter().enumerate() {
            let src = SourceSentence::new(entry.tokens.clone())?;
            check_source(&repr.vocab, &src)?;
            if entry.summary.len() != repr.summary_dim {
                return Err(Error::input(format!(
                    "source entry {i}: summary has {} entries, expected {}",
                    entry.summary.len(),
                    repr.summary_dim
                )));
            }
            if matches!(entry.initial_state, Some(s) if s >= n) {
                return Err(Error::input(format!("source entry {i}: initial state out of range")));
            }
            if declared.insert(entry.tokens.clone(), i).is_some() {
                return Err(Error::input(format!("source entry {i}: duplicate source")));
            }
        }
        Ok(TabularModel { repr, logprobs, declared })
    }
}

impl From<TabularModel> for TabularRepr {
    fn from(m: TabularModel) -> Self {
        m.repr
    }
}

/// Parameters of [`TabularModel::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureConfig {
    pub vocab_size: usize,
    pub num_states: usize,
    pub summary_dim: usize,
    /// Larger values give peakier next-token distributions.
    pub sharpness: f64,
    /// Multiplier on the raw EOS weight; controls output length.
    pub eos_scale: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { vocab_size: 6, num_states: 6, summary_dim: 8, sharpness: 2.0, eos_scale: 0.5 }
    }
}

impl TabularModel {
    pub fn new(
        vocab: Vocab,
        summary_dim: usize,
        initial_state: usize,
        start_rule: StartRule,
        states: Vec<TabularState>,
        sources: Vec<SourceEntry>,
    ) -> Result<Self> {
        TabularRepr { vocab, summary_dim, initial_state, start_rule, states, sources }.try_into()
    }

    /// Seeded random fixture over a synthetic vocabulary. BOS is never
    /// emitted and BOS/EOS transitions are self-loops.
    pub fn random<R: Rng + ?Sized>(cfg: &FixtureConfig, rng: &mut R) -> Result<Self> {
        let vocab = Vocab::synthetic(cfg.vocab_size)?;
        if cfg.num_states == 0 {
            return Err(Error::input("fixture needs at least one state"));
        }
        let (bos, eos) = (vocab.bos(), vocab.eos());
        let states = (0..cfg.num_states)
            .map(|q| {
                let mut weights: Vec<f64> = (0..cfg.vocab_size)
                    .map(|t| {
                        if t == bos {
                            0.0
                        } else {
                            // strictly positive so every non-BOS token stays reachable
                            rng.random_range(0.01f64..1.0).powf(cfg.sharpness)
                        }
                    })
                    .collect();
                weights[eos] *= cfg.eos_scale;
                let total: f64 = weights.iter().sum();
                let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
                renormalize(&mut probs);
                let next = (0..cfg.vocab_size)
                    .map(|t| if t == bos || t == eos { q } else { rng.random_range(0..cfg.num_states) })
                    .collect();
                TabularState { probs, next }
            })
            .collect();
        TabularModel::new(vocab, cfg.summary_dim, 0, StartRule::SourceHash, states, Vec::new())
    }

    pub fn states(&self) -> &[TabularState] {
        &self.repr.states
    }

    pub fn num_states(&self) -> usize {
        self.repr.states.len()
    }

    pub fn sources(&self) -> &[SourceEntry] {
        &self.repr.sources
    }

    pub fn logprobs(&self, state: usize) -> &[f64] {
        &self.logprobs[state]
    }

    /// Declares (or replaces) the summary and start state of one source.
    pub fn declare_source(&mut self, entry: SourceEntry) -> Result<()> {
        let mut repr = self.repr.clone();
        repr.sources.retain(|e| e.tokens != entry.tokens);
        repr.sources.push(entry);
        *self = repr.try_into()?;
        Ok(())
    }

    fn fallback_summary(&self, source: &SourceSentence) -> Vec<f64> {
        let dim = self.repr.summary_dim;
        let mut out = vec![0.0; dim];
        if dim == 0 {
            return out;
        }
        let len = source.len() as f64;
        out[0] = len / 10.0;
        for &t in source.tokens() {
            if t + 1 < dim {
                out[t + 1] += 1.0 / len;
            }
        }
        out
    }

    fn start_state(&self, source: &SourceSentence) -> usize {
        let n = self.num_states();
        match self.repr.start_rule {
            StartRule::Fixed => self.repr.initial_state,
            StartRule::SourceHash => {
                let sum: usize = source.tokens().iter().sum();
                (self.repr.initial_state + source.len() + sum) % n
            }
        }
    }
}

/// Pushes float rounding residue into the largest entry so the sum is 1.
fn renormalize(probs: &mut [f64]) {
    let total: f64 = probs.iter().sum();
    if let Some(max) = probs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += 1.0 - total;
    }
}

impl SequenceModel for TabularModel {
    type State = usize;

    fn vocab(&self) -> &Vocab {
        &self.repr.vocab
    }

    fn summary_dim(&self) -> usize {
        self.repr.summary_dim
    }

    fn embedding_dim(&self) -> usize {
        self.repr.vocab.len()
    }

    fn encode(&self, source: &SourceSentence) -> Result<(SourceSummary, usize)> {
        check_source(&self.repr.vocab, source)?;
        if let Some(&i) = self.declared.get(source.tokens()) {
            let entry = &self.repr.sources[i];
            let start = entry.initial_state.unwrap_or(self.repr.initial_state);
            return Ok((SourceSummary(entry.summary.clone()), start));
        }
        Ok((SourceSummary(self.fallback_summary(source)), self.start_state(source)))
    }

    fn step(&self, state: &usize, last_token: TokenId) -> ModelStepOutput<usize> {
        let next = self.repr.states[*state].next[last_token];
        ModelStepOutput { logprobs: self.logprobs[next].clone(), next_state: next }
    }

    fn embed(&self, token: TokenId) -> Result<Vec<f64>> {
        self.repr.vocab.check(token)?;
        let mut v = vec![0.0; self.repr.vocab.len()];
        v[token] = 1.0;
        Ok(v)
    }
}
