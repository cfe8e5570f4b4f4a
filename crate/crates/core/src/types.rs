//! Domain types shared by the models, the length predictor and the decoders.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lengthpred::PredictorState;

pub type TokenId = usize;

/// Smallest standard deviation any predicted Gaussian may take.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Default number of decoding steps before a search gives up.
pub const DEFAULT_MAX_STEPS: usize = 150;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    bos: TokenId,
    eos: TokenId,
}

/// Dense token vocabulary with distinguished begin/end-of-sequence ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos_id: TokenId,
    eos_id: TokenId,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.bos_id == other.bos_id && self.eos_id == other.eos_id
    }
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = Error;

    fn try_from(repr: VocabRepr) -> Result<Self> {
        Vocab::new(repr.tokens, repr.bos, repr.eos)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens, bos: v.bos_id, eos: v.eos_id }
    }
}

impl Vocab {
    pub fn new(tokens: Vec<String>, bos_id: TokenId, eos_id: TokenId) -> Result<Self> {
        let v = tokens.len();
        if bos_id >= v || eos_id >= v {
            return Err(Error::input(format!(
                "bos ({bos_id}) and eos ({eos_id}) must be valid indices into a vocabulary of {v}"
            )));
        }
        if bos_id == eos_id {
            return Err(Error::input("bos and eos must be distinct tokens"));
        }
        let mut index = HashMap::with_capacity(v);
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::input(format!("duplicate token `{tok}` in vocabulary")));
            }
        }
        Ok(Vocab { tokens, index, bos_id, eos_id })
    }

    /// `<s>`, `</s>` followed by `w2 .. w{size-1}`.
    pub fn synthetic(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::input("a synthetic vocabulary needs at least 3 tokens"));
        }
        let tokens = (0..size)
            .map(|i| match i {
                0 => "<s>".to_string(),
                1 => "</s>".to_string(),
                _ => format!("w{i}"),
            })
            .collect();
        Vocab::new(tokens, 0, 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        self.bos_id
    }

    pub fn eos(&self) -> TokenId {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn check(&self, id: TokenId) -> Result<TokenId> {
        if id < self.len() {
            Ok(id)
        } else {
            Err(Error::UnknownTokenId { id, vocab_size: self.len() })
        }
    }

    /// Resolves a corpus token: an exact vocabulary entry wins, otherwise a
    /// numeric id is accepted.
    pub fn parse_token(&self, raw: &str) -> Result<TokenId> {
        if let Some(id) = self.id(raw) {
            return Ok(id);
        }
        match raw.parse::<usize>() {
            Ok(id) => self.check(id),
            Err(_) => Err(Error::UnknownToken(raw.to_string())),
        }
    }

    pub fn parse_line(&self, line: &str) -> Result<Vec<TokenId>> {
        line.split_whitespace().map(|t| self.parse_token(t)).collect()
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.token(id).unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
    }
}

/// A source sentence `X`; never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceSentence {
    tokens: Vec<TokenId>,
}

impl SourceSentence {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::input("source sentence must contain at least one token"));
        }
        Ok(SourceSentence { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// Mean and standard deviation of a length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParams {
    /// Clamps `sigma` to [`SIGMA_FLOOR`].
    pub fn new(mu: f64, sigma: f64) -> Self {
        GaussianParams { mu, sigma: sigma.max(SIGMA_FLOOR) }
    }
}

/// Which closed form the length matching score uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmsMode {
    /// `E_{x~d}[-ln N(x; e)]`, the cross-entropy the expectation defines.
    #[default]
    Expectation,
    /// The closed form with the roles of the two Gaussians swapped.
    Swapped,
}

/// Hyperparameters of the universal score function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Length-normalization exponent.
    pub lambda: f64,
    /// Progress penalty weight.
    pub alpha: f64,
    /// Progress penalty exponent.
    pub beta: f64,
    /// Length matching penalty weight. Negative values penalize.
    pub gamma: f64,
    /// Length matching score threshold.
    pub tau: f64,
    pub pg_enabled: bool,
    pub lmp_enabled: bool,
    #[serde(default)]
    pub lms_mode: LmsMode,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig::length_normalized(1.0)
    }
}

impl ScoreConfig {
    /// Pure length-normalized log-probability; both penalties off.
    pub fn length_normalized(lambda: f64) -> Self {
        ScoreConfig {
            lambda,
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            tau: 0.0,
            pg_enabled: false,
            lmp_enabled: false,
            lms_mode: LmsMode::Expectation,
        }
    }

    pub fn with_progress(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.pg_enabled = true;
        self
    }

    pub fn with_length_matching(mut self, gamma: f64, tau: f64) -> Self {
        self.gamma = gamma;
        self.tau = tau;
        self.lmp_enabled = true;
        self
    }

    pub fn with_lms_mode(mut self, mode: LmsMode) -> Self {
        self.lms_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda, self.alpha, self.beta, self.gamma, self.tau];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("score hyperparameters must be finite"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(Error::config("beta must be >= 0"));
        }
        Ok(())
    }
}

/// Search budget and queue sizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam_size: usize,
    pub max_steps: usize,
    /// Number of new candidates merged into the queue per step.
    pub retain_size: usize,
    /// When set, the worst unfinished hypotheses are evicted past this size.
    pub queue_capacity: Option<usize>,
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(beam_size: usize) -> Self {
        SearchConfig {
            beam_size,
            max_steps: DEFAULT_MAX_STEPS,
            retain_size: 2 * beam_size,
            queue_capacity: None,
            seed: 0,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_retain_size(mut self, retain_size: usize) -> Self {
        self.retain_size = retain_size;
        self
    }

    pub fn with_queue_capacity(mut self, capacity: usize) -> Self {
        self.queue_capacity = Some(capacity);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::config("beam size must be >= 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max steps must be >= 1"));
        }
        if self.retain_size < self.beam_size {
            return Err(Error::config(format!(
                "retain size {} is smaller than beam size {}",
                self.retain_size, self.beam_size
            )));
        }
        if matches!(self.queue_capacity, Some(c) if c < self.beam_size) {
            return Err(Error::config("queue capacity must be >= beam size"));
        }
        Ok(())
    }

    /// Next-token candidates kept per expanded hypothesis.
    ///
    /// This is `B`, widened when `B * B` candidates could not fill the retain
    /// set (only possible for `B = 1` with a retain size above one).
    pub fn expansion_width(&self) -> usize {
        let b = self.beam_size.max(1);
        b.max(self.retain_size.div_ceil(b))
    }
}

/// A partial or finished output sequence.
#[derive(Debug, Clone)]
pub struct Hypothesis<S = ()> {
    /// Emitted token ids, BOS excluded, possibly ending in EOS.
    pub tokens: Vec<TokenId>,
    pub cum_logprob: f64,
    pub finished: bool,
    pub model_state: S,
    pub pred_state: Option<PredictorState>,
    pub cached_score: Option<f64>,
    pub seq_no: u64,
}

impl<S> Hypothesis<S> {
    /// The empty hypothesis decoding starts from.
    pub fn root(model_state: S, pred_state: Option<PredictorState>) -> Self {
        Hypothesis {
            tokens: Vec::new(),
            cum_logprob: 0.0,
            finished: false,
            model_state,
            pred_state,
            cached_score: None,
            seq_no: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn last_token(&self) -> Option<TokenId> {
        self.tokens.last().copied()
    }

    /// Cached score; panics if the hypothesis was never scored.
    pub fn score(&self) -> f64 {
        self.cached_score.unwrap_or_else(|| panic!("hypothesis #{} compared before being scored", self.seq_no))
    }

    pub fn strip_state(&self) -> Hypothesis {
        Hypothesis {
            tokens: self.tokens.clone(),
            cum_logprob: self.cum_logprob,
            finished: self.finished,
            model_state: (),
            pred_state: self.pred_state.clone(),
            cached_score: self.cached_score,
            seq_no: self.seq_no,
        }
    }
}

/// `cum_logprob / |tokens|^lambda`.
pub fn normalized_logprob<S>(h: &Hypothesis<S>, lambda: f64) -> f64 {
    debug_assert!(!h.tokens.is_empty(), "length normalization of an empty hypothesis");
    h.cum_logprob / (h.tokens.len() as f64).powf(lambda)
}

fn score_key(score: f64) -> f64 {
    // collapses -0.0 onto 0.0 so `total_cmp` agrees with `==`
    score + 0.0
}

/// Queue order: higher cached score first, then earlier insertion, then
/// lexicographic token order.
pub fn compare_hypotheses<S, T>(a: &Hypothesis<S>, b: &Hypothesis<T>) -> Ordering {
    score_key(b.score())
        .total_cmp(&score_key(a.score()))
        .then_with(|| a.seq_no.cmp(&b.seq_no))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Output of one decode call.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    /// Best finished hypothesis, or the best unfinished one when `fallback`.
    pub best: Hypothesis,
    /// Set when no finished hypothesis was found.
    pub fallback: bool,
    pub all_finished: Vec<Hypothesis>,
    pub steps_taken: usize,
    /// Per step, the length-normalized log-probabilities of the expanded set,
    /// sorted descending.
    pub rank_score_trace: Vec<Vec<f64>>,
    /// Largest number of hypotheses held at once.
    pub peak_queue_len: usize,
    pub elapsed: Duration,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn hyp(tokens: Vec<TokenId>, cum_logprob: f64) -> Hypothesis {
        Hypothesis { tokens, cum_logprob, ..Hypothesis::root((), None) }
    }

    fn scored(score: f64, seq_no: u64, tokens: Vec<TokenId>) -> Hypothesis {
        Hypothesis { cached_score: Some(score), seq_no, ..hyp(tokens, -1.0) }
    }

    #[test]
    fn normalized_logprob_examples() {
        assert_abs_diff_eq!(normalized_logprob(&hyp(vec![2; 4], -2.0), 1.0), -0.5);
        assert_eq!(normalized_logprob(&hyp(vec![2; 4], -2.0), 0.0), -2.0);
        assert_abs_diff_eq!(normalized_logprob(&hyp(vec![2; 9], -3.0), 0.5), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn compare_examples() {
        let a = scored(-1.0, 5, vec![2]);
        let b = scored(-2.0, 1, vec![2]);
        assert_eq!(compare_hypotheses(&a, &b), Ordering::Less);
        let a = scored(-1.0, 3, vec![3]);
        let b = scored(-1.0, 7, vec![2]);
        assert_eq!(compare_hypotheses(&a, &b), Ordering::Less);
        assert_eq!(compare_hypotheses(&b, &a), Ordering::Greater);
        assert_eq!(compare_hypotheses(&a, &a), Ordering::Equal);
    }

    #[test]
    fn negative_zero_ties_with_zero() {
        let a = scored(-0.0, 1, vec![2]);
        let b = scored(0.0, 2, vec![2]);
        assert_eq!(compare_hypotheses(&a, &b), Ordering::Less);
    }

    #[test]
    #[should_panic(expected = "before being scored")]
    fn unscored_comparison_panics() {
        let a = hyp(vec![2], -1.0);
        compare_hypotheses(&a, &a);
    }

    #[test]
    fn vocab_validation() {
        let toks = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(Vocab::new(toks(&["a", "b"]), 0, 0).is_err());
        assert!(Vocab::new(toks(&["a", "b"]), 0, 2).is_err());
        assert!(Vocab::new(toks(&["a", "a", "c"]), 0, 1).is_err());
        let v = Vocab::new(toks(&["<s>", "</s>", "7", "x"]), 0, 1).unwrap();
        // an exact token string wins over its numeric reading
        assert_eq!(v.parse_token("7").unwrap(), 2);
        assert_eq!(v.parse_token("3").unwrap(), 3);
        assert!(matches!(v.parse_token("9"), Err(Error::UnknownTokenId { id: 9, .. })));
        assert!(matches!(v.parse_token("zz"), Err(Error::UnknownToken(_))));
        let back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn search_config_validation_and_width() {
        assert!(SearchConfig::new(0).validate().is_err());
        assert!(SearchConfig::new(3).with_retain_size(2).validate().is_err());
        assert!(SearchConfig::new(3).with_max_steps(0).validate().is_err());
        let cfg = SearchConfig::new(5);
        assert_eq!(cfg.retain_size, 10);
        assert_eq!(cfg.max_steps, 150);
        assert_eq!(cfg.expansion_width(), 5);
        assert_eq!(SearchConfig::new(5).with_retain_size(5).expansion_width(), 5);
        assert_eq!(SearchConfig::new(1).expansion_width(), 2);
        assert_eq!(SearchConfig::new(1).with_retain_size(1).expansion_width(), 1);
    }

    #[test]
    fn sigma_is_floored() {
        assert_eq!(GaussianParams::new(1.0, 0.0).sigma, SIGMA_FLOOR);
        assert_eq!(GaussianParams::new(1.0, 2.0).sigma, 2.0);
    }

    proptest! {
        #[test]
        fn compare_is_total_order(
            items in prop::collection::vec((-5i32..1, 0usize..4), 1..12)
        ) {
            // coarse scores force plenty of ties
            let hs: Vec<Hypothesis> = items
                .iter()
                .enumerate()
                .map(|(i, &(s, t))| scored(s as f64 * 0.5, i as u64, vec![t]))
                .collect();
            for a in &hs {
                for b in &hs {
                    let ab = compare_hypotheses(a, b);
                    prop_assert_eq!(ab, compare_hypotheses(b, a).reverse());
                    prop_assert_eq!(ab == Ordering::Equal, a.seq_no == b.seq_no);
                    for c in &hs {
                        if ab == Ordering::Less && compare_hypotheses(b, c) == Ordering::Less {
                            prop_assert_eq!(compare_hypotheses(a, c), Ordering::Less);
                        }
                    }
                }
            }
        }

        #[test]
        fn lambda_zero_is_identity(cum in -50.0f64..0.0, len in 1usize..40) {
            prop_assert_eq!(normalized_logprob(&hyp(vec![2; len], cum), 0.0), cum);
        }

        #[test]
        fn normalization_is_monotone(a in -50.0f64..0.0, b in -50.0f64..0.0, len in 1usize..40, lambda in 0.0f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(normalized_logprob(&hyp(vec![2; len], lo), lambda)
                <= normalized_logprob(&hyp(vec![2; len], hi), lambda));
        }
    }
}
