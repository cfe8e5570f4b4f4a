//! Decoding algorithms: fixed-width beam search, single-queue decoding, an
//! exhaustive oracle for small instances, and greedy decoding.

mod beam;
mod exhaustive;
mod queue;
mod sqd;
mod stats;

pub use beam::beam_search;
pub use exhaustive::{exhaustive_best, ENUMERATION_LIMIT};
pub use queue::HypothesisQueue;
pub use sqd::single_queue_decode;
pub use stats::{collect_rank_stats, RankStat};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lengthpred::{lmp_value, lms, LengthPredictor, PredictorContext};
use crate::model::SequenceModel;
use crate::types::{normalized_logprob, GaussianParams, Hypothesis, ScoreConfig, SourceSentence, TokenId};

/// Ranking used by beam search and the exhaustive oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Scorer {
    /// Raw cumulative log-probability.
    Vanilla,
    /// `cum_logprob / |y|^lambda`.
    LengthNorm { lambda: f64 },
}

impl Scorer {
    pub fn score<S>(&self, h: &Hypothesis<S>) -> f64 {
        match *self {
            Scorer::Vanilla => h.cum_logprob,
            Scorer::LengthNorm { lambda } => normalized_logprob(h, lambda),
        }
    }
}

/// `alpha * |y|^beta / |X|^beta` for unfinished hypotheses, else 0.
pub fn progress_penalty<S>(h: &Hypothesis<S>, source_len: usize, cfg: &ScoreConfig) -> f64 {
    if h.finished || !cfg.pg_enabled {
        return 0.0;
    }
    cfg.alpha * (h.len() as f64).powf(cfg.beta) / (source_len as f64).powf(cfg.beta)
}

/// Universal score: length-normalized log-probability plus the progress and
/// length matching penalties (both zero on finished hypotheses).
///
/// With the length matching penalty enabled, unfinished hypotheses must
/// carry a predictor state and `encoder` must be given.
pub fn score<S>(h: &Hypothesis<S>, source_len: usize, cfg: &ScoreConfig, encoder: Option<GaussianParams>) -> f64 {
    let mut total = normalized_logprob(h, cfg.lambda);
    if cfg.pg_enabled {
        total += progress_penalty(h, source_len, cfg);
    }
    if cfg.lmp_enabled && !h.finished {
        let state = h.pred_state.as_ref().expect("length matching penalty needs a predictor state");
        let e = encoder.expect("length matching penalty needs the encoder-head Gaussian");
        total += lmp_value(lms(state.gaussian, e, cfg.lms_mode), cfg);
    }
    total
}

/// Length-normalized (lambda = 1) log-probabilities of the non-empty
/// members, sorted descending.
pub(crate) fn trace_row<S>(set: &[Hypothesis<S>]) -> Vec<f64> {
    let mut row: Vec<f64> = set.iter().filter(|h| !h.is_empty()).map(|h| normalized_logprob(h, 1.0)).collect();
    row.sort_by(|a, b| b.total_cmp(a));
    row
}

/// The `width` most probable next tokens, most probable first; ties go to
/// the lower id. Impossible tokens are skipped.
pub(crate) fn top_tokens(logprobs: &[f64], width: usize) -> Vec<(TokenId, f64)> {
    let mut cands: Vec<(TokenId, f64)> =
        logprobs.iter().copied().enumerate().filter(|(_, lp)| *lp > f64::NEG_INFINITY).collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(width);
    cands
}

/// Creates children of hypotheses, numbering them in creation order.
pub(crate) struct Expander<'a, M: SequenceModel> {
    model: &'a M,
    predictor: Option<(&'a LengthPredictor, PredictorContext)>,
    width: usize,
    next_seq: u64,
}

impl<'a, M: SequenceModel> Expander<'a, M> {
    pub(crate) fn new(model: &'a M, width: usize, predictor: Option<(&'a LengthPredictor, PredictorContext)>) -> Self {
        Expander { model, predictor, width, next_seq: 1 }
    }

    pub(crate) fn encoder_gaussian(&self) -> Option<GaussianParams> {
        self.predictor.as_ref().map(|(_, ctx)| ctx.encoder)
    }

    pub(crate) fn root(&self, state: M::State) -> Hypothesis<M::State> {
        let pred = self.predictor.as_ref().map(|(p, ctx)| p.initial_state(ctx));
        let mut root = Hypothesis::root(state, pred);
        root.cached_score = Some(0.0);
        root
    }

    /// Children of every parent, parents in the given order, each parent's
    /// children most probable first.
    pub(crate) fn expand(&mut self, parents: &[Hypothesis<M::State>]) -> Vec<Hypothesis<M::State>> {
        let eos = self.model.vocab().eos();
        let bos = self.model.vocab().bos();
        let mut out = Vec::with_capacity(parents.len() * self.width);
        for parent in parents {
            debug_assert!(!parent.finished, "finished hypotheses are never expanded");
            let step = self.model.step(&parent.model_state, parent.last_token().unwrap_or(bos));
            for (tok, lp) in top_tokens(&step.logprobs, self.width) {
                let finished = tok == eos;
                let pred_state = match (&self.predictor, &parent.pred_state) {
                    (Some((p, ctx)), Some(st)) if !finished => {
                        let emb = self.model.embed(tok).expect("model emitted an id outside its vocabulary");
                        Some(p.step(st, &emb, ctx))
                    }
                    _ => None,
                };
                let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
                tokens.extend_from_slice(&parent.tokens);
                tokens.push(tok);
                out.push(Hypothesis {
                    tokens,
                    cum_logprob: parent.cum_logprob + lp,
                    finished,
                    model_state: step.next_state.clone(),
                    pred_state,
                    cached_score: None,
                    seq_no: self.next_seq,
                });
                self.next_seq += 1;
            }
        }
        out
    }
}

/// Most probable next token at every step until EOS or `max_len` tokens.
pub fn greedy_decode<M: SequenceModel>(model: &M, source: &SourceSentence, max_len: usize) -> Result<Vec<TokenId>> {
    let (_, mut state) = model.encode(source)?;
    let (bos, eos) = (model.vocab().bos(), model.vocab().eos());
    let mut last = bos;
    let mut out = Vec::new();
    while out.len() < max_len {
        let step = model.step(&state, last);
        let Some(&(tok, _)) = top_tokens(&step.logprobs, 1).first() else {
            break;
        };
        out.push(tok);
        if tok == eos {
            break;
        }
        state = step.next_state;
        last = tok;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lengthpred::PredictorState;
    use crate::types::LmsMode;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn h(tokens: Vec<TokenId>, cum: f64, finished: bool) -> Hypothesis {
        Hypothesis { tokens, cum_logprob: cum, finished, ..Hypothesis::root((), None) }
    }

    #[test]
    fn score_examples() {
        let cfg = ScoreConfig::length_normalized(1.0).with_progress(0.7, 1.3).with_length_matching(-2.0, -100.0);
        assert_abs_diff_eq!(score(&h(vec![2, 2, 2, 1], -2.0, true), 3, &cfg, None), -0.5);

        let cfg = ScoreConfig::length_normalized(0.0).with_progress(0.3, 2.0);
        assert_abs_diff_eq!(score(&h(vec![2; 5], -1.0, false), 5, &cfg, None), -0.7, epsilon = 1e-12);

        let cfg = ScoreConfig::length_normalized(1.0).with_progress(0.4, 1.0);
        assert_abs_diff_eq!(progress_penalty(&h(vec![2; 2], -1.0, false), 4, &cfg), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn score_adds_length_penalty_for_unfinished() {
        let cfg = ScoreConfig::length_normalized(1.0).with_length_matching(-0.5, 2.0);
        let mut x = h(vec![2, 2], -1.0, false);
        x.pred_state = Some(PredictorState { h: vec![], c: vec![], gaussian: GaussianParams::new(0.0, 1.0) });
        let far = GaussianParams::new(30.0, 1.0);
        assert_abs_diff_eq!(score(&x, 4, &cfg, Some(far)), -1.0, epsilon = 1e-12);
        let near = GaussianParams::new(0.0, 1.0);
        assert_abs_diff_eq!(score(&x, 4, &cfg, Some(near)), -0.5, epsilon = 1e-12);
        let swapped = cfg.with_lms_mode(LmsMode::Swapped);
        assert_abs_diff_eq!(score(&x, 4, &swapped, Some(near)), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn top_tokens_order_and_ties() {
        let lps = [f64::NEG_INFINITY, -1.0, -0.5, -1.0, -3.0];
        assert_eq!(top_tokens(&lps, 3).iter().map(|t| t.0).collect::<Vec<_>>(), vec![2, 1, 3]);
        assert_eq!(top_tokens(&lps, 10).len(), 4);
    }

    proptest! {
        #[test]
        fn finished_scores_reduce_to_normalized(
            len in 1usize..30, cum in -40.0f64..0.0, src in 1usize..30,
            lambda in 0.0f64..2.0, alpha in -3.0f64..3.0, beta in 0.0f64..3.0,
            gamma in -3.0f64..3.0, tau in -5.0f64..5.0,
        ) {
            let cfg = ScoreConfig::length_normalized(lambda).with_progress(alpha, beta).with_length_matching(gamma, tau);
            let mut tokens = vec![2; len - 1];
            tokens.push(1);
            let x = h(tokens, cum, true);
            prop_assert_eq!(progress_penalty(&x, src, &cfg), 0.0);
            prop_assert_eq!(score(&x, src, &cfg, None), normalized_logprob(&x, lambda));
        }
    }
}
