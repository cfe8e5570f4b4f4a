use super::{top_tokens, Scorer};
use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::types::{Hypothesis, SourceSentence, TokenId};

/// Largest `V^max_len` the oracle agrees to enumerate.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Best EOS-terminated sequence of at most `max_len` tokens under `scorer`,
/// by enumerating every sequence. Ties go to the lexicographically smaller
/// token sequence. `None` if no such sequence has nonzero probability.
pub fn exhaustive_best<M: SequenceModel>(
    model: &M,
    source: &SourceSentence,
    max_len: usize,
    scorer: Scorer,
) -> Result<Option<Hypothesis>> {
    let v = model.vocab().len();
    let count = (v as f64).powi(max_len as i32);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { count, limit: ENUMERATION_LIMIT });
    }
    let (_, state) = model.encode(source)?;
    let mut search = Enumeration { model, scorer, max_len, best: None };
    let mut prefix = Vec::with_capacity(max_len);
    search.visit(&state, &mut prefix, 0.0);
    Ok(search.best)
}

struct Enumeration<'a, M: SequenceModel> {
    model: &'a M,
    scorer: Scorer,
    max_len: usize,
    best: Option<Hypothesis>,
}

impl<M: SequenceModel> Enumeration<'_, M> {
    fn visit(&mut self, state: &M::State, prefix: &mut Vec<TokenId>, cum: f64) {
        if prefix.len() >= self.max_len {
            return;
        }
        let vocab = self.model.vocab();
        let (bos, eos) = (vocab.bos(), vocab.eos());
        let step = self.model.step(state, prefix.last().copied().unwrap_or(bos));
        for (tok, lp) in top_tokens(&step.logprobs, usize::MAX) {
            prefix.push(tok);
            if tok == eos {
                self.offer(prefix, cum + lp);
            } else {
                self.visit(&step.next_state, prefix, cum + lp);
            }
            prefix.pop();
        }
    }

    fn offer(&mut self, tokens: &[TokenId], cum: f64) {
        let mut h =
            Hypothesis { tokens: tokens.to_vec(), cum_logprob: cum, finished: true, ..Hypothesis::root((), None) };
        let s = self.scorer.score(&h);
        let better = match &self.best {
            None => true,
            Some(b) => {
                let bs = b.score();
                s > bs || (s == bs && h.tokens < b.tokens)
            }
        };
        if better {
            h.cached_score = Some(s);
            self.best = Some(h);
        }
    }
}
