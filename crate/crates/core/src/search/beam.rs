use std::time::Instant;

use super::{trace_row, Expander, Scorer};
use crate::error::Result;
use crate::model::SequenceModel;
use crate::types::{compare_hypotheses, DecodeResult, Hypothesis, SearchConfig, SourceSentence};

/// Fixed-width beam search.
///
/// Every step expands the live beam by its `B` best next tokens each, keeps
/// the `B` best candidates under `scorer`, moves finished ones to the
/// completed set and continues with the rest. Stops once `B` hypotheses have
/// finished, the beam empties, or `max_steps` is reached.
pub fn beam_search<M: SequenceModel>(
    model: &M,
    source: &SourceSentence,
    cfg: &SearchConfig,
    scorer: Scorer,
) -> Result<DecodeResult> {
    cfg.validate()?;
    let started = Instant::now();
    let (_, state) = model.encode(source)?;
    let mut expander = Expander::new(model, cfg.beam_size, None);
    let root = expander.root(state);

    let mut beam = vec![root.clone()];
    let mut completed: Vec<Hypothesis<M::State>> = Vec::new();
    let mut trace = Vec::new();
    let mut steps = 0;
    let mut peak = 1;

    while steps < cfg.max_steps && !beam.is_empty() {
        steps += 1;
        trace.push(trace_row(&beam));

        let mut cands = expander.expand(&beam);
        for c in &mut cands {
            c.cached_score = Some(scorer.score(c));
        }
        cands.sort_by(compare_hypotheses);
        cands.truncate(cfg.beam_size);

        let (done, live): (Vec<_>, Vec<_>) = cands.into_iter().partition(|h| h.finished);
        completed.extend(done);
        beam = live;
        peak = peak.max(beam.len() + completed.len());
        if completed.len() >= cfg.beam_size {
            break;
        }
    }

    completed.sort_by(compare_hypotheses);
    let (best, fallback) = match completed.first() {
        Some(h) => (h.strip_state(), false),
        None => {
            beam.sort_by(compare_hypotheses);
            (beam.first().unwrap_or(&root).strip_state(), true)
        }
    };
    Ok(DecodeResult {
        best,
        fallback,
        all_finished: completed.iter().map(Hypothesis::strip_state).collect(),
        steps_taken: steps,
        rank_score_trace: trace,
        peak_queue_len: peak,
        elapsed: started.elapsed(),
    })
}
