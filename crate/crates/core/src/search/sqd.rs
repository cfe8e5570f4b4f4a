use std::time::Instant;

use super::{score, trace_row, Expander, HypothesisQueue};
use crate::error::{Error, Result};
use crate::lengthpred::LengthPredictor;
use crate::model::SequenceModel;
use crate::types::{compare_hypotheses, DecodeResult, Hypothesis, ScoreConfig, SearchConfig, SourceSentence};

/// Single-queue decoding.
///
/// All hypotheses of every length share one priority queue ordered by the
/// universal score. Each step removes the best `B` unfinished hypotheses,
/// expands each by its most probable next tokens, scores the candidates
/// (finished ones without penalties), merges the best `retain_size` back and
/// stops once the queue holds `B` finished hypotheses. Hypotheses that lose
/// out in one step stay queued and can be picked up again later.
///
/// `predictor` is required exactly when the length matching penalty is on.
pub fn single_queue_decode<M: SequenceModel>(
    model: &M,
    source: &SourceSentence,
    cfg: &SearchConfig,
    score_cfg: &ScoreConfig,
    predictor: Option<&LengthPredictor>,
) -> Result<DecodeResult> {
    cfg.validate()?;
    score_cfg.validate()?;
    let started = Instant::now();
    let (summary, state) = model.encode(source)?;

    let predictor = match (score_cfg.lmp_enabled, predictor) {
        (true, Some(p)) => {
            p.check_compatible(model)?;
            Some((p, p.context(&summary)))
        }
        (true, None) => return Err(Error::config("length matching penalty enabled without a length predictor")),
        (false, _) => None,
    };
    let mut expander = Expander::new(model, cfg.expansion_width(), predictor);
    let encoder = expander.encoder_gaussian();
    let source_len = source.len();

    let mut queue = HypothesisQueue::new(cfg.queue_capacity);
    let root = expander.root(state);
    queue.push(root.clone());

    let mut trace = Vec::new();
    let mut steps = 0;
    let mut peak = queue.len();
    while steps < cfg.max_steps {
        let selected = queue.pop_best_unfinished(cfg.beam_size);
        if selected.is_empty() {
            break;
        }
        steps += 1;
        trace.push(trace_row(&selected));

        let mut cands = expander.expand(&selected);
        for c in &mut cands {
            c.cached_score = Some(score(c, source_len, score_cfg, encoder));
        }
        cands.sort_by(compare_hypotheses);
        cands.truncate(cfg.retain_size);
        for c in cands {
            queue.push(c);
        }
        peak = peak.max(queue.len());
        if queue.finished_count() >= cfg.beam_size {
            break;
        }
    }

    let (best, fallback) = match (queue.best_finished(), queue.best_unfinished()) {
        (Some(h), _) => (h.strip_state(), false),
        (None, Some(h)) => (h.strip_state(), true),
        (None, None) => (root.strip_state(), true),
    };
    Ok(DecodeResult {
        best,
        fallback,
        all_finished: queue.finished().map(Hypothesis::strip_state).collect(),
        steps_taken: steps,
        rank_score_trace: trace,
        peak_queue_len: peak,
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lengthpred::PredictorConfig;
    use crate::model::{StartRule, TabularModel, TabularState};
    use crate::search::{beam_search, Scorer};
    use crate::types::Vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        let toks = ["<s>", "</s>", "a", "b"].iter().map(|s| s.to_string()).collect();
        Vocab::new(toks, 0, 1).unwrap()
    }

    fn src() -> SourceSentence {
        SourceSentence::new(vec![2, 3]).unwrap()
    }

    #[test]
    fn dominant_eos_finishes_in_one_step() {
        let states = vec![TabularState { probs: vec![0.0, 0.9, 0.05, 0.05], next: vec![0; 4] }];
        let m = TabularModel::new(vocab(), 0, 0, StartRule::Fixed, states, vec![]).unwrap();
        let cfg = SearchConfig::new(1);
        let r = single_queue_decode(&m, &src(), &cfg, &ScoreConfig::default(), None).unwrap();
        assert_eq!(r.best.tokens, vec![1]);
        assert_eq!(r.steps_taken, 1);
        assert!(!r.fallback);
    }

    #[test]
    fn lmp_requires_predictor() {
        let states = vec![TabularState { probs: vec![0.0, 0.9, 0.05, 0.05], next: vec![0; 4] }];
        let m = TabularModel::new(vocab(), 2, 0, StartRule::Fixed, states, vec![]).unwrap();
        let sc = ScoreConfig::default().with_length_matching(-1.0, 2.0);
        let err = single_queue_decode(&m, &src(), &SearchConfig::new(2), &sc, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let wrong =
            LengthPredictor::zeros(PredictorConfig { summary_dim: 3, embed_dim: 4, hidden_dim: 2, head_dim: 2 });
        assert!(single_queue_decode(&m, &src(), &SearchConfig::new(2), &sc, Some(&wrong)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LengthPredictor::random(PredictorConfig::for_model(&m, 2, 2), &mut rng);
        let r = single_queue_decode(&m, &src(), &SearchConfig::new(2), &sc, Some(&p)).unwrap();
        assert_eq!(r.best.tokens, vec![1]);
    }

    #[test]
    fn revisits_discarded_prefix() {
        // `a` looks better first but only `b` leads to a likely EOS
        let toks = ["<s>", "</s>", "a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let vocab = Vocab::new(toks, 0, 1).unwrap();
        let states = vec![
            TabularState { probs: vec![0.0, 0.0, 0.55, 0.45, 0.0, 0.0], next: vec![0, 0, 1, 2, 0, 0] },
            TabularState { probs: vec![0.0, 0.01, 0.33, 0.33, 0.33, 0.0], next: vec![3; 6] },
            TabularState { probs: vec![0.0, 0.99, 0.0025, 0.0025, 0.0025, 0.0025], next: vec![3; 6] },
            TabularState { probs: vec![0.0, 0.5, 0.125, 0.125, 0.125, 0.125], next: vec![3; 6] },
        ];
        let m = TabularModel::new(vocab, 0, 0, StartRule::Fixed, states, vec![]).unwrap();
        let cfg = SearchConfig::new(1).with_max_steps(10);
        let beam = beam_search(&m, &src(), &cfg, Scorer::LengthNorm { lambda: 1.0 }).unwrap();
        assert_eq!(beam.best.tokens, vec![2, 2, 1]);
        let sqd = single_queue_decode(&m, &src(), &cfg, &ScoreConfig::length_normalized(1.0), None).unwrap();
        assert_eq!(sqd.best.tokens, vec![3, 1]);
        // step 2 expanded `a`, step 3 went back to `b`
        assert_eq!(sqd.steps_taken, 3);
        assert!(sqd.best.score() > beam.best.score());
    }

    #[test]
    fn step_budget_and_fallback() {
        let states = vec![TabularState { probs: vec![0.0, 0.0, 0.5, 0.5], next: vec![0; 4] }];
        let m = TabularModel::new(vocab(), 0, 0, StartRule::Fixed, states, vec![]).unwrap();
        let cfg = SearchConfig::new(2).with_max_steps(4);
        let r = single_queue_decode(&m, &src(), &cfg, &ScoreConfig::default(), None).unwrap();
        assert!(r.fallback);
        assert_eq!(r.steps_taken, 4);
        assert!(r.peak_queue_len <= 1 + 4 * cfg.retain_size);
    }

    #[test]
    fn capacity_bounds_queue() {
        let states = vec![TabularState { probs: vec![0.0, 0.01, 0.5, 0.49], next: vec![0; 4] }];
        let m = TabularModel::new(vocab(), 0, 0, StartRule::Fixed, states, vec![]).unwrap();
        let cfg = SearchConfig::new(2).with_max_steps(30).with_queue_capacity(6);
        let r = single_queue_decode(&m, &src(), &cfg, &ScoreConfig::default(), None).unwrap();
        assert!(r.peak_queue_len <= 6 + cfg.retain_size);
    }
}
