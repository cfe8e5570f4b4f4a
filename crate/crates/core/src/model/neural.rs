use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_source, ModelStepOutput, SequenceModel, SourceSummary};
use crate::error::{Error, Result};
use crate::nn::{add_assign, log_softmax, Activation, AdamConfig, AdamState, DenseLayer, Parameters, INIT_RANGE};
use crate::types::{SourceSentence, TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig { embed_dim: 8, hidden_dim: 16 }
    }
}

/// Tiny recurrent encoder-decoder.
///
/// The source summary is `tanh(W_enc * mean(embeddings of X) + b_enc)` and
/// doubles as the initial decoder state. Each decoder step computes
/// `h' = tanh(W_rec [e(last); h] + b_rec)` and emits
/// `log_softmax(W_out h' + b_out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    pub vocab: Vocab,
    pub config: NeuralConfig,
    /// `V` rows of `embed_dim`.
    pub embedding: Vec<f64>,
    pub encoder: DenseLayer,
    pub recurrent: DenseLayer,
    pub output: DenseLayer,
}

impl NeuralModel {
    pub fn zeros(vocab: Vocab, config: NeuralConfig) -> Self {
        let v = vocab.len();
        let NeuralConfig { embed_dim: e, hidden_dim: h } = config;
        NeuralModel {
            vocab,
            config,
            embedding: vec![0.0; v * e],
            encoder: DenseLayer::zeros(e, h, Activation::Tanh),
            recurrent: DenseLayer::zeros(e + h, h, Activation::Tanh),
            output: DenseLayer::zeros(h, v, Activation::Identity),
        }
    }

    pub fn random<R: Rng + ?Sized>(vocab: Vocab, config: NeuralConfig, rng: &mut R) -> Self {
        let mut m = NeuralModel::zeros(vocab, config);
        m.randomize(rng, INIT_RANGE);
        m
    }

    pub fn validate(&self) -> Result<()> {
        let NeuralConfig { embed_dim: e, hidden_dim: h } = self.config;
        let v = self.vocab.len();
        let shapes_ok = self.embedding.len() == v * e
            && self.encoder.is_consistent()
            && (self.encoder.in_dim, self.encoder.out_dim) == (e, h)
            && self.recurrent.is_consistent()
            && (self.recurrent.in_dim, self.recurrent.out_dim) == (e + h, h)
            && self.output.is_consistent()
            && (self.output.in_dim, self.output.out_dim) == (h, v);
        if !shapes_ok {
            return Err(Error::input("neural model parameter shapes are inconsistent"));
        }
        if !self.all_finite() {
            return Err(Error::input("neural model has non-finite parameters"));
        }
        Ok(())
    }

    fn embedding_row(&self, token: TokenId) -> &[f64] {
        let e = self.config.embed_dim;
        &self.embedding[token * e..(token + 1) * e]
    }

    fn mean_embedding(&self, source: &SourceSentence) -> Vec<f64> {
        let mut mean = vec![0.0; self.config.embed_dim];
        for &t in source.tokens() {
            add_assign(&mut mean, self.embedding_row(t));
        }
        let n = source.len() as f64;
        mean.iter_mut().for_each(|x| *x /= n);
        mean
    }

    fn recurrent_input(&self, token: TokenId, h: &[f64]) -> Vec<f64> {
        let mut x = self.embedding_row(token).to_vec();
        x.extend_from_slice(h);
        x
    }

    /// Teacher-forced mean token cross-entropy of `target` (EOS appended if
    /// missing) and its gradient.
    pub fn loss_and_grad(&self, source: &SourceSentence, target: &[TokenId]) -> Result<(f64, NeuralModel)> {
        check_source(&self.vocab, source)?;
        let target = with_eos(&self.vocab, target)?;
        let n = target.len() as f64;

        let mean = self.mean_embedding(source);
        let summary = self.encoder.forward(&mean);

        // forward, keeping every activation
        let mut inputs = Vec::with_capacity(target.len());
        let mut hiddens = vec![summary.clone()];
        let mut logps = Vec::with_capacity(target.len());
        let mut last = self.vocab.bos();
        let mut loss = 0.0;
        for &y in &target {
            let x = self.recurrent_input(last, hiddens.last().unwrap());
            let h = self.recurrent.forward(&x);
            let lp = log_softmax(&self.output.forward(&h));
            loss -= lp[y];
            inputs.push((last, x));
            hiddens.push(h);
            logps.push(lp);
            last = y;
        }
        loss /= n;

        let mut grad = self.zeros_like();
        let e = self.config.embed_dim;
        let mut dh_next = vec![0.0; self.config.hidden_dim];
        for k in (0..target.len()).rev() {
            let h = &hiddens[k + 1];
            let mut dlogits: Vec<f64> = logps[k].iter().map(|lp| lp.exp() / n).collect();
            dlogits[target[k]] -= 1.0 / n;
            let logits = self.output.forward(h);
            let mut dh = self.output.backward(h, &logits, &dlogits, &mut grad.output);
            add_assign(&mut dh, &dh_next);

            let (tok, x) = &inputs[k];
            let dx = self.recurrent.backward(x, h, &dh, &mut grad.recurrent);
            add_assign(&mut grad.embedding[tok * e..(tok + 1) * e], &dx[..e]);
            dh_next = dx[e..].to_vec();
        }
        let dmean = self.encoder.backward(&mean, &summary, &dh_next, &mut grad.encoder);
        let scale = 1.0 / source.len() as f64;
        for &t in source.tokens() {
            for (g, d) in grad.embedding[t * e..(t + 1) * e].iter_mut().zip(&dmean) {
                *g += d * scale;
            }
        }
        Ok((loss, grad))
    }

    /// Per-example Adam over a parallel corpus; returns the mean loss of
    /// each epoch.
    pub fn train(
        &mut self,
        corpus: &[(SourceSentence, Vec<TokenId>)],
        epochs: usize,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if corpus.is_empty() {
            return Err(Error::input("training corpus is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = AdamState::new(self.num_params(), adam);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &order {
                let (src, tgt) = &corpus[i];
                let (loss, grad) = self.loss_and_grad(src, tgt)?;
                total += loss;
                let mut flat = self.to_flat();
                opt.step(&mut flat, &grad.to_flat());
                self.set_flat(&flat);
            }
            curve.push(total / corpus.len() as f64);
        }
        Ok(curve)
    }

    fn zeros_like(&self) -> NeuralModel {
        NeuralModel::zeros(self.vocab.clone(), self.config)
    }
}

pub(crate) fn with_eos(vocab: &Vocab, target: &[TokenId]) -> Result<Vec<TokenId>> {
    for &t in target {
        vocab.check(t)?;
    }
    let mut out = target.to_vec();
    if out.last() != Some(&vocab.eos()) {
        out.push(vocab.eos());
    }
    Ok(out)
}

impl Parameters for NeuralModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.embedding);
        self.encoder.visit(f);
        self.recurrent.visit(f);
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.embedding);
        self.encoder.visit_mut(f);
        self.recurrent.visit_mut(f);
        self.output.visit_mut(f);
    }
}

impl SequenceModel for NeuralModel {
    type State = Arc<Vec<f64>>;

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn summary_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn embedding_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn encode(&self, source: &SourceSentence) -> Result<(SourceSummary, Self::State)> {
        check_source(&self.vocab, source)?;
        let summary = self.encoder.forward(&self.mean_embedding(source));
        Ok((SourceSummary(summary.clone()), Arc::new(summary)))
    }

    fn step(&self, state: &Self::State, last_token: TokenId) -> ModelStepOutput<Self::State> {
        let h = self.recurrent.forward(&self.recurrent_input(last_token, state));
        let logprobs = log_softmax(&self.output.forward(&h));
        ModelStepOutput { logprobs, next_state: Arc::new(h) }
    }

    fn embed(&self, token: TokenId) -> Result<Vec<f64>> {
        self.vocab.check(token)?;
        Ok(self.embedding_row(token).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sequence_logprob;
    use crate::nn::{check_gradients, logsumexp};
    use approx::assert_abs_diff_eq;

    fn vocab() -> Vocab {
        Vocab::synthetic(4).unwrap()
    }

    #[test]
    fn zero_weights_summary_is_bias_activation() {
        // 2-unit encoder: with zero weights the summary is tanh(bias)
        let mut m = NeuralModel::zeros(vocab(), NeuralConfig { embed_dim: 2, hidden_dim: 2 });
        m.encoder.bias = vec![0.5, -1.0];
        let (s, state) = m.encode(&SourceSentence::new(vec![2, 3]).unwrap()).unwrap();
        assert_abs_diff_eq!(s.0[0], 0.5f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.0[1], (-1.0f64).tanh(), epsilon = 1e-15);
        assert_eq!(*state, s.0);

        let zero = NeuralModel::zeros(vocab(), NeuralConfig { embed_dim: 2, hidden_dim: 2 });
        let (s, _) = zero.encode(&SourceSentence::new(vec![2]).unwrap()).unwrap();
        assert_eq!(s.0, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_embedding_table() {
        let mut m = NeuralModel::zeros(vocab(), NeuralConfig { embed_dim: 4, hidden_dim: 2 });
        for t in 0..4 {
            m.embedding[t * 4 + t] = 1.0;
        }
        assert_eq!(m.embed(2).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.embed(2).unwrap(), m.embed(2).unwrap());
        assert!(m.embed(7).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = NeuralModel::zeros(vocab(), NeuralConfig::default());
        let (_, st) = m.encode(&SourceSentence::new(vec![2]).unwrap()).unwrap();
        for lp in m.step(&st, 0).logprobs {
            assert_abs_diff_eq!(lp, 0.25f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn steps_are_valid_and_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = NeuralModel::random(vocab(), NeuralConfig::default(), &mut rng);
        let src = SourceSentence::new(vec![2, 3, 2]).unwrap();
        let (_, st) = m.encode(&src).unwrap();
        let a = m.step(&st, 0);
        let b = m.step(&st, 0);
        assert_eq!(a.logprobs, b.logprobs);
        assert!(logsumexp(&a.logprobs).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_chained_logprob() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = NeuralModel::random(vocab(), NeuralConfig::default(), &mut rng);
        let src = SourceSentence::new(vec![3, 2]).unwrap();
        let (loss, _) = m.loss_and_grad(&src, &[2, 3]).unwrap();
        let lp = sequence_logprob(&m, &src, &[2, 3, 1]).unwrap();
        assert_abs_diff_eq!(loss, -lp / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut m = NeuralModel::random(vocab(), NeuralConfig { embed_dim: 3, hidden_dim: 4 }, &mut rng);
        m.randomize(&mut rng, 0.6);
        let src = SourceSentence::new(vec![2, 3, 3]).unwrap();
        let target = [3, 2];
        let (_, grad) = m.loss_and_grad(&src, &target).unwrap();
        let err = check_gradients(
            |p| {
                let mut probe = m.clone();
                probe.set_flat(p);
                probe.loss_and_grad(&src, &target).unwrap().0
            },
            &m.to_flat(),
            &grad.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn training_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = NeuralModel::random(vocab(), NeuralConfig::default(), &mut rng);
        let corpus: Vec<_> = (1..5).map(|n| (SourceSentence::new(vec![2; n]).unwrap(), vec![3; n])).collect();
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let curve = m.train(&corpus, 30, cfg, 1).unwrap();
        assert!(curve.last().unwrap() < &curve[0], "{curve:?}");
        assert!(m.train(&[], 1, cfg, 1).is_err());
    }
}
