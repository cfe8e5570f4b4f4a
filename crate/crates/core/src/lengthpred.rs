//! Gaussian length prediction and the length matching penalty.
//!
//! The encoder head maps the source summary to a Gaussian over the correct
//! output length. The decoder head runs a small LSTM over the emitted token
//! embeddings and, after every token, maps `h_l + summary` to a Gaussian over
//! the final length the hypothesis is heading for. The penalty fires when the
//! cross-entropy between the two exceeds a threshold.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnyModel, SequenceModel, SourceSummary};
use crate::nn::{
    add_assign, gaussian_head, gaussian_head_backward, gaussian_nll, gaussian_nll_grad, Activation, AdamConfig,
    AdamState, DenseLayer, LstmCell, LstmStepCache, Parameters, INIT_RANGE,
};
use crate::search::greedy_decode;
use crate::types::{GaussianParams, Hypothesis, LmsMode, ScoreConfig, SourceSentence, TokenId};

/// Dimensions of a [`LengthPredictor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub summary_dim: usize,
    pub embed_dim: usize,
    /// LSTM hidden size.
    pub hidden_dim: usize,
    /// Width of the tanh layer inside each head.
    pub head_dim: usize,
}

impl PredictorConfig {
    pub fn for_model<M: SequenceModel>(model: &M, hidden_dim: usize, head_dim: usize) -> Self {
        PredictorConfig { summary_dim: model.summary_dim(), embed_dim: model.embedding_dim(), hidden_dim, head_dim }
    }
}

/// Trainable parameters of both heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthPredictor {
    pub config: PredictorConfig,
    pub encoder_hidden: DenseLayer,
    pub encoder_out: DenseLayer,
    pub lstm: LstmCell,
    /// Maps the summary into the LSTM hidden space; present only when the
    /// two dimensions differ.
    pub projection: Option<DenseLayer>,
    pub decoder_hidden: DenseLayer,
    pub decoder_out: DenseLayer,
}

/// Recurrent state of the decoder head after `l` tokens, with the Gaussian it
/// predicts for the final length.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub gaussian: GaussianParams,
}

/// Per-source quantities computed once per decode.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorContext {
    /// Summary in LSTM hidden space.
    pub summary: Vec<f64>,
    pub encoder: GaussianParams,
}

impl LengthPredictor {
    pub fn zeros(config: PredictorConfig) -> Self {
        let PredictorConfig { summary_dim, embed_dim, hidden_dim, head_dim } = config;
        LengthPredictor {
            config,
            encoder_hidden: DenseLayer::zeros(summary_dim, head_dim, Activation::Tanh),
            encoder_out: DenseLayer::zeros(head_dim, 2, Activation::Identity),
            lstm: LstmCell::zeros(embed_dim, hidden_dim),
            projection: (summary_dim != hidden_dim)
                .then(|| DenseLayer::zeros(summary_dim, hidden_dim, Activation::Identity)),
            decoder_hidden: DenseLayer::zeros(hidden_dim, head_dim, Activation::Tanh),
            decoder_out: DenseLayer::zeros(head_dim, 2, Activation::Identity),
        }
    }

    /// Uniform(-0.1, 0.1) initialization.
    pub fn random<R: Rng + ?Sized>(config: PredictorConfig, rng: &mut R) -> Self {
        let mut p = LengthPredictor::zeros(config);
        p.randomize(rng, INIT_RANGE);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let PredictorConfig { summary_dim, embed_dim, hidden_dim, head_dim } = self.config;
        let dense_ok = |l: &DenseLayer, i, o| l.is_consistent() && l.in_dim == i && l.out_dim == o;
        let projection_ok = match &self.projection {
            Some(p) => summary_dim != hidden_dim && dense_ok(p, summary_dim, hidden_dim),
            None => summary_dim == hidden_dim,
        };
        let ok = dense_ok(&self.encoder_hidden, summary_dim, head_dim)
            && dense_ok(&self.encoder_out, head_dim, 2)
            && self.lstm.is_consistent()
            && self.lstm.input_dim == embed_dim
            && self.lstm.hidden_dim == hidden_dim
            && projection_ok
            && dense_ok(&self.decoder_hidden, hidden_dim, head_dim)
            && dense_ok(&self.decoder_out, head_dim, 2);
        if !ok {
            return Err(Error::input("length predictor parameter shapes are inconsistent"));
        }
        if !self.all_finite() {
            return Err(Error::input("length predictor has non-finite parameters"));
        }
        Ok(())
    }

    pub fn check_compatible<M: SequenceModel>(&self, model: &M) -> Result<()> {
        if self.config.summary_dim != model.summary_dim() || self.config.embed_dim != model.embedding_dim() {
            return Err(Error::config(format!(
                "length predictor expects summary/embedding dims {}/{}, model provides {}/{}",
                self.config.summary_dim,
                self.config.embed_dim,
                model.summary_dim(),
                model.embedding_dim()
            )));
        }
        Ok(())
    }

    /// Correct-length Gaussian for a source summary.
    pub fn encoder_head(&self, summary: &SourceSummary) -> GaussianParams {
        let hidden = self.encoder_hidden.forward(summary.as_slice());
        gaussian_head(&self.encoder_out.forward(&hidden))
    }

    pub fn context(&self, summary: &SourceSummary) -> PredictorContext {
        PredictorContext { summary: self.project(summary.as_slice()), encoder: self.encoder_head(summary) }
    }

    fn project(&self, summary: &[f64]) -> Vec<f64> {
        match &self.projection {
            Some(p) => p.forward(summary),
            None => {
                assert_eq!(summary.len(), self.config.hidden_dim, "summary dimension mismatch");
                summary.to_vec()
            }
        }
    }

    fn decoder_gaussian(&self, h: &[f64], summary: &[f64]) -> GaussianParams {
        let mut u = h.to_vec();
        add_assign(&mut u, summary);
        gaussian_head(&self.decoder_out.forward(&self.decoder_hidden.forward(&u)))
    }

    /// State before any token has been emitted.
    pub fn initial_state(&self, ctx: &PredictorContext) -> PredictorState {
        let d = self.config.hidden_dim;
        let (h, c) = (vec![0.0; d], vec![0.0; d]);
        let gaussian = self.decoder_gaussian(&h, &ctx.summary);
        PredictorState { h, c, gaussian }
    }

    /// Advances the decoder head by one emitted token.
    pub fn step(&self, state: &PredictorState, embedding: &[f64], ctx: &PredictorContext) -> PredictorState {
        let (h, c) = self.lstm.step(&state.h, &state.c, embedding);
        let gaussian = self.decoder_gaussian(&h, &ctx.summary);
        PredictorState { h, c, gaussian }
    }

    /// [`step`](Self::step) taking the raw source summary.
    pub fn predictor_step(&self, state: &PredictorState, embedding: &[f64], summary: &SourceSummary) -> PredictorState {
        let (h, c) = self.lstm.step(&state.h, &state.c, embedding);
        let gaussian = self.decoder_gaussian(&h, &self.project(summary.as_slice()));
        PredictorState { h, c, gaussian }
    }

    /// Loss `J` of one prepared example and its gradient with respect to
    /// every predictor parameter.
    pub fn loss_j(&self, ex: &PreparedExample) -> (f64, LengthPredictor) {
        let mut grad = LengthPredictor::zeros(self.config);

        // encoder head term
        let enc_h = self.encoder_hidden.forward(&ex.summary);
        let enc_v = self.encoder_out.forward(&enc_h);
        let enc_g = gaussian_head(&enc_v);
        let mut loss = gaussian_nll(ex.gold_length, enc_g);
        let (dmu, dsigma) = gaussian_nll_grad(ex.gold_length, enc_g);
        let dv = gaussian_head_backward(&enc_v, dmu, dsigma);
        let dh = self.encoder_out.backward(&enc_h, &enc_v, &dv, &mut grad.encoder_out);
        self.encoder_hidden.backward(&ex.summary, &enc_h, &dh, &mut grad.encoder_hidden);

        // decoder head term, averaged over the L prefixes
        let d = self.config.hidden_dim;
        let proj = self.project(&ex.summary);
        let len = ex.embeddings.len() as f64;
        let target = ex.output_length;
        let mut caches: Vec<LstmStepCache> = Vec::with_capacity(ex.embeddings.len());
        let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
        let mut dh_heads = Vec::with_capacity(ex.embeddings.len());
        let mut dproj = vec![0.0; d];
        for emb in &ex.embeddings {
            let cache = self.lstm.forward(&h, &c, emb);
            h = cache.h.clone();
            c = cache.c.clone();
            caches.push(cache);

            let mut u = h.clone();
            add_assign(&mut u, &proj);
            let hid = self.decoder_hidden.forward(&u);
            let v = self.decoder_out.forward(&hid);
            let g = gaussian_head(&v);
            loss += gaussian_nll(target, g) / len;

            let (dmu, dsigma) = gaussian_nll_grad(target, g);
            let dv = gaussian_head_backward(&v, dmu / len, dsigma / len);
            let dhid = self.decoder_out.backward(&hid, &v, &dv, &mut grad.decoder_out);
            let du = self.decoder_hidden.backward(&u, &hid, &dhid, &mut grad.decoder_hidden);
            add_assign(&mut dproj, &du);
            dh_heads.push(du);
        }

        let mut dh_next = vec![0.0; d];
        let mut dc_next = vec![0.0; d];
        for (cache, dh_head) in caches.iter().zip(&dh_heads).rev() {
            let mut dh = dh_head.clone();
            add_assign(&mut dh, &dh_next);
            let (_, dhp, dcp) = self.lstm.backward(cache, &dh, &dc_next, &mut grad.lstm);
            dh_next = dhp;
            dc_next = dcp;
        }

        if let (Some(p), Some(gp)) = (&self.projection, grad.projection.as_mut()) {
            p.backward(&ex.summary, &proj, &dproj, gp);
        }
        (loss, grad)
    }

    /// Per-example Adam over a seeded shuffle of `corpus`; returns the mean
    /// loss of each epoch.
    pub fn train(
        &mut self,
        corpus: &[PreparedExample],
        epochs: usize,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if corpus.is_empty() {
            return Err(Error::input("length predictor training corpus is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = AdamState::new(self.num_params(), adam);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &order {
                let (loss, grad) = self.loss_j(&corpus[i]);
                total += loss;
                let mut flat = self.to_flat();
                opt.step(&mut flat, &grad.to_flat());
                self.set_flat(&flat);
            }
            curve.push(total / corpus.len() as f64);
        }
        Ok(curve)
    }
}

impl Parameters for LengthPredictor {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder_hidden.visit(f);
        self.encoder_out.visit(f);
        self.lstm.visit(f);
        if let Some(p) = &self.projection {
            p.visit(f);
        }
        self.decoder_hidden.visit(f);
        self.decoder_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder_hidden.visit_mut(f);
        self.encoder_out.visit_mut(f);
        self.lstm.visit_mut(f);
        if let Some(p) = &mut self.projection {
            p.visit_mut(f);
        }
        self.decoder_hidden.visit_mut(f);
        self.decoder_out.visit_mut(f);
    }
}

/// A source with its gold length and the base model's greedy output.
///
/// Lengths count tokens including the final EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub source: SourceSentence,
    pub gold_length: usize,
    pub greedy_output: Vec<TokenId>,
}

impl TrainingExample {
    pub fn new(source: SourceSentence, gold_length: usize, greedy_output: Vec<TokenId>) -> Result<Self> {
        if greedy_output.is_empty() {
            return Err(Error::input("greedy output must contain at least one token"));
        }
        if gold_length == 0 {
            return Err(Error::input("gold length must be >= 1"));
        }
        Ok(TrainingExample { source, gold_length, greedy_output })
    }

    /// Builds an example from a source/reference pair by greedy-decoding the
    /// source with `model`. The gold length counts an implicit final EOS.
    pub fn from_pair<M: SequenceModel>(
        model: &M,
        source: SourceSentence,
        reference: &[TokenId],
        max_len: usize,
    ) -> Result<Self> {
        let eos = model.vocab().eos();
        let gold = reference.len() + usize::from(reference.last() != Some(&eos));
        let greedy = greedy_decode(model, &source, max_len)?;
        TrainingExample::new(source, gold, greedy)
    }
}

/// A [`TrainingExample`] with the frozen base-model quantities resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub summary: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    pub gold_length: f64,
    pub output_length: f64,
}

impl PreparedExample {
    pub fn new<M: SequenceModel>(model: &M, example: &TrainingExample) -> Result<Self> {
        let (summary, _) = model.encode(&example.source)?;
        let embeddings = example.greedy_output.iter().map(|&t| model.embed(t)).collect::<Result<Vec<_>>>()?;
        if embeddings.is_empty() {
            return Err(Error::input("greedy output must contain at least one token"));
        }
        Ok(PreparedExample {
            summary: summary.0,
            gold_length: example.gold_length as f64,
            output_length: embeddings.len() as f64,
            embeddings,
        })
    }
}

/// Loss `J` for a raw example against the (frozen) base model.
pub fn loss_j<M: SequenceModel>(
    params: &LengthPredictor,
    example: &TrainingExample,
    model: &M,
) -> Result<(f64, LengthPredictor)> {
    params.check_compatible(model)?;
    Ok(params.loss_j(&PreparedExample::new(model, example)?))
}

/// Length matching score between the decoder-head Gaussian `d` and the
/// encoder-head Gaussian `e`.
pub fn lms(d: GaussianParams, e: GaussianParams, mode: LmsMode) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let diff2 = (d.mu - e.mu).powi(2);
    match mode {
        LmsMode::Expectation => {
            let ve = e.sigma * e.sigma;
            0.5 * (two_pi * ve).ln() + (d.sigma * d.sigma + diff2) / (2.0 * ve)
        }
        LmsMode::Swapped => {
            let vd = d.sigma * d.sigma;
            0.5 * (two_pi * vd).ln() + (e.sigma * e.sigma + diff2) / (2.0 * vd)
        }
    }
}

/// `gamma` when the hypothesis is unfinished and its score exceeds `tau`,
/// otherwise 0.
pub fn lmp<S>(h: &Hypothesis<S>, state: &PredictorState, e: GaussianParams, cfg: &ScoreConfig) -> f64 {
    if h.finished {
        return 0.0;
    }
    lmp_value(lms(state.gaussian, e, cfg.lms_mode), cfg)
}

pub(crate) fn lmp_value(score: f64, cfg: &ScoreConfig) -> f64 {
    if score > cfg.tau {
        cfg.gamma
    } else {
        0.0
    }
}

/// Greedy-decodes every source and pairs it with its reference length.
pub fn prepare_corpus(
    model: &AnyModel,
    pairs: &[(SourceSentence, Vec<TokenId>)],
    max_len: usize,
) -> Result<Vec<PreparedExample>> {
    pairs
        .iter()
        .map(|(src, tgt)| {
            let ex = TrainingExample::from_pair(model, src.clone(), tgt, max_len)?;
            PreparedExample::new(model, &ex)
        })
        .collect()
}
