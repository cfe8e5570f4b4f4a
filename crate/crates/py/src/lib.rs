//! Python bindings: load or generate models, decode with beam search or
//! single-queue decoding, query the exhaustive oracle, and train the length
//! predictor.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqd_core::lengthpred::{lms as lms_score, prepare_corpus, PredictorConfig};
use sqd_core::model::{sequence_logprob, FixtureConfig, NeuralConfig};
use sqd_core::nn::AdamConfig;
use sqd_core::search::collect_rank_stats;
use sqd_core::types::normalized_logprob;
use sqd_core::{
    beam_search, exhaustive_best, single_queue_decode, AnyModel, DecodeResult, GaussianParams, LengthPredictor,
    LmsMode, ModelFile, NeuralModel, ScoreConfig, Scorer, SearchConfig, SequenceModel, SourceSentence, TabularModel,
    TokenId, Vocab,
};

fn err(e: sqd_core::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn lms_mode(name: &str) -> PyResult<LmsMode> {
    match name {
        "expectation" => Ok(LmsMode::Expectation),
        "swapped" => Ok(LmsMode::Swapped),
        other => Err(PyValueError::new_err(format!("unknown lms mode `{other}`"))),
    }
}

/// A base model plus an optional trained length predictor.
#[pyclass(name = "Model", module = "sqd")]
struct PyModel {
    file: ModelFile,
}

impl PyModel {
    fn model(&self) -> &AnyModel {
        &self.file.model
    }

    fn source(&self, tokens: Vec<TokenId>) -> PyResult<SourceSentence> {
        for &t in &tokens {
            self.model().vocab().check(t).map_err(err)?;
        }
        SourceSentence::new(tokens).map_err(err)
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel { file: ModelFile::load(path).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel { file: ModelFile::from_json(text).map_err(err)? })
    }

    /// Seeded random automaton over `vocab_size` tokens.
    #[staticmethod]
    #[pyo3(signature = (vocab_size=8, num_states=8, seed=0, summary_dim=8, sharpness=2.0, eos_scale=0.5))]
    fn random_tabular(
        vocab_size: usize,
        num_states: usize,
        seed: u64,
        summary_dim: usize,
        sharpness: f64,
        eos_scale: f64,
    ) -> PyResult<Self> {
        let cfg = FixtureConfig { vocab_size, num_states, summary_dim, sharpness, eos_scale };
        let model = TabularModel::random(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
        Ok(PyModel { file: ModelFile::new(AnyModel::Tabular(model)) })
    }

    /// Seeded random (untrained) recurrent model.
    #[staticmethod]
    #[pyo3(signature = (vocab_size=8, seed=0, embed_dim=8, hidden_dim=16))]
    fn random_neural(vocab_size: usize, seed: u64, embed_dim: usize, hidden_dim: usize) -> PyResult<Self> {
        let vocab = Vocab::synthetic(vocab_size).map_err(err)?;
        let model =
            NeuralModel::random(vocab, NeuralConfig { embed_dim, hidden_dim }, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(PyModel { file: ModelFile::new(AnyModel::Neural(model)) })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.file.save(path).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.file.to_json().map_err(err)
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.model().vocab().tokens().to_vec()
    }

    #[getter]
    fn bos(&self) -> TokenId {
        self.model().vocab().bos()
    }

    #[getter]
    fn eos(&self) -> TokenId {
        self.model().vocab().eos()
    }

    #[getter]
    fn has_length_predictor(&self) -> bool {
        self.file.length_predictor.is_some()
    }

    /// Token ids for a whitespace-separated sentence of token strings or ids.
    fn parse(&self, sentence: &str) -> PyResult<Vec<TokenId>> {
        self.model().vocab().parse_line(sentence).map_err(err)
    }

    fn render(&self, ids: Vec<TokenId>) -> String {
        self.model().vocab().render(&ids)
    }

    /// Log-probability of `output` (EOS included if present) given `source`.
    fn logprob(&self, source: Vec<TokenId>, output: Vec<TokenId>) -> PyResult<f64> {
        let src = self.source(source)?;
        sequence_logprob(self.model(), &src, &output).map_err(err)
    }

    /// Decodes `source` with `strategy` in {"beam", "beam-lnorm", "sqd"}.
    #[pyo3(signature = (
        source, strategy="sqd", beam_size=5, max_steps=150, retain_size=None, queue_capacity=None,
        lambda_=1.0, alpha=0.0, beta=1.0, gamma=0.0, tau=0.0, lms_mode="expectation"
    ))]
    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        source: Vec<TokenId>,
        strategy: &str,
        beam_size: usize,
        max_steps: usize,
        retain_size: Option<usize>,
        queue_capacity: Option<usize>,
        lambda_: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        tau: f64,
        lms_mode: &str,
    ) -> PyResult<PyDecodeResult> {
        let src = self.source(source)?;
        let mut cfg = SearchConfig::new(beam_size).with_max_steps(max_steps);
        if let Some(r) = retain_size {
            cfg = cfg.with_retain_size(r);
        }
        if let Some(c) = queue_capacity {
            cfg = cfg.with_queue_capacity(c);
        }
        let model = self.model();
        let result = match strategy {
            "beam" => beam_search(model, &src, &cfg, Scorer::Vanilla),
            "beam-lnorm" => beam_search(model, &src, &cfg, Scorer::LengthNorm { lambda: lambda_ }),
            "sqd" => {
                let mut sc = ScoreConfig::length_normalized(lambda_).with_lms_mode(self::lms_mode(lms_mode)?);
                if alpha != 0.0 {
                    sc = sc.with_progress(alpha, beta);
                }
                if gamma != 0.0 {
                    sc = sc.with_length_matching(gamma, tau);
                }
                single_queue_decode(model, &src, &cfg, &sc, self.file.length_predictor.as_ref())
            }
            other => return Err(PyValueError::new_err(format!("unknown strategy `{other}`"))),
        }
        .map_err(err)?;
        Ok(PyDecodeResult::new(model.vocab(), result))
    }

    /// Best EOS-terminated output of at most `max_len` tokens by enumeration;
    /// raw log-probability when `lambda_` is None. Returns (tokens, score).
    #[pyo3(signature = (source, max_len, lambda_=None))]
    fn exhaustive_best(
        &self,
        source: Vec<TokenId>,
        max_len: usize,
        lambda_: Option<f64>,
    ) -> PyResult<Option<(Vec<TokenId>, f64)>> {
        let src = self.source(source)?;
        let scorer = lambda_.map_or(Scorer::Vanilla, |lambda| Scorer::LengthNorm { lambda });
        let best = exhaustive_best(self.model(), &src, max_len, scorer).map_err(err)?;
        Ok(best.map(|h| (h.tokens.clone(), h.score())))
    }

    /// Trains a fresh length predictor on (source, reference) id pairs and
    /// attaches it. Returns the mean loss per epoch.
    #[pyo3(signature = (pairs, epochs=2, learning_rate=1e-3, hidden_dim=16, head_dim=16, seed=0, max_len=150))]
    #[allow(clippy::too_many_arguments)]
    fn train_length_predictor(
        &mut self,
        py: Python<'_>,
        pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
        epochs: usize,
        learning_rate: f64,
        hidden_dim: usize,
        head_dim: usize,
        seed: u64,
        max_len: usize,
    ) -> PyResult<Vec<f64>> {
        let pairs = pairs.into_iter().map(|(s, t)| Ok((self.source(s)?, t))).collect::<PyResult<Vec<_>>>()?;
        let model = &self.file.model;
        let (predictor, losses) = py
            .detach(|| -> sqd_core::Result<_> {
                let corpus = prepare_corpus(model, &pairs, max_len)?;
                let cfg = PredictorConfig::for_model(model, hidden_dim, head_dim);
                let mut p = LengthPredictor::random(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
                let losses =
                    p.train(&corpus, epochs, AdamConfig { lr: learning_rate, ..AdamConfig::default() }, seed)?;
                Ok((p, losses))
            })
            .map_err(err)?;
        self.file.length_predictor = Some(predictor);
        Ok(losses)
    }

    /// (mu, sigma) the encoder head predicts for the output length.
    fn predicted_length(&self, source: Vec<TokenId>) -> PyResult<(f64, f64)> {
        let p = self
            .file
            .length_predictor
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model has no length predictor"))?;
        let (summary, _) = self.model().encode(&self.source(source)?).map_err(err)?;
        let g = p.encoder_head(&summary);
        Ok((g.mu, g.sigma))
    }
}

#[pyclass(name = "DecodeResult", module = "sqd", get_all)]
struct PyDecodeResult {
    tokens: Vec<TokenId>,
    output: String,
    score: f64,
    cum_logprob: f64,
    norm_logprob: f64,
    finished: bool,
    fallback: bool,
    steps: usize,
    peak_queue_len: usize,
    /// Per step, normalized scores of the selected hypotheses, best first.
    trace: Vec<Vec<f64>>,
    /// Every finished hypothesis as (tokens, score).
    finished_hypotheses: Vec<(Vec<TokenId>, f64)>,
}

impl PyDecodeResult {
    fn new(vocab: &Vocab, r: DecodeResult) -> Self {
        let best = &r.best;
        PyDecodeResult {
            output: vocab.render(&best.tokens),
            score: best.cached_score.unwrap_or(f64::NEG_INFINITY),
            cum_logprob: best.cum_logprob,
            norm_logprob: if best.is_empty() { best.cum_logprob } else { normalized_logprob(best, 1.0) },
            finished: best.finished,
            fallback: r.fallback,
            steps: r.steps_taken,
            peak_queue_len: r.peak_queue_len,
            finished_hypotheses: r.all_finished.iter().map(|h| (h.tokens.clone(), h.score())).collect(),
            trace: r.rank_score_trace,
            tokens: best.tokens.clone(),
        }
    }
}

#[pymethods]
impl PyDecodeResult {
    fn __repr__(&self) -> String {
        format!(
            "DecodeResult(output={:?}, score={:.4}, steps={}, fallback={})",
            self.output, self.score, self.steps, self.fallback
        )
    }
}

/// Length matching score between decoder-head and encoder-head Gaussians.
#[pyfunction]
#[pyo3(signature = (mu_d, sigma_d, mu_e, sigma_e, mode="expectation"))]
fn lms(mu_d: f64, sigma_d: f64, mu_e: f64, sigma_e: f64, mode: &str) -> PyResult<f64> {
    Ok(lms_score(GaussianParams::new(mu_d, sigma_d), GaussianParams::new(mu_e, sigma_e), lms_mode(mode)?))
}

/// Mean score per (step, rank) over several traces: rows of
/// (step, rank, mean_score, count).
#[pyfunction]
fn rank_stats(traces: Vec<Vec<Vec<f64>>>, beam_size: usize) -> Vec<(usize, usize, f64, usize)> {
    collect_rank_stats(traces.iter().map(Vec::as_slice), beam_size)
        .into_iter()
        .map(|s| (s.step, s.rank, s.mean_score, s.count))
        .collect()
}

#[pymodule]
fn sqd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDecodeResult>()?;
    m.add_function(wrap_pyfunction!(lms, m)?)?;
    m.add_function(wrap_pyfunction!(rank_stats, m)?)?;
    Ok(())
}
