use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sqd_core::lengthpred::{prepare_corpus, PredictorConfig};
use sqd_core::model::{FixtureConfig, NeuralConfig};
use sqd_core::nn::{AdamConfig, Parameters};
use sqd_core::search::collect_rank_stats;
use sqd_core::{
    beam_search, single_queue_decode, AnyModel, DecodeResult, LengthPredictor, ModelFile, NeuralModel, Scorer,
    SequenceModel, SourceSentence, TabularModel, TokenId, Vocab,
};

use crate::corpus::{read_parallel, read_sources};
use crate::error::{CliError, CliResult};
use crate::results::{Footer, Header, Record, ResultsFile, RESULTS_FORMAT, RESULTS_VERSION};
use crate::settings::{DecodeSettings, Strategy};

/// Decodes one source under `settings`.
pub fn decode_one<M: SequenceModel>(
    model: &M,
    predictor: Option<&LengthPredictor>,
    settings: &DecodeSettings,
    source: &SourceSentence,
) -> sqd_core::Result<DecodeResult> {
    let cfg = settings.search_config();
    match settings.strategy {
        Strategy::Beam => beam_search(model, source, &cfg, Scorer::Vanilla),
        Strategy::BeamLnorm => beam_search(model, source, &cfg, Scorer::LengthNorm { lambda: settings.lambda }),
        Strategy::Sqd => single_queue_decode(model, source, &cfg, &settings.score_config(), predictor),
    }
}

/// Decodes every source in parallel; results keep the input order.
pub fn decode_all<M: SequenceModel>(
    model: &M,
    predictor: Option<&LengthPredictor>,
    settings: &DecodeSettings,
    sources: &[SourceSentence],
) -> CliResult<Vec<DecodeResult>> {
    if settings.strategy == Strategy::Sqd && settings.gamma != 0.0 && predictor.is_none() {
        return Err(CliError::input("--gamma needs a model file with a trained length predictor (see train-lmp)"));
    }
    Ok(sources.par_iter().map(|s| decode_one(model, predictor, settings, s)).collect::<sqd_core::Result<Vec<_>>>()?)
}

pub fn load_model(path: &Path) -> CliResult<ModelFile> {
    ModelFile::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Decodes a corpus file into a results file.
pub fn decode_corpus(
    model_path: &Path,
    corpus_path: &Path,
    settings: &DecodeSettings,
    timings: bool,
) -> CliResult<ResultsFile> {
    let file = load_model(model_path)?;
    let sources = read_sources(corpus_path, file.model.vocab())?;
    let results = decode_all(&file.model, file.length_predictor.as_ref(), settings, &sources)?;
    let vocab = file.model.vocab();
    let records: Vec<Record> =
        results.iter().enumerate().map(|(i, r)| Record::new(i, vocab, r, settings.trace, timings)).collect();
    Ok(ResultsFile {
        header: Header {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION,
            model: model_path.display().to_string(),
            corpus: corpus_path.display().to_string(),
            settings: settings.clone(),
        },
        footer: Footer::summarize(&records),
        records,
    })
}

pub fn cmd_decode(
    model: &Path,
    corpus: &Path,
    settings: &DecodeSettings,
    timings: bool,
    out: Option<&Path>,
) -> CliResult<ResultsFile> {
    let results = decode_corpus(model, corpus, settings, timings)?;
    write_output(out, &results.to_jsonl()?)?;
    Ok(results)
}

/// Options of `train-lmp`.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub head_dim: usize,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 2, learning_rate: 1e-3, hidden_dim: 16, head_dim: 16, seed: 0, max_len: 150 }
    }
}

/// Trains a length predictor for the model in `model_path` on a parallel
/// corpus and writes the model file with the predictor attached. Returns the
/// per-epoch mean loss.
pub fn cmd_train_lmp(
    model_path: &Path,
    corpus_path: &Path,
    out: &Path,
    loss_out: Option<&Path>,
    opts: &TrainOptions,
) -> CliResult<Vec<f64>> {
    let mut file = load_model(model_path)?;
    let pairs = read_parallel(corpus_path, file.model.vocab())?;
    if pairs.is_empty() {
        return Err(CliError::input(format!("{}: corpus is empty", corpus_path.display())));
    }
    let prepared = prepare_corpus(&file.model, &pairs, opts.max_len)?;
    let cfg = PredictorConfig::for_model(&file.model, opts.hidden_dim, opts.head_dim);
    let mut predictor = LengthPredictor::random(cfg, &mut ChaCha8Rng::seed_from_u64(opts.seed));
    let adam = AdamConfig { lr: opts.learning_rate, ..AdamConfig::default() };
    let losses = predictor.train(&prepared, opts.epochs, adam, opts.seed)?;
    if !predictor.all_finite() {
        return Err(CliError::Internal("training diverged to non-finite parameters".into()));
    }
    file.length_predictor = Some(predictor);
    file.save(out).map_err(|e| CliError::input(format!("cannot write {}: {e}", out.display())))?;
    if let Some(path) = loss_out {
        let mut csv = String::from("epoch,mean_loss\n");
        for (i, l) in losses.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        write_output(Some(path), &csv)?;
    }
    Ok(losses)
}

/// One axis of a sweep: explicit values, or a range sampled uniformly.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Values(Vec<f64>),
    Range(f64, f64),
}

/// Parses `name=v1,v2,...` or `name=lo..hi`.
pub fn parse_axis(text: &str) -> CliResult<(String, SweepAxis)> {
    let bad = || CliError::input(format!("bad sweep axis `{text}`; expected name=v1,v2 or name=lo..hi"));
    let (name, rest) = text.split_once('=').ok_or_else(bad)?;
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let axis = match rest.split_once("..") {
        Some((lo, hi)) => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(bad());
            }
            SweepAxis::Range(lo, hi)
        }
        None => SweepAxis::Values(rest.split(',').map(num).collect::<CliResult<_>>()?),
    };
    Ok((name.trim().to_string(), axis))
}

/// Parameter assignments to evaluate: the full grid, or `samples` seeded
/// random draws.
pub fn expand_grid(
    axes: &[(String, SweepAxis)],
    samples: Option<usize>,
    seed: u64,
) -> CliResult<Vec<BTreeMap<String, f64>>> {
    if axes.is_empty() {
        return Err(CliError::input("sweep grid is empty"));
    }
    if let Some(n) = samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return Ok((0..n)
            .map(|_| {
                axes.iter()
                    .map(|(k, axis)| {
                        let v = match axis {
                            SweepAxis::Values(vs) => vs[rng.random_range(0..vs.len())],
                            SweepAxis::Range(lo, hi) => rng.random_range(*lo..=*hi),
                        };
                        (k.clone(), v)
                    })
                    .collect()
            })
            .collect());
    }
    let mut grid = vec![BTreeMap::new()];
    for (k, axis) in axes {
        let SweepAxis::Values(vs) = axis else {
            return Err(CliError::input(format!("range axis `{k}` needs --samples")));
        };
        grid = grid
            .into_iter()
            .flat_map(|point| {
                vs.iter().map(move |&v| {
                    let mut p = point.clone();
                    p.insert(k.clone(), v);
                    p
                })
            })
            .collect();
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    /// Exact-match rate against references, or mean length-normalized
    /// log-probability without them.
    pub objective: f64,
    pub mean_steps: f64,
    pub fallbacks: usize,
    pub params: BTreeMap<String, f64>,
}

fn strip_eos(ids: &[TokenId], eos: TokenId) -> &[TokenId] {
    ids.strip_suffix(&[eos]).unwrap_or(ids)
}

pub fn cmd_sweep(
    model_path: &Path,
    corpus_path: &Path,
    references: Option<&Path>,
    base: &DecodeSettings,
    points: &[BTreeMap<String, f64>],
    out: Option<&Path>,
) -> CliResult<Vec<SweepRow>> {
    if points.is_empty() {
        return Err(CliError::input("sweep grid is empty"));
    }
    let file = load_model(model_path)?;
    let vocab: &Vocab = file.model.vocab();
    let sources = read_sources(corpus_path, vocab)?;
    let refs = references.map(|p| read_sources(p, vocab)).transpose()?;
    if let Some(r) = &refs {
        if r.len() != sources.len() {
            return Err(CliError::input(format!("{} references for {} sources", r.len(), sources.len())));
        }
    }
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let mut s = base.clone();
        for (k, &v) in point {
            s.set(k, v)?;
        }
        s.validate()?;
        let results = decode_all(&file.model, file.length_predictor.as_ref(), &s, &sources)?;
        let records: Vec<Record> =
            results.iter().enumerate().map(|(i, r)| Record::new(i, vocab, r, false, false)).collect();
        let footer = Footer::summarize(&records);
        let objective = match &refs {
            Some(refs) => {
                let eos = vocab.eos();
                let hits = records
                    .iter()
                    .zip(refs)
                    .filter(|(rec, r)| strip_eos(&rec.ids, eos) == strip_eos(r.tokens(), eos))
                    .count();
                hits as f64 / records.len().max(1) as f64
            }
            None => footer.mean_norm_logprob,
        };
        rows.push(SweepRow {
            rank: 0,
            objective,
            mean_steps: footer.mean_steps,
            fallbacks: footer.fallbacks,
            params: point.clone(),
        });
    }
    // stable sort keeps grid order among ties
    rows.sort_by(|a, b| b.objective.total_cmp(&a.objective));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let mut text = String::new();
    for r in &rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_output(out, &text)?;
    Ok(rows)
}

/// Writes `step,rank,mean_score,count` for the traces in `files`.
pub fn cmd_rankstats(files: &[PathBuf], out: Option<&Path>) -> CliResult<String> {
    if files.is_empty() {
        return Err(CliError::input("no results files given"));
    }
    let loaded = files.iter().map(|p| ResultsFile::load(p)).collect::<CliResult<Vec<_>>>()?;
    let beam = loaded[0].header.settings.beam_size;
    let mut traces = Vec::new();
    for (f, path) in loaded.iter().zip(files) {
        if f.header.settings.beam_size != beam {
            return Err(CliError::input("results files were decoded with different beam sizes"));
        }
        for r in &f.records {
            let t = r.trace.as_deref().ok_or_else(|| {
                CliError::input(format!("{} has no rank-score traces; decode with --trace", path.display()))
            })?;
            traces.push(t);
        }
    }
    let mut csv = String::from("step,rank,mean_score,count\n");
    for s in collect_rank_stats(traces, beam) {
        csv.push_str(&format!("{},{},{},{}\n", s.step, s.rank, s.mean_score, s.count));
    }
    write_output(out, &csv)?;
    Ok(csv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FixtureKind {
    Tabular,
    Neural,
}

/// Options of `make-fixture`.
#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub kind: FixtureKind,
    pub config: FixtureConfig,
    pub seed: u64,
    pub lines: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Emit `source<TAB>target` with a target as long as its source.
    pub parallel: bool,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            kind: FixtureKind::Tabular,
            config: FixtureConfig::default(),
            seed: 0,
            lines: 100,
            min_len: 2,
            max_len: 8,
            parallel: false,
        }
    }
}

/// Random sentence over the non-special tokens.
fn random_sentence(rng: &mut ChaCha8Rng, vocab: &Vocab, min_len: usize, max_len: usize) -> Vec<TokenId> {
    let len = rng.random_range(min_len..=max_len);
    let specials = [vocab.bos(), vocab.eos()];
    let pool: Vec<TokenId> = (0..vocab.len()).filter(|t| !specials.contains(t)).collect();
    (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Writes a seeded random model and, optionally, a matching corpus.
pub fn cmd_make_fixture(out: &Path, corpus: Option<&Path>, opts: &FixtureOptions) -> CliResult<()> {
    if opts.min_len == 0 || opts.min_len > opts.max_len {
        return Err(CliError::input("need 1 <= --min-len <= --max-len"));
    }
    if opts.config.vocab_size < 3 {
        return Err(CliError::input("vocabulary needs at least one token besides BOS and EOS"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let model = match opts.kind {
        FixtureKind::Tabular => AnyModel::Tabular(TabularModel::random(&opts.config, &mut rng)?),
        FixtureKind::Neural => AnyModel::Neural(NeuralModel::random(
            Vocab::synthetic(opts.config.vocab_size)?,
            NeuralConfig::default(),
            &mut rng,
        )),
    };
    ModelFile::new(model.clone())
        .save(out)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", out.display())))?;
    if let Some(path) = corpus {
        let vocab = model.vocab();
        let mut text = String::new();
        for _ in 0..opts.lines {
            let src = random_sentence(&mut rng, vocab, opts.min_len, opts.max_len);
            text.push_str(&vocab.render(&src));
            if opts.parallel {
                let tgt = random_sentence(&mut rng, vocab, src.len(), src.len());
                text.push('\t');
                text.push_str(&vocab.render(&tgt));
            }
            text.push('\n');
        }
        write_output(Some(path), &text)?;
    }
    Ok(())
}
