use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sqd_core::model::FixtureConfig;

use crate::commands::{
    cmd_decode, cmd_make_fixture, cmd_rankstats, cmd_sweep, cmd_train_lmp, expand_grid, parse_axis, FixtureKind,
    FixtureOptions, TrainOptions,
};
use crate::error::CliResult;
use crate::settings::DecodeFlags;

#[derive(Debug, Parser)]
#[command(name = "sqd", version, about = "Single-queue decoding experiments on toy sequence models")]
pub struct Cli {
    /// Worker threads for corpus decoding [default: all cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode every line of a corpus and write JSONL results.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Output file [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock times (makes output nondeterministic).
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        flags: DecodeFlags,
    },
    /// Train the length predictor on a tab-separated parallel corpus.
    TrainLmp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Model file to write, base model plus predictor.
        #[arg(long)]
        out: PathBuf,
        /// CSV of per-epoch mean loss.
        #[arg(long)]
        loss_out: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 16)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 16)]
        head_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Length cap for the greedy outputs the decoder head is trained on.
        #[arg(long, default_value_t = 150)]
        max_len: usize,
    },
    /// Evaluate decoding settings over a grid or random draws, best first.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// One reference per corpus line; switches the objective to exact match.
        #[arg(long)]
        references: Option<PathBuf>,
        /// Axis as `name=v1,v2` or `name=lo..hi`; repeatable.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        /// Draw this many random points instead of the full grid.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: DecodeFlags,
    },
    /// Per-step, per-rank mean scores from traced results files, as CSV.
    Rankstats {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded random model, and optionally a corpus for it.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "tabular")]
        kind: FixtureKind,
        #[arg(long, default_value_t = 8)]
        vocab_size: usize,
        #[arg(long, default_value_t = 8)]
        states: usize,
        #[arg(long, default_value_t = 8)]
        summary_dim: usize,
        #[arg(long, default_value_t = 2.0)]
        sharpness: f64,
        #[arg(long, default_value_t = 0.5)]
        eos_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        lines: usize,
        #[arg(long, default_value_t = 2)]
        min_len: usize,
        #[arg(long, default_value_t = 8)]
        max_len: usize,
        /// Write `source<TAB>target` lines, target as long as the source.
        #[arg(long)]
        parallel: bool,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        // fails only if a pool already exists, in which case it is reused
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Decode { model, corpus, out, timings, flags } => {
            cmd_decode(&model, &corpus, &flags.resolve()?, timings, out.as_deref())?;
        }
        Command::TrainLmp {
            model,
            corpus,
            out,
            loss_out,
            epochs,
            learning_rate,
            hidden_dim,
            head_dim,
            seed,
            max_len,
        } => {
            let opts = TrainOptions { epochs, learning_rate, hidden_dim, head_dim, seed, max_len };
            cmd_train_lmp(&model, &corpus, &out, loss_out.as_deref(), &opts)?;
        }
        Command::Sweep { model, corpus, references, grid, samples, out, flags } => {
            let settings = flags.resolve()?;
            let axes = grid.iter().map(|g| parse_axis(g)).collect::<CliResult<Vec<_>>>()?;
            let points = expand_grid(&axes, samples, settings.seed)?;
            cmd_sweep(&model, &corpus, references.as_deref(), &settings, &points, out.as_deref())?;
        }
        Command::Rankstats { results, out } => {
            cmd_rankstats(&results, out.as_deref())?;
        }
        Command::MakeFixture {
            out,
            kind,
            vocab_size,
            states,
            summary_dim,
            sharpness,
            eos_scale,
            seed,
            corpus,
            lines,
            min_len,
            max_len,
            parallel,
        } => {
            let config = FixtureConfig { vocab_size, num_states: states, summary_dim, sharpness, eos_scale };
            let opts = FixtureOptions { kind, config, seed, lines, min_len, max_len, parallel };
            cmd_make_fixture(&out, corpus.as_deref(), &opts)?;
        }
    }
    Ok(())
}
