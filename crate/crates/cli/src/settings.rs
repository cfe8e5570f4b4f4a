use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sqd_core::types::DEFAULT_MAX_STEPS;
use sqd_core::{LmsMode, ScoreConfig, SearchConfig};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default settings file.
pub const CONFIG_ENV: &str = "SQD_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Beam search ranked by raw log-probability.
    Beam,
    /// Beam search ranked by length-normalized log-probability.
    BeamLnorm,
    /// Single-queue decoding.
    Sqd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LmsModeArg {
    Expectation,
    Swapped,
}

impl From<LmsModeArg> for LmsMode {
    fn from(m: LmsModeArg) -> Self {
        match m {
            LmsModeArg::Expectation => LmsMode::Expectation,
            LmsModeArg::Swapped => LmsMode::Swapped,
        }
    }
}

/// Fully resolved decoding settings. Also the schema of settings files,
/// where every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub max_steps: usize,
    /// Defaults to twice the beam size.
    pub retain_size: Option<usize>,
    pub queue_capacity: Option<usize>,
    pub lambda: f64,
    /// Progress penalty weight; 0 disables the penalty.
    pub alpha: f64,
    pub beta: f64,
    /// Length matching penalty weight; 0 disables the penalty.
    pub gamma: f64,
    pub tau: f64,
    pub lms_mode: LmsMode,
    pub seed: u64,
    pub trace: bool,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            strategy: Strategy::Sqd,
            beam_size: 5,
            max_steps: DEFAULT_MAX_STEPS,
            retain_size: None,
            queue_capacity: None,
            lambda: 1.0,
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            tau: 0.0,
            lms_mode: LmsMode::Expectation,
            seed: 0,
            trace: false,
        }
    }
}

impl DecodeSettings {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read settings file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("bad settings file {}: {e}", path.display())))
    }

    pub fn search_config(&self) -> SearchConfig {
        let mut cfg = SearchConfig::new(self.beam_size).with_max_steps(self.max_steps);
        if let Some(r) = self.retain_size {
            cfg = cfg.with_retain_size(r);
        }
        if let Some(c) = self.queue_capacity {
            cfg = cfg.with_queue_capacity(c);
        }
        cfg.seed = self.seed;
        cfg
    }

    pub fn score_config(&self) -> ScoreConfig {
        let mut cfg = ScoreConfig::length_normalized(self.lambda).with_lms_mode(self.lms_mode);
        if self.alpha != 0.0 {
            cfg = cfg.with_progress(self.alpha, self.beta);
        }
        if self.gamma != 0.0 {
            cfg = cfg.with_length_matching(self.gamma, self.tau);
        }
        cfg
    }

    pub fn validate(&self) -> CliResult<()> {
        self.search_config().validate()?;
        self.score_config().validate()?;
        Ok(())
    }

    /// Sets one numeric hyperparameter by name; used by sweeps.
    pub fn set(&mut self, key: &str, value: f64) -> CliResult<()> {
        let as_count = |v: f64| -> CliResult<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CliError::input(format!("`{key}` needs a non-negative integer, got {v}")))
            }
        };
        match key {
            "lambda" => self.lambda = value,
            "alpha" => self.alpha = value,
            "beta" => self.beta = value,
            "gamma" => self.gamma = value,
            "tau" => self.tau = value,
            "beam_size" => self.beam_size = as_count(value)?,
            "retain_size" => self.retain_size = Some(as_count(value)?),
            "max_steps" => self.max_steps = as_count(value)?,
            other => return Err(CliError::input(format!("unknown sweep parameter `{other}`"))),
        }
        Ok(())
    }
}

/// Decoding flags shared by `decode` and `sweep`. Unset flags fall back to
/// the settings file, then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct DecodeFlags {
    /// JSON settings file.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    /// Step budget T.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Candidates merged into the queue per step [default: 2 x beam size].
    #[arg(long)]
    pub retain_size: Option<usize>,
    /// Evict the worst unfinished hypotheses beyond this queue size.
    #[arg(long)]
    pub queue_capacity: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub lms_mode: Option<LmsModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record the per-step rank-score trace of every decode.
    #[arg(long)]
    pub trace: bool,
}

impl DecodeFlags {
    pub fn resolve(&self) -> CliResult<DecodeSettings> {
        let mut s = match &self.config {
            Some(path) => DecodeSettings::from_file(path)?,
            None => DecodeSettings::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    s.$field = v;
                }
            )*};
        }
        apply!(strategy, beam_size, max_steps, lambda, alpha, beta, gamma, tau, seed);
        if self.retain_size.is_some() {
            s.retain_size = self.retain_size;
        }
        if self.queue_capacity.is_some() {
            s.queue_capacity = self.queue_capacity;
        }
        if let Some(m) = self.lms_mode {
            s.lms_mode = m.into();
        }
        s.trace |= self.trace;
        s.validate()?;
        Ok(s)
    }
}
