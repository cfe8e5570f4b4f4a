use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sqd_core::types::normalized_logprob;
use sqd_core::{DecodeResult, TokenId, Vocab};

use crate::error::{CliError, CliResult};
use crate::settings::DecodeSettings;

pub const RESULTS_FORMAT: &str = "sqd-results";
pub const RESULTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub corpus: String,
    pub settings: DecodeSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// 0-based corpus line.
    pub index: usize,
    pub output: String,
    pub ids: Vec<TokenId>,
    /// Score under the strategy's own ranking.
    pub score: f64,
    pub cum_logprob: f64,
    /// `cum_logprob / |y|`, comparable across strategies.
    pub norm_logprob: f64,
    pub steps: usize,
    pub fallback: bool,
    pub peak_queue_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Vec<f64>>>,
}

impl Record {
    pub fn new(index: usize, vocab: &Vocab, r: &DecodeResult, trace: bool, timings: bool) -> Self {
        Record {
            index,
            output: vocab.render(&r.best.tokens),
            ids: r.best.tokens.clone(),
            score: r.best.cached_score.unwrap_or(f64::NEG_INFINITY),
            cum_logprob: r.best.cum_logprob,
            norm_logprob: if r.best.is_empty() { r.best.cum_logprob } else { normalized_logprob(&r.best, 1.0) },
            steps: r.steps_taken,
            fallback: r.fallback,
            peak_queue_len: r.peak_queue_len,
            time_ms: timings.then_some(r.elapsed.as_secs_f64() * 1e3),
            trace: trace.then(|| r.rank_score_trace.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub count: usize,
    pub fallbacks: usize,
    pub mean_steps: f64,
    pub mean_norm_logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_time_ms: Option<f64>,
}

impl Footer {
    pub fn summarize(records: &[Record]) -> Self {
        let n = records.len().max(1) as f64;
        let times: Option<Vec<f64>> = records.iter().map(|r| r.time_ms).collect();
        Footer {
            count: records.len(),
            fallbacks: records.iter().filter(|r| r.fallback).count(),
            mean_steps: records.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            mean_norm_logprob: records.iter().map(|r| r.norm_logprob).sum::<f64>() / n,
            mean_time_ms: times.filter(|t| !t.is_empty()).map(|t| t.iter().sum::<f64>() / n),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(Header),
    Record(Record),
    Footer(Footer),
}

/// A decode run: header line, one record per sentence, footer line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub header: Header,
    pub records: Vec<Record>,
    pub footer: Footer,
}

impl ResultsFile {
    pub fn to_jsonl(&self) -> CliResult<String> {
        let mut out = String::new();
        let mut push = |line: &Line| -> CliResult<()> {
            writeln!(out, "{}", serde_json::to_string(line)?).expect("writing to a String");
            Ok(())
        };
        push(&Line::Header(self.header.clone()))?;
        for r in &self.records {
            push(&Line::Record(r.clone()))?;
        }
        push(&Line::Footer(self.footer.clone()))?;
        Ok(out)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut header = None;
        let mut footer = None;
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line: Line =
                serde_json::from_str(raw).map_err(|e| CliError::input(format!("results line {}: {e}", i + 1)))?;
            match line {
                Line::Header(h) if header.is_none() && i == 0 => header = Some(h),
                Line::Record(r) if header.is_some() && footer.is_none() => records.push(r),
                Line::Footer(f) if header.is_some() && footer.is_none() => footer = Some(f),
                _ => return Err(CliError::input(format!("results line {}: out of order", i + 1))),
            }
        }
        let header = header.ok_or_else(|| CliError::input("results file has no header"))?;
        if header.format != RESULTS_FORMAT || header.version != RESULTS_VERSION {
            return Err(CliError::input(format!("unsupported results format {} v{}", header.format, header.version)));
        }
        let footer = footer.ok_or_else(|| CliError::input("results file is truncated (no footer)"))?;
        Ok(ResultsFile { header, records, footer })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read results {}: {e}", path.display())))?;
        ResultsFile::parse(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(index: usize, steps: usize, norm: f64, trace: Option<Vec<Vec<f64>>>) -> Record {
        Record {
            index,
            output: "w2 </s>".into(),
            ids: vec![2, 1],
            score: norm,
            cum_logprob: 2.0 * norm,
            norm_logprob: norm,
            steps,
            fallback: false,
            peak_queue_len: 3,
            time_ms: None,
            trace,
        }
    }

    fn file(records: Vec<Record>) -> ResultsFile {
        let header = Header {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION,
            model: "m.json".into(),
            corpus: "c.txt".into(),
            settings: DecodeSettings::default(),
        };
        let footer = Footer::summarize(&records);
        ResultsFile { header, records, footer }
    }

    #[test]
    fn footer_means() {
        let f = Footer::summarize(&[record(0, 2, -1.0, None), record(1, 4, -2.0, None)]);
        assert_eq!(f.mean_steps, 3.0);
        assert_eq!(f.mean_norm_logprob, -1.5);
        assert_eq!(f.mean_time_ms, None);
    }

    #[test]
    fn rejects_truncated_and_reordered() {
        let text = file(vec![record(0, 1, -1.0, None)]).to_jsonl().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(ResultsFile::parse(&lines[..2].join("\n")).is_err());
        assert!(ResultsFile::parse(&[lines[1], lines[0], lines[2]].join("\n")).is_err());
    }

    proptest! {
        #[test]
        fn round_trips(
            norms in prop::collection::vec(-20.0f64..0.0, 0..6),
            trace in prop::option::of(prop::collection::vec(prop::collection::vec(-9.0f64..0.0, 0..4), 0..4)),
        ) {
            let recs = norms.iter().enumerate().map(|(i, &n)| record(i, i + 1, n, trace.clone())).collect();
            let f = file(recs);
            prop_assert_eq!(ResultsFile::parse(&f.to_jsonl().unwrap()).unwrap(), f);
        }
    }
}
