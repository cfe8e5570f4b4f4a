use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModelStepOutput, NeuralModel, SequenceModel, SourceSummary, TabularModel};
use crate::error::{Error, Result};
use crate::lengthpred::LengthPredictor;
use crate::types::{SourceSentence, TokenId, Vocab};

pub const MODEL_FORMAT: &str = "sqd-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Either toy model, for callers that pick the model at runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyModel {
    Tabular(TabularModel),
    Neural(NeuralModel),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyState {
    Tabular(usize),
    Neural(Arc<Vec<f64>>),
}

impl SequenceModel for AnyModel {
    type State = AnyState;

    fn vocab(&self) -> &Vocab {
        match self {
            AnyModel::Tabular(m) => m.vocab(),
            AnyModel::Neural(m) => m.vocab(),
        }
    }

    fn summary_dim(&self) -> usize {
        match self {
            AnyModel::Tabular(m) => m.summary_dim(),
            AnyModel::Neural(m) => m.summary_dim(),
        }
    }

    fn embedding_dim(&self) -> usize {
        match self {
            AnyModel::Tabular(m) => m.embedding_dim(),
            AnyModel::Neural(m) => m.embedding_dim(),
        }
    }

    fn encode(&self, source: &SourceSentence) -> Result<(SourceSummary, AnyState)> {
        match self {
            AnyModel::Tabular(m) => m.encode(source).map(|(s, q)| (s, AnyState::Tabular(q))),
            AnyModel::Neural(m) => m.encode(source).map(|(s, h)| (s, AnyState::Neural(h))),
        }
    }

    fn step(&self, state: &AnyState, last_token: TokenId) -> ModelStepOutput<AnyState> {
        match (self, state) {
            (AnyModel::Tabular(m), AnyState::Tabular(q)) => {
                let out = m.step(q, last_token);
                ModelStepOutput { logprobs: out.logprobs, next_state: AnyState::Tabular(out.next_state) }
            }
            (AnyModel::Neural(m), AnyState::Neural(h)) => {
                let out = m.step(h, last_token);
                ModelStepOutput { logprobs: out.logprobs, next_state: AnyState::Neural(out.next_state) }
            }
            _ => panic!("decoder state does not belong to this model"),
        }
    }

    fn embed(&self, token: TokenId) -> Result<Vec<f64>> {
        match self {
            AnyModel::Tabular(m) => m.embed(token),
            AnyModel::Neural(m) => m.embed(token),
        }
    }
}

/// On-disk model: base model plus an optional trained length predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: AnyModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_predictor: Option<LengthPredictor>,
}

impl ModelFile {
    pub fn new(model: AnyModel) -> Self {
        ModelFile { format: MODEL_FORMAT.to_string(), version: MODEL_FORMAT_VERSION, model, length_predictor: None }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::input(format!("unexpected model format `{}`", file.format)));
        }
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::input(format!("unsupported model format version {}", file.version)));
        }
        if let AnyModel::Neural(m) = &file.model {
            m.validate()?;
        }
        if let Some(p) = &file.length_predictor {
            p.validate()?;
            p.check_compatible(&file.model)?;
        }
        Ok(file)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read model file {}: {e}", path.display())))?;
        ModelFile::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
