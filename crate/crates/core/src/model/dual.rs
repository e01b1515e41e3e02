use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::slu::SluModel;
use crate::data::LabelVocab;
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, streams};

/// Which of the two networks is used for evaluation and transfer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deploy {
    ModelO,
    /// The code-switched-input network; its training inputs are
    /// multilingual by construction.
    #[default]
    ModelC,
}

impl fmt::Display for Deploy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Deploy::ModelO => "model_o",
            Deploy::ModelC => "model_c",
        })
    }
}

impl FromStr for Deploy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model_o" => Ok(Deploy::ModelO),
            "model_c" => Ok(Deploy::ModelC),
            other => Err(Error::Config(vec![format!(
                "deploy must be model_o or model_c, got {other:?}"
            )])),
        }
    }
}

/// Two architecturally identical networks: `model_o` reads original
/// utterances, `model_c` their code-switched counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    pub model_o: SluModel,
    pub model_c: SluModel,
}

impl DualModel {
    /// Independent initialisation of both networks from one root seed. With
    /// `shared_init` both start from byte-identical parameters.
    pub fn init(config: &EncoderConfig, labels: &LabelVocab, seed: u64, shared_init: bool) -> Result<Self> {
        let model_o = SluModel::init(config.clone(), labels, derive_seed(seed, streams::INIT_MODEL_O))?;
        let model_c = if shared_init {
            model_o.clone()
        } else {
            SluModel::init(config.clone(), labels, derive_seed(seed, streams::INIT_MODEL_C))?
        };
        Ok(Self { model_o, model_c })
    }

    pub fn deployed(&self, which: Deploy) -> &SluModel {
        match which {
            Deploy::ModelO => &self.model_o,
            Deploy::ModelC => &self.model_c,
        }
    }
}
