//! Versioned checkpoint format: model config, ablation, vocabulary, and
//! named parameter tensors as JSON. Finite `f64` values survive the JSON
//! round trip bit-exactly, so load(save(m)) reproduces the model.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocab;
use crate::model::{Model, ModelConfig, Param};
use crate::training::Ablation;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid checkpoint {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is inconsistent: {0}")]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamDump {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// On-disk checkpoint document.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub vocab: Vec<String>,
    params: Vec<ParamDump>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, ablation: Ablation) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            ablation,
            vocab: model.vocab.tokens().to_vec(),
            params: model
                .params
                .iter()
                .map(|p| ParamDump {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.values.as_ref().clone(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<(Model, Ablation), CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let vocab = Vocab::new(self.vocab);
        let params: Vec<Param> = self
            .params
            .into_iter()
            .map(|p| Param { name: p.name, shape: p.shape, values: Arc::new(p.values) })
            .collect();
        let model = Model::from_parts(self.config, vocab, self.ablation.tasks(), params)?;
        Ok((model, self.ablation))
    }
}

pub fn save(model: &Model, ablation: Ablation, path: &Path) -> Result<(), CheckpointError> {
    let ck = Checkpoint::from_model(model, ablation);
    let json = serde_json::to_string(&ck).expect("checkpoints serialize");
    std::fs::write(path, json).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<(Model, Ablation), CheckpointError> {
    let data = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ck: Checkpoint = serde_json::from_str(&data).map_err(|source| CheckpointError::Json {
        path: path.display().to_string(),
        source,
    })?;
    ck.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon;
    use crate::model::TaskSet;

    fn small_model() -> Model {
        let mut tokens: Vec<String> = lexicon::SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..6).map(|i| format!("w{i}")));
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 3,
            ff_dim: 16,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        Model::init(cfg, Vocab::new(tokens), TaskSet { sae: true, saa: true, hierarchy: true }, 5)
            .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let model = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save(&model, Ablation::Full, &path).unwrap();
        let (loaded, ablation) = load(&path).unwrap();
        assert_eq!(ablation, Ablation::Full);
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.vocab.tokens(), model.vocab.tokens());
        for (a, b) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert!(a
                .values
                .iter()
                .zip(b.values.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // and a second save produces identical bytes
        let path2 = dir.path().join("ck2.json");
        save(&loaded, ablation, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_unknown_version() {
        let model = small_model();
        let mut ck = Checkpoint::from_model(&model, Ablation::Baseline);
        ck.version = 99;
        assert!(matches!(ck.into_model(), Err(CheckpointError::Version(99))));
    }
}
