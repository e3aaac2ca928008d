//! Versioned, named-parameter checkpoints.
//!
//! A checkpoint is a JSON document holding the model configuration, the
//! vocabulary, the sampling generator's state and every parameter as a name,
//! a shape and row-major values (Adagrad accumulators included). Floats are
//! written in shortest round-trip form, so loading reproduces every value
//! bit for bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Architecture, Model, ModelConfig};
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    /// 32-byte ChaCha8 seed, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Config(format!("malformed generator state {self:?}"));
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub accumulator: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub model: ModelConfig,
    pub rng: RngState,
    pub vocabulary: Vocabulary,
    pub params: Vec<ParamRecord>,
    /// Free-form provenance, e.g. the run configuration.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn capture(model: &Model, vocabulary: &Vocabulary, metadata: serde_json::Value) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            architecture: model.architecture(),
            model: model.config().clone(),
            rng: RngState::capture(&model.rng),
            vocabulary: vocabulary.clone(),
            params: model
                .store
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    shape: p.shape().dims(),
                    values: p.value.data().to_vec(),
                    accumulator: p.accumulator.data().to_vec(),
                })
                .collect(),
            metadata,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: Option<u32>,
        }
        let v: Version = serde_json::from_str(text)?;
        match v.format_version {
            Some(CHECKPOINT_VERSION) => Ok(serde_json::from_str(text)?),
            Some(other) => Err(Error::Config(format!(
                "checkpoint format version {other} is not supported (expected {CHECKPOINT_VERSION})"
            ))),
            None => Err(Error::Config("checkpoint has no format_version".into())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn to_model(&self) -> Result<Model> {
        if self.model.architecture != self.architecture {
            return Err(Error::Config(format!(
                "checkpoint tagged {} holds a {} configuration",
                self.architecture, self.model.architecture
            )));
        }
        if self.model.vocab_size != self.vocabulary.len() {
            return Err(Error::Config(format!(
                "model expects {} tokens, stored vocabulary has {}",
                self.model.vocab_size,
                self.vocabulary.len()
            )));
        }
        let mut model = Model::new(self.model.clone())?;
        if model.store.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, a {} model has {}",
                self.params.len(),
                self.architecture,
                model.store.len()
            )));
        }
        for rec in &self.params {
            let shape = Shape::from_dims(&rec.shape)?;
            let p = model
                .store
                .by_name_mut(&rec.name)
                .ok_or_else(|| Error::Config(format!("unexpected parameter {}", rec.name)))?;
            if p.shape() != shape {
                return Err(Error::Config(format!(
                    "parameter {} is {shape} in the checkpoint but {} in the model",
                    rec.name,
                    p.shape()
                )));
            }
            p.value = Tensor::new(shape, rec.values.clone())?;
            p.accumulator = Tensor::new(shape, rec.accumulator.clone())?;
        }
        model.rng = self.rng.restore()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn rng_state_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.set_stream(3);
        rng.next_u64();
        let mut back = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.next_u64(), back.next_u64());
    }

    #[test]
    fn rejects_other_versions() {
        let err = Checkpoint::from_json(r#"{"format_version": 2}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(Checkpoint::from_json(r#"{}"#).is_err());
    }
}
