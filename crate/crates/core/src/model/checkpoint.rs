use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, EnsembleModel, ModelConfig};
use crate::dataset::FittedStates;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::{NamedTensor, Params};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// On-disk model: named tensors plus everything needed to rebuild the
/// architecture and reapply preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config_hash: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub input_len: usize,
    pub n_metrics: usize,
    pub tensors: Vec<NamedTensor>,
    #[serde(default)]
    pub preprocessing: Option<FittedStates>,
}

impl EnsembleModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        self.clone().visit("", &mut |name, t| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
        });
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config_hash: self.config.hash(),
            seed: self.config.seed,
            config: self.config.clone(),
            input_len: self.input_len,
            n_metrics: self.n_metrics,
            tensors,
            preprocessing: self.preprocessing.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Versioning(format!(
                "checkpoint format {} is not the supported format {CHECKPOINT_FORMAT}",
                ck.format
            )));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Versioning("config hash does not match the stored config".into()));
        }
        let mut model = build_model(&ck.config, ck.input_len, ck.n_metrics)?;
        let mut stored: HashMap<String, NamedTensor> = ck.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let mut failure = None;
        model.visit("", &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match stored.remove(name) {
                None => failure = Some(Error::MissingTensor(name.to_string())),
                Some(s) if s.shape != t.shape() || s.values.len() != t.len() => {
                    failure = Some(Error::Shape(format!(
                        "tensor `{name}` has shape {:?}, model expects {:?}",
                        s.shape,
                        t.shape()
                    )))
                }
                Some(s) => t.data_mut().copy_from_slice(&s.values),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(extra) = stored.keys().min() {
            return Err(Error::Versioning(format!("checkpoint has unexpected tensor `{extra}`")));
        }
        model.preprocessing = ck.preprocessing;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Versioning(format!("malformed or truncated checkpoint: {e}")))?;
        Self::from_checkpoint(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::model::Samples;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> EnsembleModel {
        let c = ModelConfig {
            kernel_size: 3,
            seed: 11,
            ..ModelConfig::default()
        };
        build_model(&c, 30, 4).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = EnsembleModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.to_checkpoint(), m.to_checkpoint());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Samples {
            ids: (0..10).map(|i| i.to_string()).collect(),
            semantic: (0..10).map(|_| (0..30).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect(),
            structural: (0..10).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
            labels: vec![0; 10],
        };
        let a = m.predict_proba(&d, Execution::Sequential).unwrap();
        let b = back.predict_proba(&d, Execution::Sequential).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        let m = model();
        m.save(&p).unwrap();
        assert_eq!(EnsembleModel::load(&p).unwrap().to_checkpoint(), m.to_checkpoint());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let json = model().to_json().unwrap();
        let truncated = &json[..json.len() / 2];
        assert!(matches!(EnsembleModel::from_json(truncated), Err(Error::Versioning(_))));

        let mut ck = model().to_checkpoint();
        let gone = ck.tensors.remove(3).name;
        match EnsembleModel::from_checkpoint(ck) {
            Err(Error::MissingTensor(name)) => assert_eq!(name, gone),
            other => panic!("unexpected {other:?}"),
        }

        let mut ck = model().to_checkpoint();
        ck.config.beta = 4.0;
        assert!(matches!(EnsembleModel::from_checkpoint(ck), Err(Error::Versioning(_))));
    }
}
