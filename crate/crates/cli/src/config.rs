//! Run configuration: one JSON file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use smellfuse::corpus::Smell;
use smellfuse::encode::Encoder;
use smellfuse::eval::{EvalOptions, Protocol};
use smellfuse::metrics::PipelineOptions;
use smellfuse::model::{Ablation, ModelConfig};
use smellfuse::{Error, Execution, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub smell: Smell,
    #[serde(default = "default_encoder")]
    pub encoder: Encoder,
    /// Review export; labels are derived by majority vote.
    #[serde(default)]
    pub reviews: Option<PathBuf>,
    /// Labeled corpus written by `label`; used when `reviews` is absent.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub ck_csv: Option<PathBuf>,
    /// Directory of `<sample_id>.java` files for the token-index encoder.
    #[serde(default)]
    pub sources: Option<PathBuf>,
    /// Unit-level embedding CSV for the vector encoders.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub run_name: Option<String>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub pipeline: PipelineOptions,
    #[serde(default)]
    pub execution: Execution,
    /// Concurrent grid points for `sweep`; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_encoder() -> Encoder {
    Encoder::TokenIndex
}

fn default_folds() -> usize {
    5
}

fn default_test_fraction() -> f64 {
    0.2
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.reviews.is_none() && self.corpus.is_none() {
            return Err(Error::Config("set either `reviews` or `corpus`".into()));
        }
        let ablation = self.model.effective_ablation();
        if ablation.uses_semantic() {
            let (field, path) = match self.encoder {
                Encoder::TokenIndex => ("sources", &self.sources),
                _ => ("embeddings", &self.embeddings),
            };
            if path.is_none() {
                return Err(Error::Config(format!("encoder {:?} needs `{field}`", self.encoder)));
            }
        }
        if ablation.uses_structural() && self.ck_csv.is_none() {
            return Err(Error::Config("the structural branch needs `ck_csv`".into()));
        }
        Ok(())
    }

    pub fn run_name(&self) -> String {
        self.run_name.clone().unwrap_or_else(|| default_run_name(&self.smell, &self.model))
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            folds: self.folds,
            test_fraction: self.test_fraction,
            seed: self.split_seed,
            pipeline: self.pipeline,
            exec: self.execution,
        }
    }
}

pub fn default_run_name(smell: &Smell, model: &ModelConfig) -> String {
    let ablation = match model.effective_ablation() {
        Ablation::Full => String::new(),
        other => format!("_{other}"),
    };
    format!("{smell}_k{}_beta{}{ablation}", model.kernel_size, model.beta)
}

/// Sets a dotted path like `model.beta=8`. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{key}` is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("override `{spec}` has an empty key")))
}
