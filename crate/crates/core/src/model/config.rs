use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, MaxPool1d};

pub const KERNEL_GRID: [usize; 5] = [3, 4, 5, 6, 7];
pub const BETA_GRID: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 12.0, 32.0, 84.0];

/// Which branches feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    SemanticOnly,
    StructuralOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::SemanticOnly, Ablation::StructuralOnly];

    pub fn uses_semantic(self) -> bool {
        self != Ablation::StructuralOnly
    }

    pub fn uses_structural(self) -> bool {
        self != Ablation::SemanticOnly
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::SemanticOnly => "semantic_only",
            Ablation::StructuralOnly => "structural_only",
        })
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Ablation::Full),
            "semantic_only" | "semantic" => Ok(Ablation::SemanticOnly),
            "structural_only" | "structural" => Ok(Ablation::StructuralOnly),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kernel_size: usize,
    /// Permits a kernel size outside [`KERNEL_GRID`].
    pub allow_custom_kernel: bool,
    pub filters: [usize; 2],
    pub lstm_hidden: usize,
    pub bidirectional: bool,
    /// Zero disables the structural branch.
    pub structural_latent: usize,
    pub classifier_hidden: [usize; 2],
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub decision_threshold: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel_size: 5,
            allow_custom_kernel: false,
            filters: [16, 32],
            lstm_hidden: 32,
            bidirectional: true,
            structural_latent: 16,
            classifier_hidden: [64, 32],
            beta: 1.0,
            learning_rate: 0.025,
            batch_size: 128,
            epochs: 85,
            seed: 0,
            decision_threshold: 0.5,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kernel_size == 0 || (!self.allow_custom_kernel && !KERNEL_GRID.contains(&self.kernel_size)) {
            return bad(format!(
                "kernel size {} is outside {KERNEL_GRID:?}; set allow_custom_kernel to override",
                self.kernel_size
            ));
        }
        if self.filters.contains(&0) || self.lstm_hidden == 0 || self.classifier_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.ablation == Ablation::StructuralOnly && self.structural_latent == 0 {
            return bad("structural_only needs a positive structural_latent".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be a positive real, got {}", self.beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive".into());
        }
        if !self.decision_threshold.is_finite() {
            return bad("decision threshold must be finite".into());
        }
        Ok(())
    }

    /// The ablation actually built: a zero structural width means semantic only.
    pub fn effective_ablation(&self) -> Ablation {
        if self.structural_latent == 0 && self.ablation == Ablation::Full {
            Ablation::SemanticOnly
        } else {
            self.ablation
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn semantic_width(&self) -> usize {
        if self.bidirectional {
            2 * self.lstm_hidden
        } else {
            self.lstm_hidden
        }
    }
}

/// Sequence lengths through the semantic branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShapeChain {
    pub input: usize,
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
    pub semantic_width: usize,
}

/// Smallest input length that survives both conv and pool stages.
pub fn min_input_len(kernel: usize) -> usize {
    4 * kernel + 5
}

pub fn shape_chain(input_len: usize, config: &ModelConfig) -> Result<ShapeChain> {
    let k = config.kernel_size;
    let too_short = || {
        Error::Shape(format!(
            "input length {input_len} is too short for kernel {k}; the minimum is {}",
            min_input_len(k)
        ))
    };
    let conv1 = Conv1d::output_len(input_len, k).map_err(|_| too_short())?;
    let pool1 = MaxPool1d::output_len(conv1).map_err(|_| too_short())?;
    let conv2 = Conv1d::output_len(pool1, k).map_err(|_| too_short())?;
    let pool2 = MaxPool1d::output_len(conv2).map_err(|_| too_short())?;
    Ok(ShapeChain {
        input: input_len,
        conv1,
        pool1,
        conv2,
        pool2,
        semantic_width: config.semantic_width(),
    })
}
