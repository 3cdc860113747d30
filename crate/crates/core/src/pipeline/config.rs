//! Run configuration: one JSON document describing model, losses,
//! optimizer, data and stopping rules.

use std::path::{Path, PathBuf};

use heightbins_tensor::AdamWConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::Connectivity;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = AdamWConfig::default();
        OptimizerConfig {
            lr: d.lr,
            weight_decay: d.weight_decay,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    fn problems(&self, out: &mut Vec<String>) {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("optimizer.lr = {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push("optimizer.weight_decay must be nonnegative".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push(format!("optimizer.{name} = {b} must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            out.push("optimizer.eps must be positive".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer updates across all epochs.
    pub max_steps: Option<usize>,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    /// Validate every this many epochs.
    pub val_every: usize,
    /// Stop once an epoch's mean training L1 (finest head) drops below this.
    pub target_train_l1: Option<f64>,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub connectivity: Connectivity,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 4,
            max_epochs: 100,
            max_steps: None,
            patience: 10,
            val_every: 1,
            target_train_l1: None,
            seed: 0,
            manifest: None,
            output_dir: None,
            connectivity: Connectivity::Four,
        }
    }
}

impl RunConfig {
    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        self.model.problems(&mut p);
        self.loss.problems(&mut p);
        self.optimizer.problems(&mut p);
        if self.loss.lambdas.len() != self.model.levels.len() {
            p.push(format!(
                "loss.lambdas has {} entries but model.levels names {} levels",
                self.loss.lambdas.len(),
                self.model.levels.len()
            ));
        }
        if self.batch_size == 0 {
            p.push("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            p.push("max_epochs must be at least 1".into());
        }
        if self.max_steps == Some(0) {
            p.push("max_steps must be at least 1 when set".into());
        }
        if self.patience == 0 {
            p.push("patience must be at least 1".into());
        }
        if self.val_every == 0 {
            p.push("val_every must be at least 1".into());
        }
        if let Some(t) = self.target_train_l1 {
            if !(t > 0.0 && t.is_finite()) {
                p.push("target_train_l1 must be positive when set".into());
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative `manifest` and
    /// `output_dir` paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Manifest path, required by commands that read a corpus.
    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| Error::config("manifest is required for this command"))
    }
}
