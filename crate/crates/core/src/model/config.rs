use serde::{Deserialize, Serialize};

use super::tokenizer::{MAX_RESIDUES, VOCAB_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Multilabel,
    Multiclass,
}

/// Encoder and classifier hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub n_classes: usize,
    pub task_kind: TaskKind,
    /// Width of the classifier's hidden layer.
    pub head_hidden: usize,
    /// Classifier dropout, applied only while training.
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 128,
            vocab_size: VOCAB_SIZE,
            max_positions: MAX_RESIDUES + 2,
            n_classes: 2,
            task_kind: TaskKind::Multiclass,
            head_hidden: 50,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn pooled_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_classes", self.n_classes),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < VOCAB_SIZE {
            return Err(Error::Config(format!(
                "vocab_size {} smaller than the amino-acid vocabulary ({VOCAB_SIZE})",
                self.vocab_size
            )));
        }
        if self.max_positions < 3 {
            return Err(Error::Config("max_positions must be at least 3".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
