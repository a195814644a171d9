use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub n_layers: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Number of discrete values per normalized layout coordinate.
    pub coord_buckets: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 32,
            n_heads: 2,
            ff_mult: 4,
            n_layers: 1,
            vocab_size: 5,
            max_seq_len: 512,
            coord_buckets: 128,
            n_classes: 2,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d", self.d),
            ("n_heads", self.n_heads),
            ("ff_mult", self.ff_mult),
            ("n_layers", self.n_layers),
            ("vocab_size", self.vocab_size),
            ("coord_buckets", self.coord_buckets),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::config(format!("model.{name}"), "must be >= 1"));
            }
        }
        if self.d % self.n_heads != 0 {
            return Err(Error::config("model.d", "must be divisible by n_heads"));
        }
        if self.max_seq_len < 8 {
            return Err(Error::config("model.max_seq_len", "must be >= 8"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("model.dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.d * self.ff_mult
    }
}
