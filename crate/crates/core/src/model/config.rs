use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer encoder geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub subword_vocab_size: usize,
    /// Dropout on attention and feed-forward outputs during training.
    #[serde(default)]
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale default: 2 heads, 2 blocks, width 64.
    pub fn toy(subword_vocab_size: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 2,
            n_blocks: 2,
            ffn_dim: 128,
            max_seq_len: 64,
            subword_vocab_size,
            dropout: 0.0,
        }
    }

    /// mBERT-base geometry (12 heads, 12 blocks, width 768).
    pub fn bert_base(subword_vocab_size: usize) -> Self {
        Self {
            d_model: 768,
            n_heads: 12,
            n_blocks: 12,
            ffn_dim: 3072,
            max_seq_len: 512,
            subword_vocab_size,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
            ("subword_vocab_size", self.subword_vocab_size),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        if self.n_heads > 0 && self.d_model % self.n_heads != 0 {
            problems.push(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}
