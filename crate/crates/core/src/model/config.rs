use serde::{Deserialize, Serialize};

use crate::data::{MINUTES_PER_DAY, N_CHANNELS};
use crate::{Error, Result};

/// Architecture hyperparameters shared by the sensor encoder, text encoder and decoder.
///
/// `enc_layers` applies to both encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub patch_f: usize,
    pub patch_t: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    #[serde(default)]
    pub dropout: f32,
}

impl ModelConfig {
    /// The desk-scale configuration used by the acceptance runs.
    pub fn tiny(vocab_size: usize, max_text_len: usize) -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            hidden_dim: 64,
            heads: 4,
            mlp_dim: 128,
            patch_f: 2,
            patch_t: 60,
            embed_dim: 32,
            vocab_size,
            max_text_len,
            dropout: 0.0,
        }
    }

    /// A configuration of roughly 15k parameters (at vocabulary 16) for
    /// finite-difference gradient checks.
    pub fn gradcheck(vocab_size: usize, max_text_len: usize) -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            hidden_dim: 8,
            heads: 2,
            mlp_dim: 16,
            patch_f: 26,
            patch_t: 60,
            embed_dim: 4,
            vocab_size,
            max_text_len,
            dropout: 0.0,
        }
    }

    fn family(layers: usize, mlp: usize, hidden: usize, heads: usize, vocab_size: usize, max_text_len: usize) -> Self {
        Self {
            enc_layers: layers,
            dec_layers: 3,
            hidden_dim: hidden,
            heads,
            mlp_dim: mlp,
            patch_f: 2,
            patch_t: 10,
            embed_dim: hidden,
            vocab_size,
            max_text_len,
            dropout: 0.0,
        }
    }

    pub fn small(vocab_size: usize, max_text_len: usize) -> Self {
        Self::family(12, 512, 128, 16, vocab_size, max_text_len)
    }

    pub fn base(vocab_size: usize, max_text_len: usize) -> Self {
        Self::family(12, 3072, 768, 12, vocab_size, max_text_len)
    }

    pub fn large(vocab_size: usize, max_text_len: usize) -> Self {
        Self::family(24, 4096, 1024, 16, vocab_size, max_text_len)
    }

    pub fn xlarge(vocab_size: usize, max_text_len: usize) -> Self {
        Self::family(40, 5632, 1408, 16, vocab_size, max_text_len)
    }

    /// Named configuration: `tiny`, `s`, `b`, `l` or `xl`.
    pub fn preset(name: &str, vocab_size: usize, max_text_len: usize) -> Option<Self> {
        let f = match name.to_ascii_lowercase().as_str() {
            "tiny" => Self::tiny,
            "s" | "small" => Self::small,
            "b" | "base" => Self::base,
            "l" | "large" => Self::large,
            "xl" | "xlarge" => Self::xlarge,
            _ => return None,
        };
        Some(f(vocab_size, max_text_len))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
            ("patch_f", self.patch_f),
            ("patch_t", self.patch_t),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if N_CHANNELS % self.patch_f != 0 || MINUTES_PER_DAY % self.patch_t != 0 {
            return Err(Error::config(format!(
                "patch ({}, {}) does not tile a {N_CHANNELS} x {MINUTES_PER_DAY} day",
                self.patch_f, self.patch_t
            )));
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if self.vocab_size <= crate::text::N_SPECIAL {
            return Err(Error::config("vocab_size must exceed the four special tokens"));
        }
        if self.max_text_len < 2 {
            return Err(Error::config("max_text_len must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        (N_CHANNELS / self.patch_f) * (MINUTES_PER_DAY / self.patch_t)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_f * self.patch_t
    }

    /// Scalar parameter count implied by the configuration.
    pub fn num_params(&self) -> usize {
        let (h, m, e, v, l) = (self.hidden_dim, self.mlp_dim, self.embed_dim, self.vocab_size, self.max_text_len);
        let ln = 2 * h;
        let attn = 4 * h * h + 3 * h;
        let mlp = h * m + m + m * h + h;
        let enc_block = 2 * ln + attn + mlp;
        let dec_block = 3 * ln + 2 * attn + mlp;
        let sensor = self.patch_dim() * h + h + self.n_tokens() * h + self.enc_layers * enc_block + ln + h * e + e;
        let text = v * h + l * h + self.enc_layers * enc_block + ln + h * e + e;
        let decoder = v * h + l * h + self.dec_layers * dec_block + ln + h * v + v;
        sensor + text + decoder
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        let mut c = ModelConfig::small(100, 32);
        assert_eq!(c.n_tokens(), 1872);
        c.patch_f = 26;
        c.patch_t = 1440;
        assert_eq!(c.n_tokens(), 1);
        assert_eq!(ModelConfig::tiny(100, 32).n_tokens(), 312);
    }

    #[test]
    fn family_validates() {
        for name in ["tiny", "s", "b", "l", "xl"] {
            ModelConfig::preset(name, 2000, 128).unwrap().validate().unwrap();
        }
        let mut c = ModelConfig::tiny(100, 32);
        c.patch_t = 7;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(100, 32);
        c.heads = 5;
        assert!(c.validate().is_err());
    }
}
