use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    Learned,
    Sinusoidal,
    Absolute,
}

impl core::str::FromStr for PositionalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Self::Learned),
            "sinusoidal" => Ok(Self::Sinusoidal),
            "absolute" => Ok(Self::Absolute),
            other => Err(Error::Config(format!(
                "unknown positional kind `{other}` (expected learned|sinusoidal|absolute)"
            ))),
        }
    }
}

impl core::fmt::Display for PositionalKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Self::Learned => "learned",
            Self::Sinusoidal => "sinusoidal",
            Self::Absolute => "absolute",
        })
    }
}

/// Architecture hyperparameters. Defaults follow the production settings
/// (512-wide, 8 heads, 6 encoder layers, one decoder layer, 360/7 windows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub dim_ff: usize,
    pub dim_user_embed: usize,
    pub dim_supply_embed: usize,
    pub dim_static_embed: usize,
    pub embedding_depth: usize,
    pub dropout: f64,
    pub positional: PositionalKind,
    pub t_hist: usize,
    pub t_fut: usize,
    pub d_u: usize,
    pub d_s: usize,
    pub d_static: usize,
    pub seed: u64,
    pub loss_variant: LossVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            n_enc_layers: 6,
            n_dec_layers: 1,
            dim_ff: 2048,
            dim_user_embed: 128,
            dim_supply_embed: 64,
            dim_static_embed: 32,
            embedding_depth: 2,
            dropout: 0.1,
            positional: PositionalKind::Learned,
            t_hist: 360,
            t_fut: 7,
            d_u: 4,
            d_s: 3,
            d_static: 4,
            seed: 0,
            loss_variant: LossVariant::Halved,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("dim_ff", self.dim_ff),
            ("dim_user_embed", self.dim_user_embed),
            ("dim_supply_embed", self.dim_supply_embed),
            ("dim_static_embed", self.dim_static_embed),
            ("embedding_depth", self.embedding_depth),
            ("t_hist", self.t_hist),
            ("t_fut", self.t_fut),
            ("d_u", self.d_u),
            ("d_s", self.d_s),
            ("d_static", self.d_static),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model.n_heads: d_model ({}) is not divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "model.dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
