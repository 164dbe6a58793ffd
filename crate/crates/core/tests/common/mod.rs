#![allow(dead_code)]

use lumos_core::datamodel::{TaskKind, TrainingSample};
use lumos_core::model::{ModelConfig, PositionalKind};
use lumos_core::synthgen::random_sample;

/// Gradient-check sized model: d_model 16, one encoder and one decoder layer.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        dim_ff: 4,
        dim_user_embed: 4,
        dim_supply_embed: 4,
        dim_static_embed: 4,
        embedding_depth: 2,
        dropout: 0.1,
        positional: PositionalKind::Learned,
        t_hist: 8,
        t_fut: 2,
        d_u: 2,
        d_s: 3,
        d_static: 4,
        seed: 7,
        ..ModelConfig::default()
    }
}

pub fn kinds(d_u: usize) -> Vec<TaskKind> {
    (0..d_u)
        .map(|k| {
            if k == 0 {
                TaskKind::Binary
            } else {
                TaskKind::Continuous
            }
        })
        .collect()
}

pub fn sample_for(c: &ModelConfig, n_pad: usize, seed: u64) -> TrainingSample {
    random_sample(c.t_hist, c.t_fut, c.d_u, c.d_s, c.d_static, n_pad, seed)
}
