#![allow(dead_code)]

use std::path::Path;

use lumos::commands::{generate, Splits};
use lumos::config::RunConfig;

/// Small population and model that train in about a second.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.generator.n_users = 240;
    c.generator.n_days = 160;
    c.model.d_model = 16;
    c.model.n_heads = 2;
    c.model.n_enc_layers = 1;
    c.model.n_dec_layers = 1;
    c.model.dim_ff = 16;
    c.model.dim_user_embed = 8;
    c.model.dim_supply_embed = 8;
    c.model.dim_static_embed = 8;
    c.model.t_hist = 28;
    c.model.t_fut = 7;
    c.training.learning_rate = 3e-3;
    c.training.batch_size = 16;
    c.training.max_epochs = 3;
    c.paths.n_partitions = 8;
    c.paths.val_partitions = 2;
    c.paths.test_partitions = 2;
    c
}

pub fn generated(config: &RunConfig, dir: &Path) -> Splits {
    generate(config, dir).unwrap();
    Splits::open(dir).unwrap()
}
