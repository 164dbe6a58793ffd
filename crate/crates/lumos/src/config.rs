//! Run configuration: a TOML file with `generator`, `model`, `training`,
//! `tasks`, `ablation` and `paths` sections. Every section is optional and
//! unknown keys are rejected with the full key path.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lumos_core::datamodel::{default_task_specs, validate_task_specs, TaskSpec, WindowConfig};
use lumos_core::model::ModelConfig;
use lumos_core::synthgen::GeneratorConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub grad_clip_norm: Option<f64>,
    /// Data-parallel loader workers; each step takes one batch per worker.
    pub workers: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 512,
            max_epochs: 50,
            early_stopping_patience: 10,
            weight_decay: 0.01,
            seed: 0,
            grad_clip_norm: None,
            workers: 1,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!("training.learning_rate must be > 0, got {}", self.learning_rate);
        }
        if self.batch_size == 0 {
            bail!("training.batch_size must be >= 1");
        }
        if self.workers == 0 {
            bail!("training.workers must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            bail!("training.weight_decay must be >= 0, got {}", self.weight_decay);
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                bail!("training.grad_clip_norm must be > 0, got {c}");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub mask_past_supply: bool,
    pub mask_future_supply: bool,
}

/// Where data lives and how `generate` splits it. Users are hashed into
/// `n_partitions` partitions; the last `test_partitions` form the test
/// split, the `val_partitions` before them the validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub n_partitions: usize,
    pub val_partitions: usize,
    pub test_partitions: usize,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            checkpoint: None,
            n_partitions: 10,
            val_partitions: 2,
            test_partitions: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub tasks: Vec<TaskSpec>,
    pub ablation: AblationConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        Self {
            tasks: default_task_specs(generator.d_u),
            generator,
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            ablation: AblationConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        validate_task_specs(&self.tasks, self.model.d_u).context("tasks")?;
        for (name, m, g) in [
            ("d_u", self.model.d_u, self.generator.d_u),
            ("d_s", self.model.d_s, self.generator.d_s),
            ("d_static", self.model.d_static, self.generator.d_static),
        ] {
            if m != g {
                bail!("model.{name} ({m}) disagrees with generator.{name} ({g})");
            }
        }
        let p = &self.paths;
        if p.n_partitions == 0 || p.val_partitions == 0 || p.test_partitions == 0 {
            bail!("paths.n_partitions, val_partitions and test_partitions must be >= 1");
        }
        if p.val_partitions + p.test_partitions >= p.n_partitions {
            bail!(
                "paths.n_partitions ({}) must exceed val_partitions + test_partitions ({})",
                p.n_partitions,
                p.val_partitions + p.test_partitions
            );
        }
        Ok(())
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            t_hist: self.model.t_hist,
            t_fut: self.model.t_fut,
        }
    }

    /// Sets every seed from one root seed.
    pub fn set_root_seed(&mut self, seed: u64) {
        self.generator.seed = seed;
        self.model.seed = seed;
        self.training.seed = seed;
    }
}

/// Parses and validates a TOML run config. When `tasks` is absent it is
/// derived from `model.d_u`.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("config error at `{path}`: {}", e.into_inner())
    })?;
    if !has_tasks_table(text) {
        config.tasks = default_task_specs(config.model.d_u);
    }
    config.validate()?;
    Ok(config)
}

fn has_tasks_table(text: &str) -> bool {
    text.parse::<toml::Table>()
        .map(|t| t.contains_key("tasks"))
        .unwrap_or(false)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("in {}", path.display()))
}
