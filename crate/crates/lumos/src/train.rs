//! Training loop with early stopping, and held-out evaluation.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use lumos_core::datamodel::{kinds_by_index, TaskKind, TaskSpec, TrainingSample};
use lumos_core::loss::{compute_loss, multitask_loss_with, per_dim_losses_value};
use lumos_core::metrics::{mape, roc_auc};
use lumos_core::model::{AttentionTrace, Model};
use lumos_core::optim::{clip_grad_norm, AdamW, AdamWConfig};
use lumos_core::params::Grads;
use lumos_core::tape::Tape;
use lumos_core::tensor::{Mat, Scalar};
use lumos_core::Error as CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{AblationConfig, TrainConfig};
use crate::io::Dataset;
use crate::loader::{load_all, stream_batches, AsOfPolicy, SampleOptions};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";

/// Runs `f` on a pool capped by `LUMOS_NUM_THREADS` when it is set.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var("LUMOS_NUM_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .with_context(|| format!("LUMOS_NUM_THREADS must be a positive integer, got `{v}`"))?;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// One dimension's held-out metric. `value` is `None` when undefined, e.g.
/// an AUC with only one class present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimMetric {
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    pub per_dim_loss: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, DimMetric>,
    pub n_samples: usize,
}

/// Per-sample evaluation-mode outputs, in input order.
pub fn predict_all<F: Scalar>(model: &Model<F>, samples: &[TrainingSample]) -> Result<Vec<(Mat<f64>, AttentionTrace)>> {
    samples
        .par_iter()
        .map(|s| model.predict(s).map_err(anyhow::Error::from))
        .collect()
}

/// Loss and metrics of `model` on `samples`.
///
/// Binary dims report ROC-AUC pooled over every (sample, future day) pair.
/// Continuous dims report MAPE in original units over active positions; the
/// scaled prediction is clamped to `[0, 1]` before inverse scaling.
pub fn evaluate_samples<F: Scalar>(
    model: &Model<F>,
    samples: &[TrainingSample],
    tasks: &[TaskSpec],
    dataset: &Dataset,
) -> Result<EvalReport> {
    if samples.is_empty() {
        bail!("evaluation set is empty");
    }
    let d_u = model.config().d_u;
    let kinds = kinds_by_index(tasks, d_u)?;
    let preds = predict_all(model, samples)?;
    let log_vars = model.log_vars();
    let variant = model.config().loss_variant;
    let mut loss = 0.0;
    let mut per_dim = vec![0.0; d_u];
    for ((p, _), s) in preds.iter().zip(samples) {
        let l = per_dim_losses_value(p, s, &kinds)?;
        loss += multitask_loss_with(&l, &log_vars, variant)?;
        for (acc, v) in per_dim.iter_mut().zip(&l) {
            *acc += v;
        }
    }
    let n = samples.len() as f64;
    let mut metrics = BTreeMap::new();
    let mut per_dim_loss = BTreeMap::new();
    for task in tasks {
        let k = task.index;
        per_dim_loss.insert(task.name.clone(), per_dim[k] / n);
        let metric = match task.kind {
            TaskKind::Binary => {
                let mut labels = Vec::new();
                let mut scores = Vec::new();
                for ((p, _), s) in preds.iter().zip(samples) {
                    for t in 0..s.t_fut() {
                        labels.push(*s.targets.get(t, k) >= 0.5);
                        scores.push(*p.get(t, k));
                    }
                }
                DimMetric {
                    metric: "roc_auc".into(),
                    value: optional(roc_auc(&labels, &scores))?,
                }
            }
            TaskKind::Continuous => {
                let scaler = dataset.manifest.scalers.user[k];
                let mut actual = Vec::new();
                let mut predicted = Vec::new();
                for ((p, _), s) in preds.iter().zip(samples) {
                    for t in 0..s.t_fut() {
                        if *s.activity_mask.get(t, k) {
                            actual.push(*s.targets_raw.get(t, k));
                            predicted.push(scaler.inverse(p.get(t, k).clamp(0.0, 1.0)));
                        }
                    }
                }
                DimMetric {
                    metric: "mape".into(),
                    value: optional(mape(&actual, &predicted, None))?,
                }
            }
        };
        metrics.insert(task.name.clone(), metric);
    }
    Ok(EvalReport {
        loss: loss / n,
        per_dim_loss,
        metrics,
        n_samples: samples.len(),
    })
}

fn optional(r: lumos_core::error::Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(CoreError::SingleClass) | Err(CoreError::Empty(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn eval_options(window: lumos_core::datamodel::WindowConfig, ablation: AblationConfig) -> SampleOptions {
    SampleOptions {
        window,
        as_of: AsOfPolicy::Latest,
        mask_past_supply: ablation.mask_past_supply,
        mask_future_supply: ablation.mask_future_supply,
    }
}

/// Evaluation of `model` on every user of `dataset` at the latest as-of day.
pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    dataset: &Dataset,
    tasks: &[TaskSpec],
    ablation: AblationConfig,
) -> Result<EvalReport> {
    let window = lumos_core::datamodel::WindowConfig {
        t_hist: model.config().t_hist,
        t_fut: model.config().t_fut,
    };
    let samples = load_all(dataset, &eval_options(window, ablation), 0)?;
    evaluate_samples(model, &samples, tasks, dataset)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub metrics: BTreeMap<String, DimMetric>,
    pub log_vars: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the model before any update.
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss; 0 when nothing ran.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Patience-based early stopping on a loss that should decrease.
/// `patience = 0` never stops.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| loss < b);
        if improved {
            self.best = Some(loss);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.patience > 0 && self.since_best >= self.patience,
        }
    }
}

/// Inputs of one training run.
pub struct TrainJob<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub tasks: &'a [TaskSpec],
    /// `early_stopping_patience = 0` disables early stopping.
    pub config: &'a TrainConfig,
    pub ablation: AblationConfig,
    /// Where `history.jsonl` and checkpoints go; nothing is written if `None`.
    pub out_dir: Option<&'a Path>,
}

struct SampleGrad<F> {
    grads: Grads<F>,
    total: f64,
}

fn sample_grad<F: Scalar>(
    model: &Model<F>,
    sample: &TrainingSample,
    kinds: &[TaskKind],
    rng: &mut ChaCha8Rng,
) -> Result<SampleGrad<F>> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, sample, Some(rng))?;
    let (total, breakdown) = compute_loss(&mut tape, model, out.predictions, sample, kinds)?;
    if !breakdown.total.is_finite() {
        bail!(
            "non-finite loss for user {} as of day {}: per-dim {:?}, log_vars {:?}",
            sample.user_id,
            sample.as_of_day,
            breakdown.per_dim,
            breakdown.log_vars_snapshot
        );
    }
    Ok(SampleGrad {
        grads: tape.backward(total, model.params().len())?,
        total: breakdown.total,
    })
}

/// Trains with AdamW and early stopping on validation loss, returning the
/// parameters of the best epoch.
///
/// Each step takes one batch from every worker's stream and averages the
/// per-sample gradients. Per-sample work runs on the rayon pool but gradients
/// are summed in sample order, so results do not depend on thread count.
pub fn train<F: Scalar>(model: Model<F>, job: &TrainJob<'_>) -> Result<(Model<F>, TrainHistory)> {
    let cfg = job.config;
    cfg.validate()?;
    let mut model = model;
    let d_u = model.config().d_u;
    let kinds = kinds_by_index(job.tasks, d_u)?;
    let window = lumos_core::datamodel::WindowConfig {
        t_hist: model.config().t_hist,
        t_fut: model.config().t_fut,
    };
    let mut history = TrainHistory::default();
    if let Some(dir) = job.out_dir {
        fs::create_dir_all(dir)?;
        File::create(dir.join(HISTORY_FILE))?;
    }
    if cfg.max_epochs == 0 {
        return Ok((model, history));
    }
    let val_samples = load_all(job.val, &eval_options(window, job.ablation), 0)?;
    if val_samples.is_empty() {
        bail!("validation set {} has no usable samples", job.val.dir.display());
    }
    history.initial_val_loss = Some(evaluate_samples(&model, &val_samples, job.tasks, job.val)?.loss);

    let mut opt = AdamW::<F>::new(AdamWConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    })?;
    let train_options = SampleOptions {
        window,
        as_of: AsOfPolicy::Random,
        mask_past_supply: job.ablation.mask_past_supply,
        mask_future_supply: job.ablation.mask_future_supply,
    };
    let mut best: Option<Model<F>> = None;
    let mut stopper = EarlyStopping::new(cfg.early_stopping_patience);
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let epoch_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64);
        let mut streams = (0..cfg.workers)
            .map(|w| stream_batches(job.train, w, cfg.workers, train_options, cfg.batch_size, epoch_seed))
            .collect::<Result<Vec<_>>>()?;
        let mut seen = 0u64;
        let mut loss_sum = 0.0;
        loop {
            let mut batch = Vec::new();
            for s in streams.iter_mut() {
                if let Some(b) = s.next() {
                    batch.extend(b?);
                }
            }
            if batch.is_empty() {
                break;
            }
            let base = seen;
            let results: Vec<SampleGrad<F>> = batch
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
                    rng.set_stream(base + i as u64);
                    sample_grad(&model, s, &kinds, &mut rng)
                })
                .collect::<Result<_>>()
                .with_context(|| format!("epoch {epoch}"))?;
            let mut grads = Grads::empty(model.params().len());
            for r in &results {
                grads.merge(&r.grads);
                loss_sum += r.total;
            }
            grads.scale(F::from_f64_lossy(1.0 / results.len() as f64));
            if let Some(max) = cfg.grad_clip_norm {
                clip_grad_norm(&mut grads, max);
            }
            opt.step(model.params_mut(), &grads);
            seen += results.len() as u64;
        }
        if seen == 0 {
            bail!("training set {} has no usable samples", job.train.dir.display());
        }
        let report = evaluate_samples(&model, &val_samples, job.tasks, job.val)?;
        if !report.loss.is_finite() {
            bail!("validation loss became non-finite at epoch {epoch}");
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss: report.loss,
            metrics: report.metrics,
            log_vars: model.log_vars(),
            seconds: started.elapsed().as_secs_f64(),
        };
        let decision = stopper.observe(record.val_loss);
        let improved = decision.improved;
        if improved {
            best = Some(model.clone());
            history.best_epoch = epoch;
        }
        if let Some(dir) = job.out_dir {
            let mut f = OpenOptions::new().append(true).open(dir.join(HISTORY_FILE))?;
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
            checkpoint::save(&dir.join(LAST_CKPT), &model, job.tasks, epoch)?;
            if improved {
                checkpoint::save(&dir.join(BEST_CKPT), &model, job.tasks, epoch)?;
            }
        }
        history.epochs.push(record);
        if decision.stop {
            break;
        }
    }
    Ok((best.expect("at least one epoch ran"), history))
}
