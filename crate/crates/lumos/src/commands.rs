//! The workflow behind each CLI subcommand, callable as a library.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use lumos_core::datamodel::{fit_feature_scalers, kinds_by_index, TaskKind, TrainingSample, UserRecord};
use lumos_core::embeddings::{eval_probe, extract_dynamic, train_probe, AggregationStrategy, ProbeConfig};
use lumos_core::model::{Model, PositionalKind};
use lumos_core::scaling::{fit_power_law, PowerLawFit};
use lumos_core::synthgen::generate_population;
use lumos_core::tensor::{Mat, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::{AblationConfig, Precision, RunConfig};
use crate::io::{partition_of, write_calendar, write_groups, write_json, Dataset, DatasetManifest, MANIFEST_FILE};
use crate::loader::load_all;
use crate::train::{eval_options, evaluate, train, with_thread_cap, EvalReport, TrainHistory, TrainJob, BEST_CKPT};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub generator_seed: u64,
    pub model_seed: u64,
    pub training_seed: u64,
    pub git_describe: String,
    pub config: RunConfig,
    pub scalers: Option<lumos_core::datamodel::FeatureScalers>,
}

pub fn config_hash(config: &RunConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

pub fn write_run_manifest(
    out: &Path,
    command: &str,
    config: &RunConfig,
    scalers: Option<&lumos_core::datamodel::FeatureScalers>,
) -> Result<()> {
    let m = RunManifest {
        command: command.into(),
        config_hash: config_hash(config)?,
        generator_seed: config.generator.seed,
        model_seed: config.model.seed,
        training_seed: config.training.seed,
        git_describe: git_describe(),
        config: config.clone(),
        scalers: scalers.cloned(),
    };
    write_json(&out.join(RUN_MANIFEST), &m)
}

/// Split index of a user: train, val or test by partition range.
fn split_of(config: &RunConfig, user_id: &str) -> (usize, usize) {
    let p = &config.paths;
    let n_train = p.n_partitions - p.val_partitions - p.test_partitions;
    let k = partition_of(user_id, p.n_partitions);
    if k < n_train {
        (0, k)
    } else if k < n_train + p.val_partitions {
        (1, k - n_train)
    } else {
        (2, k - n_train - p.val_partitions)
    }
}

/// Generates the synthetic population and writes `train/`, `val/` and
/// `test/` data directories under `out`. Scalers are fit on train only.
pub fn generate(config: &RunConfig, out: &Path) -> Result<[DatasetManifest; 3]> {
    config.validate()?;
    let g = &config.generator;
    let (calendar, records) = generate_population(g)?;
    let p = &config.paths;
    let counts = [
        p.n_partitions - p.val_partitions - p.test_partitions,
        p.val_partitions,
        p.test_partitions,
    ];
    let mut groups: Vec<Vec<Vec<&UserRecord>>> = counts.iter().map(|n| vec![Vec::new(); *n]).collect();
    for r in &records {
        let (split, k) = split_of(config, &r.user_id);
        groups[split][k].push(r);
    }
    let train_records: Vec<UserRecord> = groups[0].iter().flatten().map(|r| (*r).clone()).collect();
    let kinds = kinds_by_index(&config.tasks, g.d_u)?;
    let scalers = fit_feature_scalers(&train_records, &calendar, &kinds, g.d_static)?;
    let (first_day, last_day) = match (calendar.context.keys().next(), calendar.context.keys().last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => bail!("generator produced an empty calendar (n_days = 0)"),
    };
    let mut manifests = Vec::new();
    for (split, name) in SPLITS.iter().enumerate() {
        let dir = out.join(name);
        write_groups(&groups[split], &dir)?;
        write_calendar(&calendar, &dir)?;
        let m = DatasetManifest {
            d_u: g.d_u,
            d_s: g.d_s,
            d_static: g.d_static,
            tasks: config.tasks.clone(),
            scalers: scalers.clone(),
            generator_seed: g.seed,
            n_partitions: counts[split],
            n_users: groups[split].iter().map(Vec::len).sum(),
            first_day,
            last_day,
        };
        write_json(&dir.join(MANIFEST_FILE), &m)?;
        manifests.push(m);
    }
    write_run_manifest(out, "generate", config, Some(&scalers))?;
    Ok(manifests.try_into().expect("three splits"))
}

/// Train, validation and test splits under a generated data directory.
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn open(data_dir: &Path) -> Result<Self> {
        Ok(Self {
            train: Dataset::open(&data_dir.join("train"))?,
            val: Dataset::open(&data_dir.join("val"))?,
            test: Dataset::open(&data_dir.join("test"))?,
        })
    }

    fn check(&self, config: &RunConfig) -> Result<()> {
        let m = &self.train.manifest;
        let c = &config.model;
        ensure!(
            (m.d_u, m.d_s, m.d_static) == (c.d_u, c.d_s, c.d_static),
            "data widths (d_u {}, d_s {}, d_static {}) disagree with model config ({}, {}, {})",
            m.d_u,
            m.d_s,
            m.d_static,
            c.d_u,
            c.d_s,
            c.d_static
        );
        Ok(())
    }
}

/// Result of one training run plus its held-out evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub history: TrainHistory,
    pub test: EvalReport,
    pub n_params: usize,
}

/// Trains a fresh model on `splits` and evaluates the best epoch on test.
pub fn train_and_test<F: Scalar>(
    config: &RunConfig,
    splits: &Splits,
    ablation: AblationConfig,
    out: Option<&Path>,
) -> Result<(Model<F>, TrainSummary)> {
    config.validate()?;
    splits.check(config)?;
    let model = Model::<F>::new(config.model.clone())?;
    let n_params = model.count_params();
    let job = TrainJob {
        train: &splits.train,
        val: &splits.val,
        tasks: &config.tasks,
        config: &config.training,
        ablation,
        out_dir: out,
    };
    let (model, history) = with_thread_cap(|| train(model, &job))??;
    let test = with_thread_cap(|| evaluate(&model, &splits.test, &config.tasks, ablation))??;
    Ok((model, TrainSummary { history, test, n_params }))
}

/// `train` subcommand: writes history, checkpoints, test metrics and the
/// run manifest under `out`.
pub fn train_command(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<TrainSummary> {
    let splits = Splits::open(data_dir)?;
    fs::create_dir_all(out)?;
    let summary = match config.training.precision {
        Precision::F32 => train_and_test::<f32>(config, &splits, config.ablation, Some(out))?.1,
        Precision::F64 => train_and_test::<f64>(config, &splits, config.ablation, Some(out))?.1,
    };
    write_json(&out.join("test_metrics.json"), &summary.test)?;
    write_run_manifest(out, "train", config, Some(&splits.train.manifest.scalers))?;
    Ok(summary)
}

/// `eval` subcommand on the test split.
pub fn eval_command(config: &RunConfig, checkpoint_path: &Path, data_dir: &Path, out: &Path) -> Result<EvalReport> {
    let (model, header) = checkpoint::load::<f64>(checkpoint_path)?;
    let test = Dataset::open(&data_dir.join("test"))?;
    let report = with_thread_cap(|| evaluate(&model, &test, &header.tasks, config.ablation))??;
    fs::create_dir_all(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    write_run_manifest(out, "eval", config, Some(&test.manifest.scalers))?;
    Ok(report)
}

/// Row labels of the supply ablation, with their (past, future) masks.
pub const SUPPLY_ABLATIONS: [(&str, bool, bool); 4] = [
    ("Full Model (Past + Future Supply)", false, false),
    ("No Future Supply", false, true),
    ("No Past Supply", true, false),
    ("No Supply (Past or Future)", true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub configuration: String,
    pub mask_past_supply: bool,
    pub mask_future_supply: bool,
    pub best_epoch: usize,
    pub val_loss: f64,
    pub test_loss: f64,
    /// ROC-AUC on the first binary task, if any.
    pub test_auc: Option<f64>,
    /// Relative test-loss change against the first row, in percent.
    pub loss_delta_pct: Option<f64>,
}

fn first_auc(config: &RunConfig, report: &EvalReport) -> Option<f64> {
    let task = config.tasks.iter().filter(|t| t.kind == TaskKind::Binary).min_by_key(|t| t.index)?;
    report.metrics.get(&task.name)?.value
}

fn ablation_row(config: &RunConfig, label: &str, ablation: AblationConfig, s: &TrainSummary) -> AblationRow {
    AblationRow {
        configuration: label.into(),
        mask_past_supply: ablation.mask_past_supply,
        mask_future_supply: ablation.mask_future_supply,
        best_epoch: s.history.best_epoch,
        val_loss: s.history.best().map_or(f64::NAN, |r| r.val_loss),
        test_loss: s.test.loss,
        test_auc: first_auc(config, &s.test),
        loss_delta_pct: None,
    }
}

fn fill_deltas(rows: &mut [AblationRow]) {
    if let Some(base) = rows.first().map(|r| r.test_loss) {
        for r in rows.iter_mut().skip(1) {
            r.loss_delta_pct = Some(100.0 * (r.test_loss - base) / base.abs());
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "configuration",
        "mask_past_supply",
        "mask_future_supply",
        "best_epoch",
        "val_loss",
        "test_loss",
        "test_auc",
        "loss_delta_pct",
    ])?;
    for r in rows {
        w.write_record([
            r.configuration.clone(),
            r.mask_past_supply.to_string(),
            r.mask_future_supply.to_string(),
            r.best_epoch.to_string(),
            format!("{:.6}", r.val_loss),
            format!("{:.6}", r.test_loss),
            fmt_opt(r.test_auc),
            fmt_opt(r.loss_delta_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_precision(config: &RunConfig, splits: &Splits, ablation: AblationConfig, out: Option<&Path>) -> Result<TrainSummary> {
    Ok(match config.training.precision {
        Precision::F32 => train_and_test::<f32>(config, splits, ablation, out)?.1,
        Precision::F64 => train_and_test::<f64>(config, splits, ablation, out)?.1,
    })
}

/// `ablate-supply`: trains the four supply-mask configurations with the same
/// seeds, masking identically at train and eval time.
pub fn ablate_supply(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    let splits = Splits::open(data_dir)?;
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for (label, past, future) in SUPPLY_ABLATIONS {
        let ablation = AblationConfig {
            mask_past_supply: past,
            mask_future_supply: future,
        };
        let s = run_precision(config, &splits, ablation, None)?;
        rows.push(ablation_row(config, label, ablation, &s));
    }
    fill_deltas(&mut rows);
    write_ablation_csv(&out.join("supply_ablation.csv"), &rows)?;
    write_run_manifest(out, "ablate-supply", config, Some(&splits.train.manifest.scalers))?;
    Ok(rows)
}

/// `ablate-positional`: learned, sinusoidal and absolute encodings.
pub fn ablate_positional(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    let splits = Splits::open(data_dir)?;
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for kind in [PositionalKind::Learned, PositionalKind::Sinusoidal, PositionalKind::Absolute] {
        let mut c = config.clone();
        c.model.positional = kind;
        let s = run_precision(&c, &splits, config.ablation, None)?;
        rows.push(ablation_row(&c, &kind.to_string(), config.ablation, &s));
    }
    fill_deltas(&mut rows);
    write_ablation_csv(&out.join("positional_ablation.csv"), &rows)?;
    write_run_manifest(out, "ablate-positional", config, Some(&splits.train.manifest.scalers))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLine {
    pub user_id: String,
    pub as_of_day: i64,
    pub strategy: String,
    pub vector: Vec<f64>,
}

fn strategy_label(s: &AggregationStrategy) -> String {
    match s.kind {
        lumos_core::embeddings::AggregationKind::ExpWeighted => format!("exp_weighted(lambda={})", s.lambda),
        k => format!("{k:?}").to_lowercase(),
    }
}

/// Dynamic embeddings of every user of `dataset` at the latest as-of day.
pub fn embed_dataset<F: Scalar>(
    model: &Model<F>,
    dataset: &Dataset,
    strategy: AggregationStrategy,
    ablation: AblationConfig,
) -> Result<(Vec<TrainingSample>, Vec<EmbeddingLine>)> {
    let window = lumos_core::datamodel::WindowConfig {
        t_hist: model.config().t_hist,
        t_fut: model.config().t_fut,
    };
    let samples = load_all(dataset, &eval_options(window, ablation), 0)?;
    let label = strategy_label(&strategy);
    let lines = with_thread_cap(|| {
        samples
            .par_iter()
            .map(|s| {
                Ok(EmbeddingLine {
                    user_id: s.user_id.clone(),
                    as_of_day: s.as_of_day,
                    strategy: label.clone(),
                    vector: extract_dynamic(s, model, strategy)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok((samples, lines))
}

/// `embed` subcommand: writes `embeddings.jsonl` for the chosen split.
pub fn embed_command(
    config: &RunConfig,
    checkpoint_path: &Path,
    data_dir: &Path,
    split: &str,
    strategy: AggregationStrategy,
    out: &Path,
) -> Result<usize> {
    strategy.validate()?;
    let (model, _) = checkpoint::load::<f64>(checkpoint_path)?;
    let dataset = Dataset::open(&data_dir.join(split))?;
    let (_, lines) = embed_dataset(&model, &dataset, strategy, config.ablation)?;
    fs::create_dir_all(out)?;
    let path = out.join("embeddings.jsonl");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for l in &lines {
        writeln!(w, "{}", serde_json::to_string(l)?)?;
    }
    w.flush()?;
    write_run_manifest(out, "embed", config, Some(&dataset.manifest.scalers))?;
    Ok(lines.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub target: String,
    pub strategy: String,
    pub n_train: usize,
    pub n_test: usize,
    pub test_auc: Option<f64>,
    /// Same probe trained on permuted training labels.
    pub permuted_auc: Option<f64>,
}

/// Churn label of a sample: no activity on any future day.
pub fn churn_label(s: &TrainingSample) -> f64 {
    let active = (0..s.t_fut()).any(|t| *s.activity_mask.get(t, 0));
    if active {
        0.0
    } else {
        1.0
    }
}

fn embedding_matrix(lines: &[EmbeddingLine]) -> Result<Mat<f64>> {
    let d = lines.first().map_or(0, |l| l.vector.len());
    Ok(Mat::from_vec(lines.len(), d, lines.iter().flat_map(|l| l.vector.iter().copied()).collect())?)
}

fn auc_or_none(r: lumos_core::Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(lumos_core::Error::SingleClass) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Logistic churn probe on train-split embeddings, scored on test, with a
/// permuted-label control.
pub fn probe_churn<F: Scalar>(
    model: &Model<F>,
    splits: &Splits,
    strategy: AggregationStrategy,
    ablation: AblationConfig,
    seed: u64,
) -> Result<ProbeReport> {
    let (train_s, train_e) = embed_dataset(model, &splits.train, strategy, ablation)?;
    let (test_s, test_e) = embed_dataset(model, &splits.test, strategy, ablation)?;
    let y_train: Vec<f64> = train_s.iter().map(churn_label).collect();
    let y_test: Vec<f64> = test_s.iter().map(churn_label).collect();
    let x_train = embedding_matrix(&train_e)?;
    let x_test = embedding_matrix(&test_e)?;
    let cfg = ProbeConfig {
        seed,
        ..ProbeConfig::default()
    };
    let probe = train_probe(&x_train, &y_train, &cfg)?;
    let test_auc = auc_or_none(eval_probe(&probe, &x_test, &y_test))?;
    let mut permuted = y_train.clone();
    permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let control = train_probe(&x_train, &permuted, &cfg)?;
    let permuted_auc = auc_or_none(eval_probe(&control, &x_test, &y_test))?;
    Ok(ProbeReport {
        target: "churn".into(),
        strategy: strategy_label(&strategy),
        n_train: y_train.len(),
        n_test: y_test.len(),
        test_auc,
        permuted_auc,
    })
}

pub fn probe_command(
    config: &RunConfig,
    checkpoint_path: &Path,
    data_dir: &Path,
    strategy: AggregationStrategy,
    out: &Path,
) -> Result<ProbeReport> {
    strategy.validate()?;
    let (model, _) = checkpoint::load::<f64>(checkpoint_path)?;
    let splits = Splits::open(data_dir)?;
    let report = probe_churn(&model, &splits, strategy, config.ablation, config.training.seed)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("probe.json"), &report)?;
    write_run_manifest(out, "probe", config, Some(&splits.train.manifest.scalers))?;
    Ok(report)
}

#[derive(Deserialize)]
struct ScalingRow {
    x: f64,
    loss: f64,
}

/// Reads a `x,loss` CSV.
pub fn read_scaling_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    ensure!(
        headers.iter().collect::<Vec<_>>() == ["x", "loss"],
        "{}: expected header `x,loss`, got `{}`",
        path.display(),
        headers.iter().collect::<Vec<_>>().join(",")
    );
    r.deserialize::<ScalingRow>()
        .map(|row| {
            let row = row?;
            Ok((row.x, row.loss))
        })
        .collect()
}

pub fn fit_scaling_command(input: &Path, out: &Path) -> Result<PowerLawFit> {
    let points = read_scaling_csv(input)?;
    let fit = fit_power_law(&points)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("scaling_fit.json"), &fit)?;
    Ok(fit)
}

/// Head-averaged cross-attention of one decoder layer as CSV, one row per
/// future day and one column per history day.
pub fn write_attention_csv(path: &Path, weights: &Mat<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("writing {}", path.display()))?;
    for r in 0..weights.rows() {
        w.write_record(weights.row(r).iter().map(|v| format!("{v:.9}")))?;
    }
    w.flush()?;
    Ok(())
}

/// `export-attention`: the model comes from `checkpoint` if given, else is
/// freshly initialized from the config; the sample is the named user (or the
/// first one) of the test split.
pub fn export_attention_command(
    config: &RunConfig,
    checkpoint_path: Option<&Path>,
    data_dir: &Path,
    user: Option<&str>,
    layer: usize,
    out: &Path,
) -> Result<PathBuf> {
    let model = match checkpoint_path {
        Some(p) => checkpoint::load::<f64>(p)?.0,
        None => Model::<f64>::new(config.model.clone())?,
    };
    let test = Dataset::open(&data_dir.join("test"))?;
    let window = lumos_core::datamodel::WindowConfig {
        t_hist: model.config().t_hist,
        t_fut: model.config().t_fut,
    };
    let samples = load_all(&test, &eval_options(window, config.ablation), 0)?;
    let sample = match user {
        Some(u) => samples
            .iter()
            .find(|s| s.user_id == u)
            .with_context(|| format!("user `{u}` has no sample in {}", test.dir.display()))?,
        None => samples.first().context("test split has no samples")?,
    };
    let (_, trace) = model.predict(sample)?;
    let weights = trace
        .head_average(layer)
        .with_context(|| format!("--layer {layer} out of range ({} decoder layers)", trace.layers.len()))?;
    fs::create_dir_all(out)?;
    let path = out.join("attention.csv");
    write_attention_csv(&path, &weights)?;
    write_run_manifest(out, "export-attention", config, Some(&test.manifest.scalers))?;
    Ok(path)
}

/// Resolves the checkpoint to use: explicit flag, config path, or
/// `best.ckpt` in `fallback_dir`.
pub fn resolve_checkpoint(flag: Option<&Path>, config: &RunConfig, fallback_dir: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| config.paths.checkpoint.clone())
        .or_else(|| fallback_dir.map(|d| d.join(BEST_CKPT)).filter(|p| p.is_file()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventAttention {
    /// Mean cross-attention mass on history days with nonzero event context.
    pub event_mass: f64,
    /// Mean fraction of history days with event context (uniform attention).
    pub baseline: f64,
    pub ratio: f64,
}

/// Compares the head-averaged cross-attention mass on event days with what
/// uniform attention would put there, averaged over samples and future days.
pub fn event_attention<F: Scalar>(
    model: &Model<F>,
    samples: &[TrainingSample],
    calendar: &lumos_core::datamodel::EventCalendar,
    layer: usize,
) -> Result<EventAttention> {
    ensure!(!samples.is_empty(), "no samples for attention analysis");
    let d_s = calendar.d_s;
    let parts = with_thread_cap(|| {
        samples
            .par_iter()
            .map(|s| {
                let (_, trace) = model.predict(s)?;
                let w = trace.head_average(layer).context("decoder layer out of range")?;
                let t_hist = s.t_hist() as i64;
                let start = s.as_of_day - t_hist + 1;
                let event: Vec<bool> = (0..t_hist).map(|t| calendar.is_event_day(start + t, 0..d_s)).collect();
                let mut mass = 0.0;
                for r in 0..w.rows() {
                    mass += w.row(r).iter().zip(&event).filter(|(_, e)| **e).map(|(v, _)| v).sum::<f64>();
                }
                let frac = event.iter().filter(|e| **e).count() as f64 / t_hist as f64;
                Ok((mass / w.rows() as f64, frac))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let n = parts.len() as f64;
    let event_mass = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let baseline = parts.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(EventAttention {
        event_mass,
        baseline,
        ratio: event_mass / baseline,
    })
}
