//! Embedding extraction, sequence aggregation and downstream probes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{TaskKind, TrainingSample};
use crate::error::{shape_err, Error, Result};
use crate::metrics::{mape, roc_auc};
use crate::model::layers::{Dropout, Mlp};
use crate::model::Model;
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::tape::{sigmoid, Tape};
use crate::tensor::{Mat, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Mean,
    Max,
    Last,
    ExpWeighted,
}

impl core::str::FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "last" => Ok(Self::Last),
            "exp" | "exp_weighted" => Ok(Self::ExpWeighted),
            other => Err(Error::Config(format!(
                "unknown aggregation strategy `{other}` (expected mean|max|last|exp)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationStrategy {
    pub kind: AggregationKind,
    /// Decay horizon in days; only read for `ExpWeighted`.
    pub lambda: f64,
}

impl AggregationStrategy {
    pub const MEAN: Self = Self::plain(AggregationKind::Mean);
    pub const MAX: Self = Self::plain(AggregationKind::Max);
    pub const LAST: Self = Self::plain(AggregationKind::Last);

    const fn plain(kind: AggregationKind) -> Self {
        Self { kind, lambda: 1.0 }
    }

    pub fn exp_weighted(lambda: f64) -> Result<Self> {
        let s = Self {
            kind: AggregationKind::ExpWeighted,
            lambda,
        };
        s.validate()?;
        Ok(s)
    }

    /// Same strategy expressed through the per-day decay `α = exp(−1/λ)`.
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidValue(format!(
                "decay alpha must be in (0,1), got {alpha}"
            )));
        }
        Self::exp_weighted(-1.0 / libm::log(alpha))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AggregationKind::ExpWeighted && !(self.lambda > 0.0) {
            return Err(Error::InvalidValue(format!(
                "exp_weighted lambda must be > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Normalized recency weights `α^{T−i} / Σ_j α^{T−j}` over the positions
/// where `keep` is true (zero elsewhere).
pub fn exp_weights(keep: &[bool], lambda: f64) -> Result<Vec<f64>> {
    let last = keep.iter().rposition(|k| *k).ok_or(Error::AllPadded)?;
    let mut w: Vec<f64> = keep
        .iter()
        .enumerate()
        .map(|(i, k)| {
            if *k {
                libm::exp(-((last - i) as f64) / lambda)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Collapses `h` (`T × d`) into one `d`-vector, skipping rows flagged in
/// `pad_mask`.
pub fn aggregate(
    h: &Mat<f64>,
    strategy: AggregationStrategy,
    pad_mask: &[bool],
) -> Result<Vec<f64>> {
    strategy.validate()?;
    if h.rows() == 0 {
        return Err(Error::Empty("aggregate: no positions"));
    }
    if pad_mask.len() != h.rows() {
        return Err(shape_err("aggregate pad_mask", h.rows(), pad_mask.len()));
    }
    let keep: Vec<bool> = pad_mask.iter().map(|p| !p).collect();
    if !keep.iter().any(|k| *k) {
        return Err(Error::AllPadded);
    }
    let d = h.cols();
    let rows = || (0..h.rows()).filter(|r| keep[*r]).map(|r| h.row(r));
    Ok(match strategy.kind {
        AggregationKind::Mean => {
            let mut acc = vec![0.0; d];
            let mut n = 0.0;
            for row in rows() {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
                n += 1.0;
            }
            acc.iter().map(|a| a / n).collect()
        }
        AggregationKind::Max => {
            let mut acc = vec![f64::NEG_INFINITY; d];
            for row in rows() {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a = a.max(*v);
                }
            }
            acc
        }
        AggregationKind::Last => rows().next_back().expect("non-empty").to_vec(),
        AggregationKind::ExpWeighted => {
            let w = exp_weights(&keep, strategy.lambda)?;
            let mut acc = vec![0.0; d];
            for (r, wr) in w.iter().enumerate() {
                if *wr == 0.0 {
                    continue;
                }
                for (a, v) in acc.iter_mut().zip(h.row(r)) {
                    *a += wr * v;
                }
            }
            acc
        }
    })
}

/// Final (post-norm) encoder states of `sample`, evaluation mode.
pub fn encoder_states<F: Scalar>(sample: &TrainingSample, model: &Model<F>) -> Result<Mat<f64>> {
    let mut tape = Tape::new();
    let (h, _) = model.forward_encoder(&mut tape, sample, &mut Dropout::eval())?;
    Ok(tape.value(h).cast())
}

/// Dynamic user embedding: aggregated encoder output.
pub fn extract_dynamic<F: Scalar>(
    sample: &TrainingSample,
    model: &Model<F>,
    strategy: AggregationStrategy,
) -> Result<Vec<f64>> {
    let h = encoder_states(sample, model)?;
    aggregate(&h, strategy, &sample.pad_mask)
}

/// Static-pathway embedding for cold-start users.
pub fn extract_static<F: Scalar>(x_static: &[f64], model: &Model<F>) -> Result<Vec<f64>> {
    let d = model.config().d_static;
    if x_static.len() != d {
        return Err(shape_err("extract_static", d, x_static.len()));
    }
    let mut tape = Tape::new();
    let x = tape.constant(Mat::from_vec(
        1,
        d,
        x_static.iter().map(|v| F::from_f64_lossy(*v)).collect(),
    )?);
    let h = model.embed_static(&mut tape, x)?;
    Ok(tape
        .value(h)
        .as_slice()
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect())
}

/// Past-event pathway applied to each day of `supply`, then aggregated.
pub fn extract_supply<F: Scalar>(
    supply: &Mat<f64>,
    model: &Model<F>,
    strategy: AggregationStrategy,
) -> Result<Vec<f64>> {
    if supply.rows() == 0 {
        return Err(Error::Empty("extract_supply: empty sequence"));
    }
    let mut tape = Tape::new();
    let s = tape.constant(supply.cast());
    let h = model.embed_supply(&mut tape, s)?;
    let h: Mat<f64> = tape.value(h).cast();
    aggregate(&h, strategy, &vec![false; supply.rows()])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub target_kind: TaskKind,
    pub l2: f64,
    pub tolerance: f64,
    pub max_steps: usize,
    pub mlp_hidden: usize,
    pub mlp_steps: usize,
    pub mlp_learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Logistic,
            target_kind: TaskKind::Binary,
            l2: 1e-4,
            tolerance: 1e-6,
            max_steps: 10_000,
            mlp_hidden: 64,
            mlp_steps: 500,
            mlp_learning_rate: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum ProbeWeights {
    Linear { w: Vec<f64>, b: f64 },
    Mlp { store: ParamStore<f64>, mlp: Mlp },
}

/// A trained downstream model over embedding vectors.
#[derive(Clone, Debug)]
pub struct Probe {
    pub kind: ProbeKind,
    pub target_kind: TaskKind,
    pub input_dim: usize,
    pub steps_taken: usize,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    weights: ProbeWeights,
}

fn standardize_params(x: &Mat<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in 0..x.rows() {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let s = libm::sqrt(*v);
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn standardized(x: &Mat<f64>, mean: &[f64], scale: &[f64]) -> Mat<f64> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Largest eigenvalue of `XᵀX / n` by power iteration.
fn gram_spectral_norm(x: &Mat<f64>) -> f64 {
    let d = x.cols();
    let n = x.rows() as f64;
    let mut v = vec![1.0 / libm::sqrt(d as f64); d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut xv = vec![0.0; x.rows()];
        for (r, o) in xv.iter_mut().enumerate() {
            *o = x.row(r).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let mut next = vec![0.0; d];
        for (r, s) in xv.iter().enumerate() {
            for (o, a) in next.iter_mut().zip(x.row(r)) {
                *o += a * s / n;
            }
        }
        let norm = libm::sqrt(next.iter().map(|a| a * a).sum());
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|a| a / norm).collect();
    }
    lambda
}

fn check_labels(x: &Mat<f64>, labels: &[f64], kind: TaskKind) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(shape_err("probe labels", x.rows(), labels.len()));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("probe: no rows"));
    }
    if kind == TaskKind::Binary {
        if labels.iter().any(|l| *l != 0.0 && *l != 1.0) {
            return Err(Error::InvalidValue(
                "binary probe labels must be 0 or 1".into(),
            ));
        }
        let pos = labels.iter().filter(|l| **l == 1.0).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::SingleClass);
        }
    }
    Ok(())
}

/// Trains a probe on rows of `x` against `labels`.
///
/// The logistic kind runs full-batch gradient descent (step `1/L` from the
/// curvature bound) until the gradient norm drops below `tolerance` or
/// `max_steps`; for continuous targets it is ridge regression on the same
/// schedule. The MLP kind has one ReLU hidden layer trained with AdamW.
pub fn train_probe(x: &Mat<f64>, labels: &[f64], config: &ProbeConfig) -> Result<Probe> {
    check_labels(x, labels, config.target_kind)?;
    let (feature_mean, feature_scale) = standardize_params(x);
    let xs = standardized(x, &feature_mean, &feature_scale);
    let (target_mean, target_scale) = match config.target_kind {
        TaskKind::Binary => (0.0, 1.0),
        TaskKind::Continuous => {
            let n = labels.len() as f64;
            let m = labels.iter().sum::<f64>() / n;
            let s = libm::sqrt(labels.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n);
            (m, if s > 1e-12 { s } else { 1.0 })
        }
    };
    let y: Vec<f64> = labels
        .iter()
        .map(|v| (v - target_mean) / target_scale)
        .collect();
    let (weights, steps_taken) = match config.kind {
        ProbeKind::Logistic => fit_linear(&xs, &y, config),
        ProbeKind::Mlp => fit_mlp(&xs, &y, config)?,
    };
    Ok(Probe {
        kind: config.kind,
        target_kind: config.target_kind,
        input_dim: x.cols(),
        steps_taken,
        feature_mean,
        feature_scale,
        target_mean,
        target_scale,
        weights,
    })
}

fn fit_linear(x: &Mat<f64>, y: &[f64], config: &ProbeConfig) -> (ProbeWeights, usize) {
    let n = x.rows() as f64;
    let d = x.cols();
    let binary = config.target_kind == TaskKind::Binary;
    // Lipschitz bound of the mean loss gradient (features plus the bias column).
    let curvature = if binary { 0.25 } else { 1.0 };
    let lipschitz = curvature * (gram_spectral_norm(x) + 1.0) + config.l2;
    let step = 1.0 / lipschitz;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut steps = 0;
    while steps < config.max_steps {
        let mut gw: Vec<f64> = w.iter().map(|wi| config.l2 * wi).collect();
        let mut gb = 0.0;
        for (r, t) in y.iter().enumerate() {
            let row = x.row(r);
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let p = if binary { sigmoid(z) } else { z };
            let e = (p - t) / n;
            for (g, a) in gw.iter_mut().zip(row) {
                *g += e * a;
            }
            gb += e;
        }
        let norm = libm::sqrt(gw.iter().map(|g| g * g).sum::<f64>() + gb * gb);
        if norm < config.tolerance {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        b -= step * gb;
        steps += 1;
    }
    (ProbeWeights::Linear { w, b }, steps)
}

fn fit_mlp(x: &Mat<f64>, y: &[f64], config: &ProbeConfig) -> Result<(ProbeWeights, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "probe",
        &[x.cols(), config.mlp_hidden, 1],
        &mut rng,
    );
    let mut opt = AdamW::new(AdamWConfig {
        learning_rate: config.mlp_learning_rate,
        weight_decay: config.l2,
        ..AdamWConfig::default()
    })?;
    let mask = vec![true; y.len()];
    for _ in 0..config.mlp_steps {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let out = mlp.forward(&mut tape, &store, input)?;
        let loss = match config.target_kind {
            TaskKind::Binary => tape.bce_with_logits(out, y)?,
            TaskKind::Continuous => tape.masked_mse(out, y, &mask)?,
        };
        let grads = tape.backward(loss, store.len())?;
        opt.step(&mut store, &grads);
    }
    Ok((ProbeWeights::Mlp { store, mlp }, config.mlp_steps))
}

impl Probe {
    /// Probabilities for binary targets, original-unit values for
    /// continuous ones.
    pub fn predict(&self, x: &Mat<f64>) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim {
            return Err(shape_err("probe input", self.input_dim, x.cols()));
        }
        let xs = standardized(x, &self.feature_mean, &self.feature_scale);
        let raw: Vec<f64> = match &self.weights {
            ProbeWeights::Linear { w, b } => (0..xs.rows())
                .map(|r| b + xs.row(r).iter().zip(w).map(|(a, c)| a * c).sum::<f64>())
                .collect(),
            ProbeWeights::Mlp { store, mlp } => {
                let mut tape = Tape::new();
                let input = tape.constant(xs);
                let out = mlp.forward(&mut tape, store, input)?;
                tape.value(out).as_slice().to_vec()
            }
        };
        Ok(raw
            .into_iter()
            .map(|z| match self.target_kind {
                TaskKind::Binary => sigmoid(z),
                TaskKind::Continuous => z * self.target_scale + self.target_mean,
            })
            .collect())
    }

    /// Training-set style accuracy at threshold ½ (binary targets only).
    pub fn accuracy(&self, x: &Mat<f64>, labels: &[f64]) -> Result<f64> {
        let p = self.predict(x)?;
        if p.len() != labels.len() {
            return Err(shape_err("probe labels", p.len(), labels.len()));
        }
        let hits = p
            .iter()
            .zip(labels)
            .filter(|(p, l)| (**p >= 0.5) == (**l == 1.0))
            .count();
        Ok(hits as f64 / p.len() as f64)
    }
}

/// ROC-AUC for binary probes, MAPE for continuous ones.
pub fn eval_probe(probe: &Probe, x: &Mat<f64>, labels: &[f64]) -> Result<f64> {
    let p = probe.predict(x)?;
    if p.len() != labels.len() {
        return Err(shape_err("probe labels", p.len(), labels.len()));
    }
    match probe.target_kind {
        TaskKind::Binary => {
            let l: Vec<bool> = labels.iter().map(|v| *v >= 0.5).collect();
            roc_auc(&l, &p)
        }
        TaskKind::Continuous => {
            let include: Vec<bool> = labels.iter().map(|v| *v != 0.0).collect();
            mape(labels, &p, Some(&include))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_weighted_example() {
        let h = Mat::from_vec(2, 1, vec![1.0, 3.0]).unwrap();
        let s = AggregationStrategy::from_alpha(0.5).unwrap();
        let v = aggregate(&h, s, &[false, false]).unwrap();
        assert!((v[0] - 7.0 / 3.0).abs() < 1e-12);
        let mean = aggregate(
            &h,
            AggregationStrategy::exp_weighted(1e12).unwrap(),
            &[false, false],
        )
        .unwrap();
        assert!((mean[0] - 2.0).abs() < 1e-9);
        let last = aggregate(
            &h,
            AggregationStrategy::exp_weighted(1e-3).unwrap(),
            &[false, false],
        )
        .unwrap();
        assert_eq!(last[0], 3.0);
    }

    #[test]
    fn pads_are_excluded() {
        let h = Mat::from_vec(3, 1, vec![100.0, 1.0, 3.0]).unwrap();
        let pad = [true, false, false];
        assert_eq!(
            aggregate(&h, AggregationStrategy::MEAN, &pad).unwrap(),
            vec![2.0]
        );
        assert_eq!(
            aggregate(&h, AggregationStrategy::MAX, &pad).unwrap(),
            vec![3.0]
        );
        assert!(matches!(
            aggregate(&h, AggregationStrategy::LAST, &[true; 3]),
            Err(Error::AllPadded)
        ));
        assert!(AggregationStrategy::exp_weighted(0.0).is_err());
    }

    #[test]
    fn separable_logistic_probe() {
        let x = Mat::from_vec(4, 1, vec![-2.0, -1.0, 1.0, 2.0]).unwrap();
        let y = [0.0, 0.0, 1.0, 1.0];
        let p = train_probe(&x, &y, &ProbeConfig::default()).unwrap();
        assert_eq!(p.accuracy(&x, &y).unwrap(), 1.0);
        assert_eq!(eval_probe(&p, &x, &y).unwrap(), 1.0);
        assert!(matches!(
            train_probe(&x, &[1.0; 4], &ProbeConfig::default()),
            Err(Error::SingleClass)
        ));
    }
}
