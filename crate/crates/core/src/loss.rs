//! Per-task losses and their uncertainty-weighted combination.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datamodel::{TaskKind, TrainingSample};
use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::tape::{bce_mean, masked_mse_value, Tape, Var};
use crate::tensor::{Mat, Scalar};

/// Which form of the weighting to use.
///
/// `Halved`: `Σ exp(−s)/2 · L + s`. `Full`: `Σ exp(−s) · L + s`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    Halved,
    Full,
}

impl LossVariant {
    /// Multiplier on `exp(−s) · L`.
    pub fn precision_factor(self) -> f64 {
        match self {
            Self::Halved => 0.5,
            Self::Full => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Unweighted `L_i`.
    pub per_dim: Vec<f64>,
    pub total: f64,
    pub log_vars_snapshot: Vec<f64>,
}

/// Mean stable log-loss of `logits` against 0/1 `targets`.
pub fn bce(logits: &[f64], targets: &[f64]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(shape_err("bce", logits.len(), targets.len()));
    }
    if let Some(t) = targets.iter().find(|t| **t != 0.0 && **t != 1.0) {
        return Err(Error::InvalidValue(format!("bce target {t} is not 0 or 1")));
    }
    Ok(bce_mean(logits, targets))
}

/// Mean squared error over mask-true positions; 0 when nothing is selected.
pub fn masked_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(shape_err(
            "masked_mse",
            pred.len(),
            format!("target {} / mask {}", target.len(), mask.len()),
        ));
    }
    Ok(masked_mse_value(pred, target, mask))
}

/// `Σ_i c · exp(−s_i) · L_i + s_i` with `c` set by `variant`.
pub fn multitask_loss_with(per_dim: &[f64], log_vars: &[f64], variant: LossVariant) -> Result<f64> {
    if per_dim.len() != log_vars.len() {
        return Err(shape_err("multitask_loss", per_dim.len(), log_vars.len()));
    }
    let c = variant.precision_factor();
    Ok(per_dim
        .iter()
        .zip(log_vars)
        .map(|(l, s)| c * libm::exp(-s) * l + s)
        .sum())
}

/// The halved form `Σ_i exp(−s_i)/2 · L_i + s_i`.
pub fn multitask_loss(per_dim: &[f64], log_vars: &[f64]) -> Result<f64> {
    multitask_loss_with(per_dim, log_vars, LossVariant::Halved)
}

/// Records the weighted combination of `per_dim` scalars on the tape.
pub fn combine_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    per_dim: &[Var],
    log_vars: Var,
    variant: LossVariant,
) -> Result<Var> {
    let d = per_dim.len();
    if tape.value(log_vars).shape() != (1, d) {
        return Err(shape_err(
            "log_vars",
            format!("1x{d}"),
            tape.value(log_vars).shape_string(),
        ));
    }
    let losses = tape.concat_cols(per_dim)?;
    let neg = tape.scale(log_vars, -F::one());
    let precision = tape.exp(neg);
    let weighted = tape.mul(precision, losses)?;
    let weighted = tape.scale(weighted, F::from_f64_lossy(variant.precision_factor()));
    let a = tape.sum(weighted);
    let b = tape.sum(log_vars);
    tape.add(a, b)
}

/// Per-dimension losses for `predictions` (`T_fut × d_u` on the tape) against
/// the sample targets. Binary dims use BCE over every future day, continuous
/// dims use MSE over active days only.
pub fn per_dim_losses<F: Scalar>(
    tape: &mut Tape<F>,
    predictions: Var,
    sample: &TrainingSample,
    kinds: &[TaskKind],
) -> Result<Vec<Var>> {
    let (rows, cols) = tape.value(predictions).shape();
    if cols != kinds.len() || sample.targets.shape() != (rows, cols) {
        return Err(shape_err(
            "compute_loss predictions",
            format!("{}x{}", sample.targets.rows(), kinds.len()),
            format!("{rows}x{cols}"),
        ));
    }
    let mut out = Vec::with_capacity(cols);
    for (k, kind) in kinds.iter().enumerate() {
        let col = if cols == 1 {
            predictions
        } else {
            tape.slice_cols(predictions, k, 1)?
        };
        let target: Vec<F> = (0..rows)
            .map(|t| F::from_f64_lossy(*sample.targets.get(t, k)))
            .collect();
        out.push(match kind {
            TaskKind::Binary => tape.bce_with_logits(col, &target)?,
            TaskKind::Continuous => {
                let mask: Vec<bool> = (0..rows).map(|t| *sample.activity_mask.get(t, k)).collect();
                tape.masked_mse(col, &target, &mask)?
            }
        });
    }
    Ok(out)
}

/// Full training objective for one sample; returns the scalar on the tape and
/// its breakdown.
pub fn compute_loss<F: Scalar>(
    tape: &mut Tape<F>,
    model: &Model<F>,
    predictions: Var,
    sample: &TrainingSample,
    kinds: &[TaskKind],
) -> Result<(Var, LossBreakdown)> {
    let per_dim = per_dim_losses(tape, predictions, sample, kinds)?;
    let log_vars = tape.param(model.params(), model.log_vars_id());
    let total = combine_on_tape(tape, &per_dim, log_vars, model.config().loss_variant)?;
    let breakdown = LossBreakdown {
        per_dim: per_dim
            .iter()
            .map(|v| tape.scalar(*v).to_f64_lossy())
            .collect(),
        total: tape.scalar(total).to_f64_lossy(),
        log_vars_snapshot: model.log_vars(),
    };
    Ok((total, breakdown))
}

/// Evaluation-side helper: unweighted per-dim losses of plain predictions.
pub fn per_dim_losses_value(
    predictions: &Mat<f64>,
    sample: &TrainingSample,
    kinds: &[TaskKind],
) -> Result<Vec<f64>> {
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(predictions.clone());
    let vars = per_dim_losses(&mut tape, p, sample, kinds)?;
    Ok(vars.iter().map(|v| tape.scalar(*v)).collect())
}
