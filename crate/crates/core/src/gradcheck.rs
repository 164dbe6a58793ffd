//! Central finite-difference verification of the analytic gradients.
//!
//! The analytic side runs in `f64`. The finite-difference side evaluates the
//! same function in double-double arithmetic: with `ε = 1e-5` an `f64` loss of
//! order 1 carries roughly `1e-11` of rounding noise in each difference
//! quotient, which swamps gradients near `1e-8`.

use alloc::string::String;

use crate::datamodel::{TaskKind, TrainingSample};
use crate::ddouble::DoubleDouble;
use crate::error::Result;
use crate::loss::compute_loss;
use crate::model::Model;
use crate::params::Grads;
use crate::tape::Tape;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_offset: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub n_checked: usize,
}

/// Evaluation-mode objective of one sample.
pub fn loss_value<F: Scalar>(
    model: &Model<F>,
    sample: &TrainingSample,
    kinds: &[TaskKind],
) -> Result<F> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, sample, None)?;
    let (total, _) = compute_loss(&mut tape, model, out.predictions, sample, kinds)?;
    Ok(tape.scalar(total))
}

/// Evaluation-mode analytic gradients of one sample's objective.
pub fn analytic_gradients(
    model: &Model<f64>,
    sample: &TrainingSample,
    kinds: &[TaskKind],
) -> Result<Grads<f64>> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, sample, None)?;
    let (total, _) = compute_loss(&mut tape, model, out.predictions, sample, kinds)?;
    tape.backward(total, model.params().len())
}

/// Compares `grads` with central differences on every scalar parameter.
/// Relative error is `|g − g_fd| / max(|g_fd|, 1e-8)`.
pub fn compare_with_finite_differences(
    model: &Model<f64>,
    sample: &TrainingSample,
    kinds: &[TaskKind],
    grads: &Grads<f64>,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let mut probe = model.cast::<DoubleDouble>();
    let eps = DoubleDouble::from_f64(epsilon);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_offset: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        n_checked: 0,
    };
    let ids: alloc::vec::Vec<_> = model.params().ids().collect();
    for id in ids {
        let n = model.params().get(id).as_slice().len();
        for offset in 0..n {
            let original = probe.params().get(id).as_slice()[offset];
            probe.params_mut().get_mut(id).as_mut_slice()[offset] = original + eps;
            let plus = loss_value(&probe, sample, kinds)?;
            probe.params_mut().get_mut(id).as_mut_slice()[offset] = original - eps;
            let minus = loss_value(&probe, sample, kinds)?;
            probe.params_mut().get_mut(id).as_mut_slice()[offset] = original;
            let fd = ((plus - minus) / (eps + eps)).to_f64_lossy();
            let g = grads.value(id, offset);
            let rel = (g - fd).abs() / fd.abs().max(1e-8);
            report.n_checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst_param = model.params().name(id).into();
                report.worst_offset = offset;
                report.worst_analytic = g;
                report.worst_numeric = fd;
            }
        }
    }
    Ok(report)
}

/// Full gradient check of `model` on `sample`.
pub fn grad_check(
    model: &Model<f64>,
    sample: &TrainingSample,
    kinds: &[TaskKind],
    epsilon: f64,
) -> Result<GradCheckReport> {
    let grads = analytic_gradients(model, sample, kinds)?;
    compare_with_finite_differences(model, sample, kinds, &grads, epsilon)
}
