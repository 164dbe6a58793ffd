//! Evaluation metrics.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Mann–Whitney ROC-AUC; tied scores count one half.
///
/// Labels are read as positive when `true`. Fails when either class is absent.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(shape_err("roc_auc", labels.len(), scores.len()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidValue("roc_auc score is NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // Average ranks (1-based) over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in &order[i..=j] {
            if labels[*k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// Mean absolute percentage error in percent over positions with `include`.
pub fn mape(actual: &[f64], predicted: &[f64], include: Option<&[bool]>) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(shape_err("mape", actual.len(), predicted.len()));
    }
    if let Some(m) = include {
        if m.len() != actual.len() {
            return Err(shape_err("mape mask", actual.len(), m.len()));
        }
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, (a, p)) in actual.iter().zip(predicted).enumerate() {
        if include.is_some_and(|m| !m[i]) {
            continue;
        }
        if *a == 0.0 {
            return Err(Error::InvalidValue("mape over a zero actual value".into()));
        }
        total += libm::fabs(a - p) / libm::fabs(*a);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("mape: all positions excluded"));
    }
    Ok(total / n as f64 * 100.0)
}
