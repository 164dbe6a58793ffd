//! Power-law fits `L = a · x^α` by least squares in log-log space.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub coefficient_a: f64,
    pub exponent_alpha: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// OLS on `(ln x, ln L)`. `R²` is computed in log space and is 1 whenever
/// the residuals vanish, including constant `L`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::InvalidValue(format!(
            "power-law fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some((x, l)) = points
        .iter()
        .find(|(x, l)| !(*x > 0.0 && *l > 0.0) || !x.is_finite() || !l.is_finite())
    {
        return Err(Error::InvalidValue(format!(
            "power-law fit needs positive finite values, got ({x}, {l})"
        )));
    }
    let n = points.len() as f64;
    let lx: alloc::vec::Vec<f64> = points.iter().map(|(x, _)| libm::log(*x)).collect();
    let ly: alloc::vec::Vec<f64> = points.iter().map(|(_, l)| libm::log(*l)).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidValue(
            "power-law fit needs at least 2 distinct x".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let ss_tot: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_res == 0.0 || ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        coefficient_a: libm::exp(intercept),
        exponent_alpha: slope,
        r_squared,
        n_points: points.len(),
    })
}

pub fn predict_loss(fit: &PowerLawFit, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidValue(format!(
            "predict_loss needs x > 0, got {x}"
        )));
    }
    Ok(fit.coefficient_a * libm::pow(x, fit.exponent_alpha))
}

/// Token budget `n_params × tokens_per_param`.
pub fn compute_optimal_data(n_params: f64, tokens_per_param: f64) -> f64 {
    n_params * tokens_per_param
}
