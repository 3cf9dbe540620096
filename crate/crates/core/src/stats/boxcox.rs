use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOXCOX_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxFit {
    pub lambda: f64,
    pub shift: f64,
    pub log_likelihood: f64,
}

pub fn boxcox_transform(x: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        x.ln()
    } else {
        (lambda * x.ln()).exp_m1() / lambda
    }
}

fn log_likelihood(shifted: &[f64], log_sum: f64, lambda: f64) -> f64 {
    let n = shifted.len() as f64;
    let ys: Vec<f64> = shifted.iter().map(|&x| boxcox_transform(x, lambda)).collect();
    let m = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * var.ln() + (lambda - 1.0) * log_sum
}

/// Maximum-likelihood λ on the grid −5, −4.99, …, 5.
pub fn boxcox_fit(xs: &[f64]) -> Result<BoxCoxFit> {
    if xs.len() < 3 {
        return Err(Error::Data("Box-Cox needs at least three values".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("Box-Cox inputs must be finite".into()));
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::Degenerate("constant input; λ is undefined".into()));
    }
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = (BOXCOX_EPS - min).max(0.0);
    let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
    let log_sum: f64 = shifted.iter().map(|x| x.ln()).sum();
    let mut best = BoxCoxFit {
        lambda: f64::NAN,
        shift,
        log_likelihood: f64::NEG_INFINITY,
    };
    for i in 0..=1000 {
        let lambda = (i as f64 - 500.0) / 100.0;
        let ll = log_likelihood(&shifted, log_sum, lambda);
        if ll > best.log_likelihood {
            best.lambda = lambda;
            best.log_likelihood = ll;
        }
    }
    if best.lambda.is_nan() {
        return Err(Error::Degenerate("Box-Cox likelihood is flat".into()));
    }
    Ok(best)
}

pub fn boxcox_apply(xs: &[f64], fit: &BoxCoxFit) -> Result<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            let s = x + fit.shift;
            if s > 0.0 {
                Ok(boxcox_transform(s, fit.lambda))
            } else {
                Err(Error::Data(format!("value {x} is not positive after shift {}", fit.shift)))
            }
        })
        .collect()
}
