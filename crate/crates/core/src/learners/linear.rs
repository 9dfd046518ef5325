//! Linear quantile regression fitted by iteratively reweighted least squares
//! on the perturbed pinball loss
//! `rho(r) - (eps / 2) ln(eps + |r|)` (Hunter & Lange majorise-minimise).
//! Each iteration solves
//!
//! ```text
//! (X' A X) beta = X' A y + (2τ - 1) X' 1,    a_i = 1 / (eps + |r_i|)
//! ```
//!
//! which never increases the perturbed objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::common::{empirical_quantile, sorted_copy, FeatureMatrix, Standardizer};
use super::invalid;
use crate::error::Result;
use crate::scoring::pinball;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    pub smoothing: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams { smoothing: 1e-6, max_iter: 200, tolerance: 1e-12 }
    }
}

impl LinearParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0) {
            return Err(invalid("smoothing", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub tau: f64,
    pub standardizer: Standardizer,
    pub intercept: f64,
    /// Coefficients on standardised features.
    pub coefficients: Vec<f64>,
    pub history: Vec<f64>,
}

impl LinearModel {
    fn eval(&self, z: &[f64]) -> f64 {
        self.intercept + z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let mut z = vec![0.0; x.p];
        (0..x.n)
            .map(|i| {
                self.standardizer.apply(x.row(i), &mut z);
                self.eval(&z)
            })
            .collect()
    }
}

pub fn fit(params: &LinearParams, x: &FeatureMatrix, y: &[f64], tau: f64) -> Result<LinearModel> {
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let (n, p) = (z.n, z.p);
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { z.get(i, j - 1) });
    let yv = DVector::from_column_slice(y);

    let exact = |beta: &DVector<f64>| -> f64 {
        let fitted = &design * beta;
        fitted.iter().zip(y).map(|(&f, &t)| pinball(f, t, tau)).sum::<f64>() / n as f64
    };
    let eps = params.smoothing;
    let perturbed = |beta: &DVector<f64>| -> f64 {
        let fitted = &design * beta;
        fitted
            .iter()
            .zip(y)
            .map(|(&f, &t)| {
                let r = t - f;
                pinball(f, t, tau) - 0.5 * eps * (eps + r.abs()).ln()
            })
            .sum::<f64>()
    };

    // start from the best constant
    let mut beta = DVector::zeros(p + 1);
    beta[0] = empirical_quantile(&sorted_copy(y), tau);
    let mut best = (exact(&beta), beta.clone());
    let mut history = vec![best.0];
    let mut objective = perturbed(&beta);
    let ones_term = design.row_sum().transpose() * (2.0 * tau - 1.0);

    for _ in 0..params.max_iter {
        let resid = &yv - &design * &beta;
        let a: Vec<f64> = resid.iter().map(|r| 1.0 / (eps + r.abs())).collect();
        // normalise weights so the system stays well scaled as residuals vanish
        let scale = a.iter().cloned().fold(0.0, f64::max);
        let mut weighted = design.clone();
        for (i, w) in a.iter().enumerate() {
            weighted.row_mut(i).scale_mut(w / scale);
        }
        let lhs = design.transpose() * &weighted;
        let rhs = weighted.transpose() * &yv + &ones_term / scale;
        let svd = lhs.svd(true, true);
        let Ok(next) = svd.solve(&rhs, 1e-12 * svd.singular_values.max()) else {
            break;
        };
        let next_objective = perturbed(&next);
        let score = exact(&next);
        history.push(score);
        if score < best.0 {
            best = (score, next.clone());
        }
        let improvement = objective - next_objective;
        beta = next;
        objective = next_objective;
        if improvement <= params.tolerance * (1.0 + objective.abs()) {
            break;
        }
    }
    let beta = best.1;
    Ok(LinearModel {
        tau,
        standardizer,
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        history,
    })
}
