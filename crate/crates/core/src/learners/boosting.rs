//! Gradient boosting for a single quantile level.
//!
//! Starting from the empirical τ-quantile, each round fits a depth-limited
//! regression tree to the negative gradient of the smoothed pinball loss and
//! sets every node's value to the constant minimising that loss over its
//! rows. Node losses and split gains are recorded in smoothed-pinball units.
//! The smoothing half-width shrinks geometrically over the first half of
//! training, from `100 * smoothing * scale` to `smoothing * scale`, where
//! `scale` is the interquartile range of the targets.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{empirical_quantile, smooth_pinball_argmin, smooth_pinball_grad, sorted_copy, FeatureMatrix};
use super::invalid;
use super::tree::{grow, GrowConfig, NodeStat, Tree};
use crate::error::Result;
use crate::scoring::pinball;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Final smoothing half-width relative to the target scale.
    pub smoothing: f64,
    /// Row fraction drawn (without replacement) per round.
    pub subsample: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams {
            n_rounds: 500,
            max_depth: 3,
            learning_rate: 0.05,
            min_leaf: 10,
            smoothing: 1e-3,
            subsample: 1.0,
        }
    }
}

impl BoostingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(invalid("n_rounds", "must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(invalid("max_depth", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning_rate", "must lie in (0, 1]"));
        }
        if self.min_leaf == 0 {
            return Err(invalid("min_leaf", "must be at least 1"));
        }
        if !(self.smoothing > 0.0) {
            return Err(invalid("smoothing", "must be positive"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(invalid("subsample", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub tau: f64,
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Exact training mean pinball loss after 0, 1, 2, ... rounds.
    pub history: Vec<f64>,
}

impl BoostedModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n).map(|i| self.predict_row(x.row(i))).collect()
    }
}

fn target_scale(sorted: &[f64]) -> f64 {
    let iqr = empirical_quantile(sorted, 0.75) - empirical_quantile(sorted, 0.25);
    if iqr > 0.0 {
        return iqr;
    }
    let range = sorted[sorted.len() - 1] - sorted[0];
    if range > 0.0 {
        range
    } else {
        1.0
    }
}

pub fn fit(params: &BoostingParams, x: &FeatureMatrix, y: &[f64], tau: f64, seed: u64) -> Result<BoostedModel> {
    let n = x.n;
    let sorted = sorted_copy(y);
    let init = empirical_quantile(&sorted, tau);
    let delta_final = params.smoothing * target_scale(&sorted);
    let anneal_rounds = (params.n_rounds / 2).max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GrowConfig { max_depth: Some(params.max_depth), min_leaf: params.min_leaf, mtry: x.p };

    let exact = |f: &[f64]| f.iter().zip(y).map(|(&z, &t)| pinball(z, t, tau)).sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut history = vec![exact(&fitted)];
    let mut best_round = 0;
    let mut resid = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for m in 0..params.n_rounds {
        let progress = (m as f64 / anneal_rounds).min(1.0);
        let delta = delta_final * 100f64.powf(1.0 - progress);
        for i in 0..n {
            resid[i] = y[i] - fitted[i];
            grad[i] = smooth_pinball_grad(resid[i], tau, delta);
        }
        let rows: Vec<u32> = if params.subsample < 1.0 {
            let k = ((n as f64 * params.subsample).round() as usize).max(1);
            let mut r: Vec<u32> = sample(&mut rng, n, k).into_iter().map(|i| i as u32).collect();
            r.sort_unstable();
            r
        } else {
            (0..n as u32).collect()
        };
        let mut buf = Vec::new();
        let eval = |rows: &[u32]| {
            buf.clear();
            buf.extend(rows.iter().map(|&i| resid[i as usize]));
            let (value, loss) = smooth_pinball_argmin(&buf, tau, delta);
            NodeStat { value, loss }
        };
        let (tree, _) = grow(x, &grad, rows, &cfg, &mut rng, eval);
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict_row(x.row(i));
        }
        trees.push(tree);
        let score = exact(&fitted);
        if score < history[best_round] {
            best_round = m + 1;
        }
        history.push(score);
    }
    trees.truncate(best_round);
    Ok(BoostedModel { tau, init, learning_rate: params.learning_rate, trees, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix { n: xs.len(), p: 1, data: xs.to_vec() }
    }

    #[test]
    fn constant_target_predicts_constant() {
        let xs: Vec<f64> = (0..30).map(f64::from).collect();
        let params = BoostingParams { n_rounds: 20, ..Default::default() };
        let m = fit(&params, &column(&xs), &[2.5; 30], 0.8, 0).unwrap();
        assert!(m.predict(&column(&xs)).iter().all(|p| (p - 2.5).abs() < 1e-6));
    }

    #[test]
    fn learns_step_function() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x < 0.5 { 1.0 } else { 4.0 }).collect();
        let params = BoostingParams { n_rounds: 200, learning_rate: 0.1, ..Default::default() };
        let m = fit(&params, &column(&xs), &ys, 0.5, 0).unwrap();
        assert!((m.predict_row(&[0.2]) - 1.0).abs() < 0.05);
        assert!((m.predict_row(&[0.8]) - 4.0).abs() < 0.05);
        assert!(m.history.last().unwrap() < &m.history[0]);
    }

    #[test]
    fn node_gains_telescope() {
        let xs: Vec<f64> = (0..300).map(|i| ((i * 7) % 300) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (x / 30.0).sin() * 3.0 + x / 100.0).collect();
        let params = BoostingParams { n_rounds: 30, ..Default::default() };
        let m = fit(&params, &column(&xs), &ys, 0.3, 0).unwrap();
        assert!(!m.trees.is_empty());
        for t in &m.trees {
            let gains: f64 = t.splits().map(|i| t.gain[i]).sum();
            let leaves: f64 = t.leaves().map(|i| t.loss[i]).sum();
            assert!((gains - (t.loss[0] - leaves)).abs() < 1e-9);
            assert!(t.splits().all(|i| t.gain[i] >= -1e-9));
        }
    }
}
