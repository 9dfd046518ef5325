//! Quantile regression forest.
//!
//! Trees are grown on bootstrap samples with variance-reduction splits and a
//! random feature subset per split. Each leaf keeps the training rows that
//! fell into it. A prediction weights every training target by
//! `mean over trees of 1{row in leaf_t(x)} / |leaf_t(x)|` and reads each
//! level off the resulting weighted empirical distribution, so all levels
//! come from one fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::common::{derive_seed, FeatureMatrix};
use super::invalid;
use super::tree::{grow, GrowConfig, NodeStat, Tree};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `ceil(p / 3)` when unset.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, min_leaf: 5, mtry: None, max_depth: None, bootstrap: true }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(invalid("n_trees", "must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(invalid("min_leaf", "must be at least 1"));
        }
        if self.mtry == Some(0) {
            return Err(invalid("mtry", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTree {
    /// Leaf `value` holds the leaf ordinal into `leaf_offsets`.
    pub tree: Tree,
    pub leaf_offsets: Vec<u32>,
    /// Ranks into `ForestModel::sorted_targets`, grouped by leaf.
    pub members: Vec<u32>,
}

impl ForestTree {
    pub fn leaf_members(&self, row: &[f64]) -> &[u32] {
        let k = self.tree.predict_row(row) as usize;
        &self.members[self.leaf_offsets[k] as usize..self.leaf_offsets[k + 1] as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<ForestTree>,
    pub sorted_targets: Vec<f64>,
}

pub fn fit(params: &ForestParams, x: &FeatureMatrix, y: &[f64], seed: u64) -> Result<ForestModel> {
    let n = x.n;
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| y[a as usize].total_cmp(&y[b as usize]).then(a.cmp(&b)));
    let mut rank = vec![0u32; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i as usize] = r as u32;
    }
    let sorted_targets: Vec<f64> = order.iter().map(|&i| y[i as usize]).collect();
    let cfg = GrowConfig {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        mtry: params.mtry.unwrap_or_else(|| x.p.div_ceil(3)).clamp(1, x.p.max(1)),
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
            let rows: Vec<u32> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            let sse = |rows: &[u32]| {
                let m = rows.len().max(1) as f64;
                let mean = rows.iter().map(|&i| y[i as usize]).sum::<f64>() / m;
                NodeStat { value: mean, loss: rows.iter().map(|&i| (y[i as usize] - mean).powi(2)).sum() }
            };
            let (mut tree, leaves) = grow(x, y, rows, &cfg, &mut rng, sse);
            let mut leaf_offsets = Vec::with_capacity(leaves.len() + 1);
            let mut members = Vec::new();
            leaf_offsets.push(0);
            for (k, (node, rows)) in leaves.into_iter().enumerate() {
                tree.value[node] = k as f64;
                let mut ranks: Vec<u32> = rows.iter().map(|&i| rank[i as usize]).collect();
                ranks.sort_unstable();
                members.extend(ranks);
                leaf_offsets.push(members.len() as u32);
            }
            tree.loss.clear();
            tree.gain.clear();
            ForestTree { tree, leaf_offsets, members }
        })
        .collect();
    Ok(ForestModel { trees, sorted_targets })
}

impl ForestModel {
    /// Weighted empirical distribution at `row`: `(target, weight)` pairs in
    /// ascending target order, weights summing to one.
    pub fn distribution(&self, row: &[f64]) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(u32, f64)> = Vec::new();
        for t in &self.trees {
            let m = t.leaf_members(row);
            let w = 1.0 / m.len() as f64;
            pairs.extend(m.iter().map(|&r| (r, w)));
        }
        pairs.sort_unstable_by_key(|p| p.0);
        let trees = self.trees.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (r, w) in pairs {
            let y = self.sorted_targets[r as usize];
            match out.last_mut() {
                Some(last) if last.0 == y => last.1 += w / trees,
                _ => out.push((y, w / trees)),
            }
        }
        out
    }

    /// `inf { y : F(y | x) >= τ }` for each (ascending) level.
    pub fn quantiles_at(&self, row: &[f64], levels: &[f64]) -> Vec<f64> {
        let dist = self.distribution(row);
        let mut out = Vec::with_capacity(levels.len());
        let mut cum = 0.0;
        let mut k = 0;
        for &tau in levels {
            while k < dist.len() {
                if cum + dist[k].1 >= tau - 1e-12 || k + 1 == dist.len() {
                    break;
                }
                cum += dist[k].1;
                k += 1;
            }
            out.push(dist[k].0);
        }
        out
    }

    pub fn predict_quantiles(&self, x: &FeatureMatrix, levels: &[f64]) -> Vec<Vec<f64>> {
        (0..x.n).into_par_iter().map(|i| self.quantiles_at(x.row(i), levels)).collect()
    }
}
