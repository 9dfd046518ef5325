//! Binary regression trees with least-squares split search.
//!
//! Nodes are stored as parallel arrays; node 0 is the root at depth 1. Each
//! node carries the value and loss returned by a caller-supplied evaluator,
//! and every split records `gain = loss(node) - loss(left) - loss(right)`, so
//! gains over a tree always telescope to `loss(root) - sum(loss(leaves))`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::common::FeatureMatrix;

pub const LEAF: i32 = -1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Split feature, or [`LEAF`].
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub depth: Vec<u16>,
    pub value: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gain: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct NodeStat {
    pub value: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GrowConfig {
    /// Nodes at depth `<= max_depth` may split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per split.
    pub mtry: usize,
}

impl Tree {
    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] == LEAF
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.is_leaf(i))
    }

    pub fn splits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.is_leaf(i))
    }

    /// Leaf node reached by `row`.
    #[inline]
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut node = 0;
        while self.feature[node] != LEAF {
            let f = self.feature[node] as usize;
            node = if row[f] <= self.threshold[node] { self.left[node] } else { self.right[node] } as usize;
        }
        node
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.value[self.leaf_of(row)]
    }

    fn push(&mut self, depth: usize, stat: NodeStat) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.depth.push(depth as u16);
        self.value.push(stat.value);
        self.loss.push(stat.loss);
        self.gain.push(0.0);
        self.feature.len() - 1
    }

    /// Builds a tree by hand; used for tests and fixtures.
    pub fn from_nodes(nodes: &[(i32, f64, u32, u32, u16, f64)]) -> Tree {
        let mut t = Tree::default();
        for &(f, thr, l, r, d, v) in nodes {
            t.feature.push(f);
            t.threshold.push(thr);
            t.left.push(l);
            t.right.push(r);
            t.depth.push(d);
            t.value.push(v);
        }
        t
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    pos: usize,
    score: f64,
}

/// Grows a tree on the rows `indices` (duplicates allowed), choosing splits
/// that most reduce the squared error of `target`. `eval` is called on the
/// rows of every node. Returns the tree and the rows of each leaf, in node
/// order.
pub fn grow<R: Rng, E: FnMut(&[u32]) -> NodeStat>(
    x: &FeatureMatrix,
    target: &[f64],
    mut indices: Vec<u32>,
    cfg: &GrowConfig,
    rng: &mut R,
    mut eval: E,
) -> (Tree, Vec<(usize, Vec<u32>)>) {
    let mut tree = Tree::default();
    let mut leaves = Vec::new();
    let root_stat = eval(&indices);
    let root = tree.push(1, root_stat);
    let mut scratch: Vec<(f64, f64, u32)> = Vec::with_capacity(indices.len());
    // (node, depth, rows)
    let mut stack = vec![(root, 1usize, std::mem::take(&mut indices))];
    while let Some((node, depth, rows)) = stack.pop() {
        let can_split = rows.len() >= 2 * cfg.min_leaf.max(1) && cfg.max_depth.is_none_or(|m| depth <= m);
        let best = if can_split { find_split(x, target, &rows, cfg, rng, &mut scratch) } else { None };
        let Some(best) = best else {
            leaves.push((node, rows));
            continue;
        };
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&i| x.get(i as usize, best.feature) <= best.threshold);
        debug_assert_eq!(left_rows.len(), best.pos);
        let ls = eval(&left_rows);
        let rs = eval(&right_rows);
        let l = tree.push(depth + 1, ls);
        let r = tree.push(depth + 1, rs);
        tree.feature[node] = best.feature as i32;
        tree.threshold[node] = best.threshold;
        tree.left[node] = l as u32;
        tree.right[node] = r as u32;
        tree.gain[node] = tree.loss[node] - ls.loss - rs.loss;
        stack.push((r, depth + 1, right_rows));
        stack.push((l, depth + 1, left_rows));
    }
    leaves.sort_by_key(|(n, _)| *n);
    (tree, leaves)
}

fn find_split<R: Rng>(
    x: &FeatureMatrix,
    target: &[f64],
    rows: &[u32],
    cfg: &GrowConfig,
    rng: &mut R,
    scratch: &mut Vec<(f64, f64, u32)>,
) -> Option<Best> {
    let n = rows.len();
    let min_leaf = cfg.min_leaf.max(1);
    let total: f64 = rows.iter().map(|&i| target[i as usize]).sum();
    let base = total * total / n as f64;
    let features: Vec<usize> = if cfg.mtry >= x.p {
        (0..x.p).collect()
    } else {
        let mut f = sample(rng, x.p, cfg.mtry.max(1)).into_vec();
        f.sort_unstable();
        f
    };
    let mut best: Option<Best> = None;
    for f in features {
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (x.get(i as usize, f), target[i as usize], i)));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        if scratch[0].0 == scratch[n - 1].0 {
            continue;
        }
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += scratch[k].1;
            let nl = k + 1;
            if nl < min_leaf || n - nl < min_leaf || scratch[k].0 == scratch[k + 1].0 {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - base;
            if best.as_ref().is_none_or(|b| score > b.score) {
                let (a, b) = (scratch[k].0, scratch[k + 1].0);
                let mut threshold = 0.5 * (a + b);
                if threshold >= b || !threshold.is_finite() {
                    threshold = a;
                }
                best = Some(Best { feature: f, threshold, pos: nl, score });
            }
        }
    }
    let scale = rows.iter().map(|&i| target[i as usize].powi(2)).sum::<f64>();
    best.filter(|b| b.score > 1e-12 * (1.0 + scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sse(target: &[f64]) -> impl FnMut(&[u32]) -> NodeStat + '_ {
        move |rows| {
            let n = rows.len().max(1) as f64;
            let mean = rows.iter().map(|&i| target[i as usize]).sum::<f64>() / n;
            let loss = rows.iter().map(|&i| (target[i as usize] - mean).powi(2)).sum();
            NodeStat { value: mean, loss }
        }
    }

    #[test]
    fn stump_finds_step() {
        let x = FeatureMatrix { n: 8, p: 2, data: (0..8).flat_map(|i| [i as f64, (i % 2) as f64]).collect() };
        let y = [0.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0];
        let cfg = GrowConfig { max_depth: Some(1), min_leaf: 1, mtry: 2 };
        let (t, leaves) = grow(&x, &y, (0..8).collect(), &cfg, &mut ChaCha8Rng::seed_from_u64(0), sse(&y));
        assert_eq!(t.len(), 3);
        assert_eq!(t.feature[0], 0);
        assert_eq!(t.threshold[0], 3.5);
        assert_eq!(leaves.len(), 2);
        assert_eq!(t.predict_row(&[1.0, 0.0]), 0.0);
        assert_eq!(t.predict_row(&[6.0, 0.0]), 5.0);
        assert!((t.gain[0] - 50.0).abs() < 1e-12);
    }

    #[test]
    fn gains_telescope() {
        let n = 200;
        let x = FeatureMatrix { n, p: 3, data: (0..n * 3).map(|i| ((i * 7919) % 101) as f64).collect() };
        let y: Vec<f64> = (0..n).map(|i| ((i * 31) % 17) as f64).collect();
        let cfg = GrowConfig { max_depth: None, min_leaf: 3, mtry: 3 };
        let (t, _) = grow(&x, &y, (0..n as u32).collect(), &cfg, &mut ChaCha8Rng::seed_from_u64(1), sse(&y));
        let gains: f64 = t.splits().map(|i| t.gain[i]).sum();
        let leaf_loss: f64 = t.leaves().map(|i| t.loss[i]).sum();
        assert!((gains - (t.loss[0] - leaf_loss)).abs() < 1e-9);
        assert!(t.splits().all(|i| t.gain[i] >= -1e-9));
    }

    #[test]
    fn respects_min_leaf_and_constant_target() {
        let x = FeatureMatrix { n: 10, p: 1, data: (0..10).map(f64::from).collect() };
        let y = [1.0; 10];
        let cfg = GrowConfig { max_depth: None, min_leaf: 1, mtry: 1 };
        let (t, leaves) = grow(&x, &y, (0..10).collect(), &cfg, &mut ChaCha8Rng::seed_from_u64(0), sse(&y));
        assert_eq!(t.len(), 1);
        assert_eq!(leaves[0].1.len(), 10);
    }
}
