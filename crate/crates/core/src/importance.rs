//! Predictor importance for the tree-based learners.
//!
//! Two statistics are provided. Split frequency counts forest splits per
//! feature, weighting a split at depth `d` by `d^-2` for `d <= 4` and
//! ignoring deeper splits, then normalises to sum to one. Total gain sums the
//! recorded loss reduction of every boosting split per feature.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::FittedCombiner;
use crate::error::{Error, Result};
use crate::learners::boosting::BoostedModel;
use crate::learners::forest::ForestModel;
use crate::learners::tree::Tree;
use crate::learners::{FittedParams, TrainedModel};

pub const MAX_WEIGHTED_DEPTH: u16 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    SplitFrequency,
    TotalGain,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::SplitFrequency => "split_frequency",
            Statistic::TotalGain => "total_gain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    RawFeatures,
    StackedPredictions,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::RawFeatures => "raw_features",
            Setting::StackedPredictions => "stacked_predictions",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub level: f64,
    pub predictor: String,
    pub value: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// The model whose splits were counted.
    pub model: String,
    pub setting: Setting,
    pub statistic: Statistic,
    /// Grouped by level, predictors in input order.
    pub rows: Vec<ImportanceRow>,
}

pub fn depth_weight(depth: u16) -> f64 {
    if depth == 0 || depth > MAX_WEIGHTED_DEPTH {
        0.0
    } else {
        1.0 / f64::from(depth).powi(2)
    }
}

fn tree_split_weights(tree: &Tree, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p];
    for i in tree.splits() {
        out[tree.feature[i] as usize] += depth_weight(tree.depth[i]);
    }
    out
}

/// Unnormalised weighted split counts for a set of trees, reduced in tree order.
pub fn weighted_split_counts<'a>(trees: impl IntoParallelIterator<Item = &'a Tree>, p: usize) -> Vec<f64> {
    let per_tree: Vec<Vec<f64>> = trees.into_par_iter().map(|t| tree_split_weights(t, p)).collect();
    let mut total = vec![0.0; p];
    for t in per_tree {
        for (a, b) in total.iter_mut().zip(t) {
            *a += b;
        }
    }
    total
}

fn normalise(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

pub fn forest_split_frequency(forest: &ForestModel, p: usize) -> Vec<f64> {
    let trees: Vec<&Tree> = forest.trees.iter().map(|t| &t.tree).collect();
    normalise(weighted_split_counts(trees, p))
}

pub fn boosted_total_gain(model: &BoostedModel, p: usize) -> Vec<f64> {
    let per_tree: Vec<Vec<f64>> = model
        .trees
        .par_iter()
        .map(|t| {
            let mut g = vec![0.0; p];
            for i in t.splits() {
                g[t.feature[i] as usize] += t.gain[i];
            }
            g
        })
        .collect();
    let mut total = vec![0.0; p];
    for t in per_tree {
        for (a, b) in total.iter_mut().zip(t) {
            *a += b;
        }
    }
    total.iter_mut().for_each(|g| *g = g.max(0.0));
    total
}

/// Split frequency of a forest-kind model; one vector shared by all levels.
pub fn split_frequency_importance(model: &TrainedModel) -> Result<Vec<f64>> {
    match &model.fitted {
        FittedParams::QuantileForest { forest } => Ok(forest_split_frequency(forest, model.feature_count)),
        _ => Err(Error::WrongModelKind(format!(
            "split frequency needs a quantile forest, `{}` is {}",
            model.name(),
            model.kind()
        ))),
    }
}

/// Total gain of a boosting-kind model, one vector per level.
pub fn total_gain_importance(model: &TrainedModel) -> Result<Vec<Vec<f64>>> {
    match &model.fitted {
        FittedParams::GradientBoostPinball { per_level } => {
            Ok(per_level.iter().map(|m| boosted_total_gain(m, model.feature_count)).collect())
        }
        _ => Err(Error::WrongModelKind(format!(
            "total gain needs a boosting model, `{}` is {}",
            model.name(),
            model.kind()
        ))),
    }
}

/// Rank 1 is the largest statistic; equal statistics share the smaller rank.
pub fn rank_predictors(stats: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| stats[b].total_cmp(&stats[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; stats.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && stats[order[pos - 1]] == stats[i] { ranks[order[pos - 1]] } else { pos + 1 };
    }
    ranks
}

impl ImportanceReport {
    /// `stats[j]` holds the statistic of every predictor at `levels[j]`.
    pub fn from_stats(
        model: &str,
        setting: Setting,
        statistic: Statistic,
        predictors: &[String],
        levels: &[f64],
        stats: &[Vec<f64>],
    ) -> Result<Self> {
        if stats.len() != levels.len() {
            return Err(Error::DimensionMismatch { expected: levels.len(), got: stats.len() });
        }
        let mut rows = Vec::with_capacity(levels.len() * predictors.len());
        for (&level, s) in levels.iter().zip(stats) {
            if s.len() != predictors.len() {
                return Err(Error::DimensionMismatch { expected: predictors.len(), got: s.len() });
            }
            if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Invalid("importance statistics must be finite and non-negative".into()));
            }
            for ((name, &value), rank) in predictors.iter().zip(s).zip(rank_predictors(s)) {
                rows.push(ImportanceRow { level, predictor: name.clone(), value, rank });
            }
        }
        Ok(ImportanceReport { model: model.to_string(), setting, statistic, rows })
    }

    pub fn at_level(&self, level: f64) -> impl Iterator<Item = &ImportanceRow> {
        self.rows.iter().filter(move |r| r.level == level)
    }
}

/// Importance of a base learner on its own predictors, if it is tree based.
pub fn raw_feature_importance(model: &TrainedModel, predictors: &[String]) -> Result<Option<ImportanceReport>> {
    let levels = model.levels.levels();
    let (statistic, stats) = match &model.fitted {
        FittedParams::QuantileForest { .. } => {
            let s = split_frequency_importance(model)?;
            (Statistic::SplitFrequency, vec![s; levels.len()])
        }
        FittedParams::GradientBoostPinball { .. } => (Statistic::TotalGain, total_gain_importance(model)?),
        _ => return Ok(None),
    };
    ImportanceReport::from_stats(model.name(), Setting::RawFeatures, statistic, predictors, levels, &stats).map(Some)
}

/// Importance of the base predictions inside a tree-based learner combiner.
pub fn stacked_importance(
    name: &str,
    combiner: &FittedCombiner,
    base_names: &[String],
    levels: &[f64],
) -> Result<Option<ImportanceReport>> {
    let FittedCombiner::Learner { per_level } = combiner else {
        return Ok(None);
    };
    let (statistic, stats) = match per_level.first().map(|m| &m.fitted) {
        Some(FittedParams::QuantileForest { .. }) => (
            Statistic::SplitFrequency,
            per_level.iter().map(split_frequency_importance).collect::<Result<Vec<_>>>()?,
        ),
        Some(FittedParams::GradientBoostPinball { .. }) => (
            Statistic::TotalGain,
            per_level
                .iter()
                .map(|m| total_gain_importance(m).map(|mut v| v.swap_remove(0)))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => return Ok(None),
    };
    ImportanceReport::from_stats(name, Setting::StackedPredictions, statistic, base_names, levels, &stats).map(Some)
}

pub const CSV_HEADER: [&str; 7] = ["setting", "statistic", "level", "predictor", "value", "rank", "model"];

pub fn write_csv<W: Write>(out: W, reports: &[ImportanceReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        for row in &r.rows {
            w.write_record([
                r.setting.to_string(),
                r.statistic.to_string(),
                row.level.to_string(),
                row.predictor.clone(),
                row.value.to_string(),
                row.rank.to_string(),
                r.model.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<importance csv>", e))?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, reports: &[ImportanceReport]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(f), reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::forest::ForestTree;
    use crate::learners::tree::LEAF;

    fn forest(trees: Vec<Tree>) -> ForestModel {
        let trees = trees
            .into_iter()
            .map(|tree| ForestTree { leaf_offsets: vec![0; tree.len() + 1], members: Vec::new(), tree })
            .collect();
        ForestModel { trees, sorted_targets: Vec::new() }
    }

    #[test]
    fn hand_built_two_tree_forest() {
        // tree A: root on x0, left child on x2, right child on x0 again at depth 2,
        // then a depth-5 split on x1 that carries no weight
        let a = Tree::from_nodes(&[
            (0, 0.5, 1, 2, 1, 0.0),
            (2, 0.1, 3, 4, 2, 0.0),
            (0, 0.9, 5, 6, 2, 0.0),
            (LEAF, 0.0, 0, 0, 3, 0.0),
            (LEAF, 0.0, 0, 0, 3, 0.0),
            (LEAF, 0.0, 0, 0, 3, 0.0),
            (1, 0.2, 7, 8, 5, 0.0),
            (LEAF, 0.0, 0, 0, 6, 0.0),
            (LEAF, 0.0, 0, 0, 6, 0.0),
        ]);
        // tree B: root on x1, right child on x2 at depth 2, its left child on x2 at depth 3
        let b = Tree::from_nodes(&[
            (1, 0.5, 1, 2, 1, 0.0),
            (LEAF, 0.0, 0, 0, 2, 0.0),
            (2, 0.3, 3, 4, 2, 0.0),
            (2, 0.2, 5, 6, 3, 0.0),
            (LEAF, 0.0, 0, 0, 3, 0.0),
            (LEAF, 0.0, 0, 0, 4, 0.0),
            (LEAF, 0.0, 0, 0, 4, 0.0),
        ]);
        let raw = [1.0 + 0.25, 1.0, 0.25 + 0.25 + 1.0 / 9.0, 0.0];
        let total: f64 = raw.iter().sum();
        let got = forest_split_frequency(&forest(vec![a.clone(), b.clone()]), 4);
        for (g, r) in got.iter().zip(raw) {
            assert!((g - r / total).abs() < 1e-15);
        }
        assert_eq!(forest_split_frequency(&forest(vec![b, a]), 4), got);
        assert_eq!(rank_predictors(&got), vec![1, 2, 3, 4]);
    }

    #[test]
    fn stumps_on_one_feature() {
        let stump = Tree::from_nodes(&[(2, 0.0, 1, 2, 1, 0.0), (LEAF, 0.0, 0, 0, 2, 0.0), (LEAF, 0.0, 0, 0, 2, 0.0)]);
        assert_eq!(forest_split_frequency(&forest(vec![stump; 7]), 3), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn no_splits_gives_zeros_and_rank_one() {
        let leaf = Tree::from_nodes(&[(LEAF, 0.0, 0, 0, 1, 3.0)]);
        let s = forest_split_frequency(&forest(vec![leaf; 3]), 4);
        assert_eq!(s, vec![0.0; 4]);
        assert_eq!(rank_predictors(&s), vec![1; 4]);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_predictors(&[0.7, 0.3]), vec![1, 2]);
        let stats = [0.05, 0.4, 0.1, 0.4, 0.05];
        assert_eq!(rank_predictors(&stats), vec![4, 1, 3, 1, 4]);
        let distinct = [0.12, 0.5, 0.03, 0.2, 0.15];
        let mut sorted: Vec<usize> = (0..5).collect();
        sorted.sort_by(|&a, &b| distinct[b].partial_cmp(&distinct[a]).unwrap());
        let ranks = rank_predictors(&distinct);
        for (pos, &i) in sorted.iter().enumerate() {
            assert_eq!(ranks[i], pos + 1);
        }
    }

    #[test]
    fn total_gain_two_split_hand_model() {
        let mut t = Tree::from_nodes(&[
            (1, 0.0, 1, 2, 1, 0.0),
            (0, 0.0, 3, 4, 2, 0.0),
            (LEAF, 0.0, 0, 0, 2, 0.0),
            (LEAF, 0.0, 0, 0, 3, 0.0),
            (LEAF, 0.0, 0, 0, 3, 0.0),
        ]);
        t.loss = vec![10.0, 6.0, 1.5, 2.0, 2.5];
        t.gain = vec![10.0 - 6.0 - 1.5, 6.0 - 2.0 - 2.5, 0.0, 0.0, 0.0];
        let m = BoostedModel { tau: 0.5, init: 0.0, learning_rate: 0.1, trees: vec![t.clone(), t], history: vec![] };
        assert_eq!(boosted_total_gain(&m, 3), vec![3.0, 5.0, 0.0]);
    }

    #[test]
    fn csv_layout() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r = ImportanceReport::from_stats(
            "gbm",
            Setting::RawFeatures,
            Statistic::TotalGain,
            &names,
            &[0.5],
            &[vec![1.0, 2.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "setting,statistic,level,predictor,value,rank,model\nraw_features,total_gain,0.5,a,1,2,gbm\nraw_features,total_gain,0.5,b,2,1,gbm\n"
        );
    }
}
