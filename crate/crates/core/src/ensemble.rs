//! Quantile stacking and simple combiners.
//!
//! Stacking runs in five steps:
//!
//! 1. split the training set at random into halves (set 1, set 2);
//! 2. fit every base learner on set 1 and predict set 2;
//! 3. per level, fit the combiner on set 2 with the k base predictions at
//!    that level as its only predictors, minimising that level's pinball loss;
//! 4. refit every base learner on set 1 ∪ set 2;
//! 5. at prediction time, feed the refitted bases' predictions to the
//!    combiner.
//!
//! The mean and median combiners need no fitting. The best combiner keeps,
//! per level, the base learner with the lowest set-2 mean pinball loss.
//! Combiner inputs are the raw base predictions; clamping and rearrangement
//! belong to the final output only.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_two_way, Dataset};
use crate::error::{Error, Result};
use crate::learners::common::{derive_seed, FeatureMatrix};
use crate::learners::{self, LearnerSpec, TrainedModel};
use crate::prediction::PredictionMatrix;
use crate::scoring::{mean_pinball, QuantileLevelGrid};

const SPLIT_STREAM: u64 = 0x5354_4143;

/// How base predictions are turned into one prediction per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Combiner {
    Mean,
    Median,
    Best,
    Learner { spec: LearnerSpec },
}

impl Combiner {
    /// Algorithm name used in reports.
    pub fn name(&self) -> String {
        match self {
            Combiner::Mean => "mean".into(),
            Combiner::Median => "median".into(),
            Combiner::Best => "best_learner".into(),
            Combiner::Learner { spec } => format!("stack_{}", spec.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub base_specs: Vec<LearnerSpec>,
    pub combiner: Combiner,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        validate_bases(&self.base_specs)?;
        if let Combiner::Learner { spec } = &self.combiner {
            spec.params.validate()?;
        }
        Ok(())
    }
}

fn validate_bases(bases: &[LearnerSpec]) -> Result<()> {
    if bases.is_empty() {
        return Err(Error::Invalid("an ensemble needs at least one base learner".into()));
    }
    let mut names = HashSet::new();
    for b in bases {
        if !names.insert(b.name.as_str()) {
            return Err(Error::Invalid(format!("duplicate base learner name `{}`", b.name)));
        }
        b.params.validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FittedCombiner {
    Mean,
    Median,
    /// Selected base index per level, with the set-2 scores behind the choice
    /// (`scores[base][level]`).
    Best { choice: Vec<usize>, scores: Vec<Vec<f64>> },
    /// One single-level model per level.
    Learner { per_level: Vec<TrainedModel> },
}

/// Refitted base learners plus one fitted combiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub name: String,
    pub base_models: Arc<Vec<TrainedModel>>,
    pub combiner: FittedCombiner,
    pub levels: QuantileLevelGrid,
}

/// Receives every dataset handed to a fit call.
pub trait FitObserver: Sync {
    fn on_fit(&self, learner: &str, data: &Dataset);
}

pub struct NoObserver;

impl FitObserver for NoObserver {
    fn on_fit(&self, _: &str, _: &Dataset) {}
}

/// All combiners sharing one set of base fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackFamily {
    pub base_models: Arc<Vec<TrainedModel>>,
    pub combiners: Vec<(String, FittedCombiner)>,
    pub levels: QuantileLevelGrid,
    /// Set-2 mean pinball of each set-1 base model, `[base][level]`.
    pub set2_scores: Vec<Vec<f64>>,
}

pub fn combine_mean(preds: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(preds.iter().sum::<f64>() / preds.len() as f64)
}

pub fn combine_median(preds: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut s = preds.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    Ok(if k % 2 == 1 { s[k / 2] } else { 0.5 * (s[k / 2 - 1] + s[k / 2]) })
}

/// Index of the lowest score per level (`scores[base][level]`); ties go to
/// the earliest base.
pub fn select_best(scores: &[Vec<f64>]) -> Vec<usize> {
    let levels = scores.first().map_or(0, Vec::len);
    (0..levels)
        .map(|j| {
            let mut best = 0;
            for b in 1..scores.len() {
                if scores[b][j] < scores[best][j] {
                    best = b;
                }
            }
            best
        })
        .collect()
}

fn fit_named(spec: &LearnerSpec, data: &Dataset, levels: &QuantileLevelGrid, observer: &dyn FitObserver) -> Result<TrainedModel> {
    observer.on_fit(&spec.name, data);
    learners::fit(spec, data, levels).map_err(|e| Error::Learner { learner: spec.name.clone(), source: Box::new(e) })
}

fn fit_bases(
    bases: &[LearnerSpec],
    data: &Dataset,
    levels: &QuantileLevelGrid,
    observer: &dyn FitObserver,
) -> Result<Vec<TrainedModel>> {
    bases.par_iter().map(|b| fit_named(b, data, levels, observer)).collect()
}

/// Design matrix for a level's combiner: one column per base.
fn level_inputs(base_preds: &[PredictionMatrix], level: usize) -> FeatureMatrix {
    let n = base_preds.first().map_or(0, PredictionMatrix::n_rows);
    let k = base_preds.len();
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        data.extend(base_preds.iter().map(|m| m.get(i, level)));
    }
    FeatureMatrix { n, p: k, data }
}

fn concat(a: &Dataset, b: &Dataset) -> Dataset {
    let mut samples: Vec<_> = a.samples().to_vec();
    samples.extend_from_slice(b.samples());
    let mut origin: Vec<usize> = a.origin().to_vec();
    origin.extend_from_slice(b.origin());
    Dataset::new(a.feature_names().to_vec(), samples)
        .map(|d| d.with_origin(origin))
        .expect("halves of a valid dataset are valid")
}

/// Step 3 for one combiner, given the set-2 predictions of the set-1 base
/// models. `index` separates the seed streams of combiners sharing a spec.
#[allow(clippy::too_many_arguments)]
pub fn fit_combiner(
    combiner: &Combiner,
    index: usize,
    set2_preds: &[PredictionMatrix],
    set2_scores: &[Vec<f64>],
    set2: &Dataset,
    base_names: &[String],
    levels: &QuantileLevelGrid,
    observer: &dyn FitObserver,
) -> Result<FittedCombiner> {
    Ok(match combiner {
        Combiner::Mean => FittedCombiner::Mean,
        Combiner::Median => FittedCombiner::Median,
        Combiner::Best => FittedCombiner::Best { choice: select_best(set2_scores), scores: set2_scores.to_vec() },
        Combiner::Learner { spec } => {
            spec.params.validate()?;
            let per_level = levels
                .levels()
                .par_iter()
                .enumerate()
                .map(|(j, &tau)| {
                    let inputs = level_inputs(set2_preds, j);
                    let rows: Vec<Vec<f64>> = (0..inputs.n).map(|i| inputs.row(i).to_vec()).collect();
                    let data = set2.with_predictors(base_names.to_vec(), rows)?;
                    let mut level_spec = spec.clone();
                    level_spec.seed = derive_seed(spec.seed, &[index as u64, j as u64]);
                    fit_named(&level_spec, &data, &QuantileLevelGrid::single(tau)?, observer)
                })
                .collect::<Result<Vec<_>>>()?;
            FittedCombiner::Learner { per_level }
        }
    })
}

/// Steps 2 to 4 for several combiners at once, on a given split.
pub fn fit_stack_family(
    bases: &[LearnerSpec],
    combiners: &[Combiner],
    set1: &Dataset,
    set2: &Dataset,
    levels: &QuantileLevelGrid,
    observer: &dyn FitObserver,
) -> Result<StackFamily> {
    validate_bases(bases)?;
    if set1.is_empty() || set2.is_empty() {
        return Err(Error::TooSmall { needed: 2 * bases.len(), got: set1.len() + set2.len() });
    }
    if set1.feature_count() != set2.feature_count() {
        return Err(Error::DimensionMismatch { expected: set1.feature_count(), got: set2.feature_count() });
    }
    // step 2
    let set1_models = fit_bases(bases, set1, levels, observer)?;
    let set2_preds = set1_models.iter().map(|m| learners::predict(m, set2)).collect::<Result<Vec<_>>>()?;
    let y2 = set2.targets();
    let set2_scores = set2_preds
        .iter()
        .map(|m| levels.iter().enumerate().map(|(j, tau)| mean_pinball(&m.column(j), &y2, tau)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    drop(set1_models);

    // step 3
    let base_names: Vec<String> = bases.iter().map(|b| b.name.clone()).collect();
    let fitted = combiners
        .iter()
        .enumerate()
        .map(|(c_idx, c)| {
            let fc = fit_combiner(c, c_idx, &set2_preds, &set2_scores, set2, &base_names, levels, observer)?;
            Ok((c.name(), fc))
        })
        .collect::<Result<Vec<_>>>()?;

    // step 4
    let full = concat(set1, set2);
    let base_models = Arc::new(fit_bases(bases, &full, levels, observer)?);
    Ok(StackFamily { base_models, combiners: fitted, levels: levels.clone(), set2_scores })
}

/// Steps 1 to 4 for one combiner.
pub fn fit_stack(spec: &EnsembleSpec, train: &Dataset, levels: &QuantileLevelGrid) -> Result<StackedModel> {
    fit_stack_observed(spec, train, levels, &NoObserver)
}

pub fn fit_stack_observed(
    spec: &EnsembleSpec,
    train: &Dataset,
    levels: &QuantileLevelGrid,
    observer: &dyn FitObserver,
) -> Result<StackedModel> {
    spec.validate()?;
    let needed = 2 * spec.base_specs.len();
    if train.len() < needed.max(2) {
        return Err(Error::TooSmall { needed: needed.max(2), got: train.len() });
    }
    let plan = split_two_way(train, derive_seed(spec.seed, &[SPLIT_STREAM]))?;
    let set1 = train.subset(&plan.parts[0]);
    let set2 = train.subset(&plan.parts[1]);
    let family = fit_stack_family(&spec.base_specs, std::slice::from_ref(&spec.combiner), &set1, &set2, levels, observer)?;
    Ok(family.into_models().remove(0))
}

/// Combines precomputed base predictions (one matrix per base) with a fitted
/// combiner.
pub fn combine(combiner: &FittedCombiner, base_preds: &[PredictionMatrix], levels: &QuantileLevelGrid) -> Result<PredictionMatrix> {
    let first = base_preds.first().ok_or(Error::EmptyInput)?;
    let (n, m) = (first.n_rows(), levels.len());
    for b in base_preds {
        if b.n_rows() != n || b.n_levels() != m {
            return Err(Error::DimensionMismatch { expected: n * m, got: b.n_rows() * b.n_levels() });
        }
    }
    let columns: Vec<Vec<f64>> = match combiner {
        FittedCombiner::Mean | FittedCombiner::Median => {
            let rule = if matches!(combiner, FittedCombiner::Mean) { combine_mean } else { combine_median };
            let mut buf = vec![0.0; base_preds.len()];
            (0..m)
                .map(|j| {
                    (0..n)
                        .map(|i| {
                            for (slot, b) in buf.iter_mut().zip(base_preds) {
                                *slot = b.get(i, j);
                            }
                            rule(&buf)
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?
        }
        FittedCombiner::Best { choice, .. } => (0..m).map(|j| base_preds[choice[j]].column(j)).collect(),
        FittedCombiner::Learner { per_level } => {
            if per_level.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: per_level.len() });
            }
            per_level
                .par_iter()
                .enumerate()
                .map(|(j, model)| {
                    let inputs = level_inputs(base_preds, j);
                    Ok(learners::predict_matrix(model, &inputs)?.column(0))
                })
                .collect::<Result<_>>()?
        }
    };
    PredictionMatrix::from_columns(levels.clone(), &columns)
}

fn base_predictions(models: &[TrainedModel], data: &Dataset) -> Result<Vec<PredictionMatrix>> {
    models.iter().map(|m| learners::predict(m, data)).collect()
}

/// Step 5.
pub fn predict_stack(model: &StackedModel, data: &Dataset) -> Result<PredictionMatrix> {
    let preds = base_predictions(&model.base_models, data)?;
    combine(&model.combiner, &preds, &model.levels)
}

impl StackFamily {
    pub fn into_models(self) -> Vec<StackedModel> {
        let StackFamily { base_models, combiners, levels, .. } = self;
        combiners
            .into_iter()
            .map(|(name, combiner)| StackedModel {
                name,
                base_models: Arc::clone(&base_models),
                combiner,
                levels: levels.clone(),
            })
            .collect()
    }

    /// Base predictions followed by every combiner's predictions, named.
    pub fn predict_all(&self, data: &Dataset) -> Result<(Vec<(String, PredictionMatrix)>, Vec<(String, PredictionMatrix)>)> {
        let preds = base_predictions(&self.base_models, data)?;
        let stacked = self
            .combiners
            .iter()
            .map(|(name, c)| Ok((name.clone(), combine(c, &preds, &self.levels)?)))
            .collect::<Result<Vec<_>>>()?;
        let bases = self.base_models.iter().map(|m| m.name().to_string()).zip(preds).collect();
        Ok((bases, stacked))
    }
}

impl StackFamily {
    /// Writes `family.json` plus one artifact per base model and combiner.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut base_files = Vec::new();
        for (i, m) in self.base_models.iter().enumerate() {
            let file = format!("base_{i}_{}.json", m.name());
            m.save(dir.join(&file))?;
            base_files.push(file);
        }
        let mut combiner_files = Vec::new();
        for (i, (name, c)) in self.combiners.iter().enumerate() {
            let file = format!("combiner_{i}_{name}.json");
            crate::artifact::save_json(dir.join(&file), &crate::artifact::Artifact::new(c))?;
            combiner_files.push((name.clone(), file));
        }
        let manifest = FamilyManifest {
            levels: self.levels.clone(),
            base_files,
            combiner_files,
            set2_scores: self.set2_scores.clone(),
        };
        crate::artifact::save_json(dir.join("family.json"), &crate::artifact::Artifact::new(manifest))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: FamilyManifest =
            crate::artifact::load_json::<crate::artifact::Artifact<FamilyManifest>>(dir.join("family.json"))?.into_inner()?;
        let base_models = manifest
            .base_files
            .iter()
            .map(|f| TrainedModel::load(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let combiners = manifest
            .combiner_files
            .into_iter()
            .map(|(name, f)| {
                let c = crate::artifact::load_json::<crate::artifact::Artifact<FittedCombiner>>(dir.join(f))?;
                Ok((name, c.into_inner()?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StackFamily {
            base_models: Arc::new(base_models),
            combiners,
            levels: manifest.levels,
            set2_scores: manifest.set2_scores,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FamilyManifest {
    levels: QuantileLevelGrid,
    base_files: Vec<String>,
    combiner_files: Vec<(String, String)>,
    set2_scores: Vec<Vec<f64>>,
}

impl StackedModel {
    pub fn base_names(&self) -> Vec<String> {
        self.base_models.iter().map(|m| m.name().to_string()).collect()
    }

    /// Writes a manifest plus one artifact per base model and per combiner
    /// level into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut base_files = Vec::new();
        for (i, m) in self.base_models.iter().enumerate() {
            let file = format!("base_{i}_{}.json", m.name());
            m.save(dir.join(&file))?;
            base_files.push(file);
        }
        let combiner = match &self.combiner {
            FittedCombiner::Mean => ManifestCombiner::Mean,
            FittedCombiner::Median => ManifestCombiner::Median,
            FittedCombiner::Best { choice, scores } => ManifestCombiner::Best { choice: choice.clone(), scores: scores.clone() },
            FittedCombiner::Learner { per_level } => {
                let mut files = Vec::new();
                for (j, m) in per_level.iter().enumerate() {
                    let file = format!("combiner_level_{j}.json");
                    m.save(dir.join(&file))?;
                    files.push(file);
                }
                ManifestCombiner::Learner { files }
            }
        };
        let manifest = StackManifest { name: self.name.clone(), levels: self.levels.clone(), base_files, combiner };
        crate::artifact::save_json(dir.join("manifest.json"), &crate::artifact::Artifact::new(manifest))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: StackManifest =
            crate::artifact::load_json::<crate::artifact::Artifact<StackManifest>>(dir.join("manifest.json"))?.into_inner()?;
        let base_models = manifest
            .base_files
            .iter()
            .map(|f| TrainedModel::load(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let combiner = match manifest.combiner {
            ManifestCombiner::Mean => FittedCombiner::Mean,
            ManifestCombiner::Median => FittedCombiner::Median,
            ManifestCombiner::Best { choice, scores } => FittedCombiner::Best { choice, scores },
            ManifestCombiner::Learner { files } => FittedCombiner::Learner {
                per_level: files.iter().map(|f| TrainedModel::load(dir.join(f))).collect::<Result<_>>()?,
            },
        };
        Ok(StackedModel { name: manifest.name, base_models: Arc::new(base_models), combiner, levels: manifest.levels })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackManifest {
    name: String,
    levels: QuantileLevelGrid,
    base_files: Vec<String>,
    combiner: ManifestCombiner,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ManifestCombiner {
    Mean,
    Median,
    Best { choice: Vec<usize>, scores: Vec<Vec<f64>> },
    Learner { files: Vec<String> },
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_cases() {
        assert_eq!(combine_mean(&[2.0, 4.0]).unwrap(), 3.0);
        assert_eq!(combine_mean(&[5.0]).unwrap(), 5.0);
        assert_eq!(combine_mean(&[1.0, 2.0, 9.0]).unwrap(), 4.0);
        assert!(combine_mean(&[]).is_err());
    }

    #[test]
    fn median_cases() {
        assert_eq!(combine_median(&[1.0, 2.0, 9.0]).unwrap(), 2.0);
        assert_eq!(combine_median(&[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(combine_median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(combine_median(&[]).is_err());
    }

    #[test]
    fn best_cases() {
        assert_eq!(select_best(&[vec![1.0], vec![0.5]]), vec![1]);
        assert_eq!(select_best(&[vec![0.5], vec![0.5]]), vec![0]);
        // per-level choice from hand-computed mean pinball scores
        let obs = [1.0, 2.0, 3.0];
        let preds = [[0.0, 0.0, 0.0], [2.0, 2.0, 2.0], [5.0, 5.0, 5.0]];
        let scores: Vec<Vec<f64>> = preds
            .iter()
            .map(|p| [0.1, 0.5, 0.9].iter().map(|&t| mean_pinball(p, &obs, t).unwrap()).collect())
            .collect();
        // tau 0.1: 0.2, 0.3, 2.7 -> first; tau 0.5: 1.0, 1/3, 1.5 -> second;
        // tau 0.9: 1.8, 0.3+1/30, 0.3 -> third
        assert_eq!(select_best(&scores), vec![0, 1, 2]);
    }

    proptest! {
        #[test]
        fn combiners_within_base_range(v in proptest::collection::vec(-1e3f64..1e3, 1..12)) {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = combine_mean(&v).unwrap();
            let med = combine_median(&v).unwrap();
            prop_assert!(lo - 1e-9 <= mean && mean <= hi + 1e-9);
            prop_assert!(lo <= med && med <= hi);
        }

        #[test]
        fn best_invariant_to_shift(scores in proptest::collection::vec(proptest::collection::vec(0f64..10.0, 3), 1..6), c in 0.0f64..100.0) {
            let shifted: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|s| s + c).collect()).collect();
            // shifting by c can merge scores that differ by less than an ulp of c; compare
            // only when no near-ties exist
            let near_tie = (0..3).any(|j| {
                scores.iter().enumerate().any(|(a, ra)| scores.iter().skip(a + 1).any(|rb| (ra[j] - rb[j]).abs() < 1e-9 * (1.0 + c)))
            });
            if !near_tie {
                prop_assert_eq!(select_best(&scores), select_best(&shifted));
            }
        }
    }
}
