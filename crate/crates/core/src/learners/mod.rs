//! Base quantile learners behind one fit/predict contract.
//!
//! Four families are provided:
//!
//! * `linear_pinball`: linear quantile regression, one model per level.
//! * `quantile_forest`: a random forest whose leaves keep their training
//!   targets; every level is read from the weighted empirical distribution.
//! * `gradient_boost_pinball`: gradient boosting of regression trees on the
//!   (smoothed) pinball loss, one model per level.
//! * `neural_pinball`: a one-hidden-layer network trained on the smoothed
//!   pinball loss, one model per level.
//!
//! Loss-minimising kinds start from the best constant and keep their best
//! training iterate as measured by the exact pinball loss, so the fitted model
//! never scores worse on its training data than that constant.

pub mod boosting;
pub mod common;
pub mod forest;
pub mod linear;
pub mod neural;
pub mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::prediction::PredictionMatrix;
use crate::scoring::QuantileLevelGrid;

pub use boosting::{BoostedModel, BoostingParams};
pub use common::FeatureMatrix;
pub use forest::{ForestModel, ForestParams};
pub use linear::{LinearModel, LinearParams};
pub use neural::{NeuralModel, NeuralParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    LinearPinball,
    QuantileForest,
    GradientBoostPinball,
    NeuralPinball,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [
        LearnerKind::LinearPinball,
        LearnerKind::QuantileForest,
        LearnerKind::GradientBoostPinball,
        LearnerKind::NeuralPinball,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::LinearPinball => "linear_pinball",
            LearnerKind::QuantileForest => "quantile_forest",
            LearnerKind::GradientBoostPinball => "gradient_boost_pinball",
            LearnerKind::NeuralPinball => "neural_pinball",
        }
    }

    fn stream_id(self) -> u64 {
        self as u64 + 1
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown learner kind `{s}`")))
    }
}

/// Kind-specific hyperparameters, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerParams {
    LinearPinball(LinearParams),
    QuantileForest(ForestParams),
    GradientBoostPinball(BoostingParams),
    NeuralPinball(NeuralParams),
}

impl LearnerParams {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::LinearPinball => LearnerParams::LinearPinball(LinearParams::default()),
            LearnerKind::QuantileForest => LearnerParams::QuantileForest(ForestParams::default()),
            LearnerKind::GradientBoostPinball => LearnerParams::GradientBoostPinball(BoostingParams::default()),
            LearnerKind::NeuralPinball => LearnerParams::NeuralPinball(NeuralParams::default()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerParams::LinearPinball(_) => LearnerKind::LinearPinball,
            LearnerParams::QuantileForest(_) => LearnerKind::QuantileForest,
            LearnerParams::GradientBoostPinball(_) => LearnerKind::GradientBoostPinball,
            LearnerParams::NeuralPinball(_) => LearnerKind::NeuralPinball,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerParams::LinearPinball(p) => p.validate(),
            LearnerParams::QuantileForest(p) => p.validate(),
            LearnerParams::GradientBoostPinball(p) => p.validate(),
            LearnerParams::NeuralPinball(p) => p.validate(),
        }
    }
}

pub(crate) fn invalid(name: &str, message: impl Into<String>) -> Error {
    Error::InvalidHyperparameter { name: name.to_string(), message: message.into() }
}

/// A named learner with its hyperparameters and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub params: LearnerParams,
}

impl LearnerSpec {
    pub fn new(name: impl Into<String>, params: LearnerParams, seed: u64) -> Self {
        LearnerSpec { name: name.into(), seed, params }
    }

    /// The kind's default hyperparameters, named after the kind.
    pub fn default_for(kind: LearnerKind, seed: u64) -> Self {
        LearnerSpec::new(kind.as_str(), LearnerParams::default_for(kind), seed)
    }

    pub fn kind(&self) -> LearnerKind {
        self.params.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedParams {
    LinearPinball { per_level: Vec<LinearModel> },
    QuantileForest { forest: ForestModel },
    GradientBoostPinball { per_level: Vec<BoostedModel> },
    NeuralPinball { per_level: Vec<NeuralModel> },
}

/// An immutable fitted learner predicting at every level of its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: LearnerSpec,
    pub levels: QuantileLevelGrid,
    pub feature_count: usize,
    pub fitted: FittedParams,
}

impl TrainedModel {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn kind(&self) -> LearnerKind {
        self.spec.kind()
    }

    /// Exact training mean pinball loss per outer iteration, one trace per
    /// level. Empty for the forest kind.
    pub fn loss_history(&self) -> Vec<Vec<f64>> {
        match &self.fitted {
            FittedParams::LinearPinball { per_level } => per_level.iter().map(|m| m.history.clone()).collect(),
            FittedParams::GradientBoostPinball { per_level } => per_level.iter().map(|m| m.history.clone()).collect(),
            FittedParams::NeuralPinball { per_level } => per_level.iter().map(|m| m.history.clone()).collect(),
            FittedParams::QuantileForest { .. } => Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::artifact::save_json(path, &crate::artifact::Artifact::new(self))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::artifact::load_json::<crate::artifact::Artifact<TrainedModel>>(path)?.into_inner()
    }
}

/// Fits a learner at every level of `levels`.
pub fn fit(spec: &LearnerSpec, train: &Dataset, levels: &QuantileLevelGrid) -> Result<TrainedModel> {
    spec.params.validate()?;
    if train.is_empty() {
        return Err(Error::TooSmall { needed: 1, got: 0 });
    }
    let x = FeatureMatrix::from_dataset(train);
    let y = train.targets();
    let stream = |j: usize| common::derive_seed(spec.seed, &[spec.kind().stream_id(), j as u64]);
    let fitted = match &spec.params {
        LearnerParams::LinearPinball(p) => {
            let per_level = levels
                .levels()
                .par_iter()
                .map(|&tau| linear::fit(p, &x, &y, tau))
                .collect::<Result<Vec<_>>>()?;
            FittedParams::LinearPinball { per_level }
        }
        LearnerParams::QuantileForest(p) => {
            FittedParams::QuantileForest { forest: forest::fit(p, &x, &y, stream(0))? }
        }
        LearnerParams::GradientBoostPinball(p) => {
            let per_level = levels
                .levels()
                .par_iter()
                .enumerate()
                .map(|(j, &tau)| boosting::fit(p, &x, &y, tau, stream(j)))
                .collect::<Result<Vec<_>>>()?;
            FittedParams::GradientBoostPinball { per_level }
        }
        LearnerParams::NeuralPinball(p) => {
            let per_level = levels
                .levels()
                .par_iter()
                .enumerate()
                .map(|(j, &tau)| neural::fit(p, &x, &y, tau, stream(j)))
                .collect::<Result<Vec<_>>>()?;
            FittedParams::NeuralPinball { per_level }
        }
    };
    Ok(TrainedModel { spec: spec.clone(), levels: levels.clone(), feature_count: train.feature_count(), fitted })
}

/// Predicts every trained level for every sample of `data`.
pub fn predict(model: &TrainedModel, data: &Dataset) -> Result<PredictionMatrix> {
    if data.feature_count() != model.feature_count {
        return Err(Error::DimensionMismatch { expected: model.feature_count, got: data.feature_count() });
    }
    predict_matrix(model, &FeatureMatrix::from_dataset(data))
}

pub fn predict_matrix(model: &TrainedModel, x: &FeatureMatrix) -> Result<PredictionMatrix> {
    if x.p != model.feature_count && x.n > 0 {
        return Err(Error::DimensionMismatch { expected: model.feature_count, got: x.p });
    }
    let columns: Vec<Vec<f64>> = match &model.fitted {
        FittedParams::LinearPinball { per_level } => per_level.iter().map(|m| m.predict(x)).collect(),
        FittedParams::GradientBoostPinball { per_level } => per_level.iter().map(|m| m.predict(x)).collect(),
        FittedParams::NeuralPinball { per_level } => per_level.iter().map(|m| m.predict(x)).collect(),
        FittedParams::QuantileForest { forest } => {
            let rows = forest.predict_quantiles(x, model.levels.levels());
            return PredictionMatrix::from_rows(model.levels.clone(), &rows);
        }
    };
    PredictionMatrix::from_columns(model.levels.clone(), &columns)
}
