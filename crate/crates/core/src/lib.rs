//! Probabilistic prediction with quantile regression.
//!
//! The crate trains a roster of base quantile learners, combines them by
//! quantile stacking or simple rules, builds distance-weighted spatial
//! predictors from gridded products, and scores everything with the pinball
//! loss.

pub mod artifact;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod features;
pub mod importance;
pub mod learners;
pub mod postprocess;
pub mod prediction;
pub mod scoring;
pub mod synthetic;

pub use dataset::{CsvSchema, Dataset, Sample, SplitPlan};
pub use ensemble::{Combiner, EnsembleSpec, StackedModel};

pub use error::{Error, Result};
pub use learners::{LearnerKind, LearnerParams, LearnerSpec, TrainedModel};
pub use prediction::PredictionMatrix;
pub use scoring::{QuantileLevelGrid, ScoreTable};
