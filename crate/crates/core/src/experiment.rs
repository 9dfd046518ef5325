//! Config-driven end-to-end runs.
//!
//! A run splits the data three ways at random. Base learners are fit on set 1
//! and predict set 2; those predictions train every combiner and pick the
//! best learner per level. The bases are then refit on sets 1 and 2, and
//! every algorithm predicts set 3. Predictions are clamped and rearranged
//! before scoring. Importance statistics are computed for tree-based bases on
//! the raw features and for tree-based combiners on the base predictions.
//!
//! Every output byte is a function of the config, seeds included.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_csv, load_standard_csv, split_three_way, CsvSchema, Dataset};
use crate::ensemble::{fit_stack_family, Combiner, FitObserver, NoObserver, StackFamily};
use crate::error::{Error, Result};
use crate::features::{assemble_samples, read_grid_csv, read_site_csv};
use crate::importance::{raw_feature_importance, stacked_importance, ImportanceReport};
use crate::learners::common::derive_seed;
use crate::learners::{LearnerKind, LearnerSpec};
use crate::postprocess::postprocess;
use crate::prediction::PredictionMatrix;
use crate::scoring::{QuantileLevelGrid, ScoreTable};
use crate::synthetic::{
    generate_spatial, heteroscedastic, oracle_scores, HeteroscedasticParams, SpatialParams, SyntheticTruth,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductFile {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// A sample table; without a schema the standard layout is assumed.
    Csv { path: PathBuf, schema: Option<CsvSchema> },
    /// Gauge records plus gridded products, assembled into weighted features.
    SiteGrid { sites: PathBuf, products: Vec<ProductFile> },
    Spatial(SpatialParams),
    Heteroscedastic(HeteroscedasticParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub ensemble: u64,
    pub learners: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_master(0)
    }
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            data: derive_seed(seed, &[0]),
            split: derive_seed(seed, &[1]),
            ensemble: derive_seed(seed, &[2]),
            learners: derive_seed(seed, &[3]),
        }
    }
}

fn default_levels() -> QuantileLevelGrid {
    QuantileLevelGrid::standard()
}

fn default_bases() -> Vec<LearnerSpec> {
    LearnerKind::ALL.iter().map(|&k| LearnerSpec::default_for(k, 0)).collect()
}

fn default_combiners() -> Vec<Combiner> {
    let mut out = vec![Combiner::Mean, Combiner::Median, Combiner::Best];
    out.extend(LearnerKind::ALL.iter().map(|&k| Combiner::Learner { spec: LearnerSpec::default_for(k, 0) }));
    out
}

fn default_benchmark() -> String {
    LearnerKind::LinearPinball.as_str().into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_levels")]
    pub levels: QuantileLevelGrid,
    #[serde(default = "default_bases")]
    pub bases: Vec<LearnerSpec>,
    #[serde(default = "default_combiners")]
    pub combiners: Vec<Combiner>,
    #[serde(default = "default_benchmark")]
    pub benchmark: String,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub write_models: bool,
    #[serde(default = "yes")]
    pub write_predictions: bool,
}

impl ExperimentConfig {
    /// Default roster and standard level grid on the given data.
    pub fn new(data: DataSource) -> Self {
        ExperimentConfig {
            data,
            levels: default_levels(),
            bases: default_bases(),
            combiners: default_combiners(),
            benchmark: default_benchmark(),
            seeds: Seeds::default(),
            out_dir: None,
            write_models: true,
            write_predictions: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; relative data paths are taken from the file's
    /// directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSource::Csv { path, .. } => fix(path),
            DataSource::SiteGrid { sites, products } => {
                fix(sites);
                products.iter_mut().for_each(|p| fix(&mut p.path));
            }
            DataSource::Spatial(_) | DataSource::Heteroscedastic(_) => {}
        }
    }

    /// Evaluated algorithm names: bases, then combiners.
    pub fn roster(&self) -> Vec<String> {
        self.bases.iter().map(|b| b.name.clone()).chain(self.combiners.iter().map(Combiner::name)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bases.is_empty() {
            return Err(Error::Config("at least one base learner is required".into()));
        }
        let mut seen = HashSet::new();
        for name in self.roster() {
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("algorithm name `{name}` appears twice")));
            }
        }
        if !seen.contains(&self.benchmark) {
            return Err(Error::Config(format!("benchmark `{}` is not among the evaluated algorithms", self.benchmark)));
        }
        for b in &self.bases {
            b.params.validate()?;
        }
        for c in &self.combiners {
            if let Combiner::Learner { spec } = c {
                spec.params.validate()?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the config's canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    fn seeded_bases(&self) -> Vec<LearnerSpec> {
        self.bases
            .iter()
            .enumerate()
            .map(|(i, b)| LearnerSpec { seed: derive_seed(self.seeds.learners, &[i as u64, b.seed]), ..b.clone() })
            .collect()
    }

    fn seeded_combiners(&self) -> Vec<Combiner> {
        self.combiners
            .iter()
            .enumerate()
            .map(|(i, c)| match c {
                Combiner::Learner { spec } => Combiner::Learner {
                    spec: LearnerSpec { seed: derive_seed(self.seeds.ensemble, &[i as u64, spec.seed]), ..spec.clone() },
                },
                other => other.clone(),
            })
            .collect()
    }
}

/// Loads the configured data; synthetic sources also return their truth.
pub fn load_data(source: &DataSource, seed: u64) -> Result<(Dataset, Option<SyntheticTruth>)> {
    match source {
        DataSource::Csv { path, schema } => {
            let report = match schema {
                Some(s) => load_csv(path, s)?,
                None => load_standard_csv(path)?,
            };
            Ok((report.dataset, None))
        }
        DataSource::SiteGrid { sites, products } => {
            let sites = read_site_csv(sites)?;
            let products = products.iter().map(|p| read_grid_csv(&p.path, &p.name)).collect::<Result<Vec<_>>>()?;
            Ok((assemble_samples(&sites, &products)?.dataset, None))
        }
        DataSource::Spatial(p) => {
            let (d, t) = generate_spatial(p, seed)?.assemble()?;
            Ok((d, Some(t)))
        }
        DataSource::Heteroscedastic(p) => {
            let (d, t) = heteroscedastic(p, seed)?;
            Ok((d, Some(t)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub level: f64,
    pub mean_score: f64,
    pub standard_error: f64,
}

pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub scores: ScoreTable,
    pub importance: Vec<ImportanceReport>,
    /// Score of the true quantiles on set 3, for synthetic data.
    pub oracle: Option<Vec<OracleRow>>,
    /// Post-processed set-3 predictions in roster order.
    pub predictions: Vec<(String, PredictionMatrix)>,
    pub test: Dataset,
    pub family: StackFamily,
    pub metadata: BTreeMap<String, String>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_observed(cfg, &NoObserver)
}

pub fn run_experiment_observed(cfg: &ExperimentConfig, observer: &dyn FitObserver) -> Result<ExperimentOutcome> {
    cfg.validate().map_err(Error::in_stage("config"))?;
    let (data, truth) = load_data(&cfg.data, cfg.seeds.data).map_err(Error::in_stage("data"))?;
    let plan = split_three_way(&data, cfg.seeds.split).map_err(Error::in_stage("split"))?;
    let [set1, set2, set3] = [0, 1, 2].map(|k| data.subset(&plan.parts[k]));

    let bases = cfg.seeded_bases();
    let combiners = cfg.seeded_combiners();
    let family =
        fit_stack_family(&bases, &combiners, &set1, &set2, &cfg.levels, observer).map_err(Error::in_stage("fit"))?;

    let (base_preds, stacked_preds) = family.predict_all(&set3).map_err(Error::in_stage("predict"))?;
    let predictions: Vec<(String, PredictionMatrix)> =
        base_preds.into_iter().chain(stacked_preds).map(|(n, m)| (n, postprocess(m))).collect();

    let y3 = set3.targets();
    let scores = ScoreTable::evaluate(&predictions, &y3, &cfg.benchmark).map_err(Error::in_stage("score"))?;

    let importance = compute_importance(&family, set3.feature_names()).map_err(Error::in_stage("importance"))?;

    let oracle = truth
        .map(|t| {
            let rows = oracle_scores(&t.subset(set3.origin()), &y3, &cfg.levels)?;
            Ok::<_, Error>(
                cfg.levels
                    .iter()
                    .zip(rows)
                    .map(|(level, (mean_score, standard_error))| OracleRow { level, mean_score, standard_error })
                    .collect(),
            )
        })
        .transpose()
        .map_err(Error::in_stage("score"))?;

    let mut metadata = BTreeMap::new();
    metadata.insert("config_hash".to_string(), cfg.hash());
    metadata.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
    metadata.insert("benchmark".into(), cfg.benchmark.clone());
    metadata.insert("levels".into(), cfg.levels.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "));
    metadata.insert("seed_data".into(), cfg.seeds.data.to_string());
    metadata.insert("seed_split".into(), cfg.seeds.split.to_string());
    metadata.insert("seed_ensemble".into(), cfg.seeds.ensemble.to_string());
    metadata.insert("seed_learners".into(), cfg.seeds.learners.to_string());
    metadata.insert("n_set1".into(), set1.len().to_string());
    metadata.insert("n_set2".into(), set2.len().to_string());
    metadata.insert("n_set3".into(), set3.len().to_string());

    Ok(ExperimentOutcome {
        config: cfg.clone(),
        scores,
        importance,
        oracle,
        predictions,
        test: set3,
        family,
        metadata,
    })
}

fn compute_importance(family: &StackFamily, features: &[String]) -> Result<Vec<ImportanceReport>> {
    let mut out = Vec::new();
    for m in family.base_models.iter() {
        out.extend(raw_feature_importance(m, features)?);
    }
    let base_names: Vec<String> = family.base_models.iter().map(|m| m.name().to_string()).collect();
    for (name, c) in &family.combiners {
        out.extend(stacked_importance(name, c, &base_names, family.levels.levels())?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ScoresJson<'a> {
    metadata: &'a BTreeMap<String, String>,
    table: &'a ScoreTable,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    crate_version: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
    metadata: &'a BTreeMap<String, String>,
    files: Vec<String>,
}

/// Reads the table back from `scores.json`.
pub fn read_scores_json(path: impl AsRef<Path>) -> Result<ScoreTable> {
    #[derive(Deserialize)]
    struct Owned {
        table: ScoreTable,
    }
    Ok(crate::artifact::load_json::<Owned>(path)?.table)
}

/// Writes every output of a run into `dir` and returns the relative paths.
pub fn emit_report(outcome: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<Vec<String>> {
    if outcome.scores.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec!["scores.csv".to_string(), "scores.json".into(), "importance.csv".into()];
    outcome.scores.write_csv_file(dir.join("scores.csv"), &outcome.metadata)?;
    crate::artifact::save_json(
        dir.join("scores.json"),
        &ScoresJson { metadata: &outcome.metadata, table: &outcome.scores },
    )?;
    crate::importance::write_csv_file(dir.join("importance.csv"), &outcome.importance)?;

    if let Some(rows) = &outcome.oracle {
        let mut w = csv::Writer::from_path(dir.join("oracle.csv"))?;
        w.write_record(["level", "mean_score", "standard_error"])?;
        for r in rows {
            w.write_record([r.level.to_string(), r.mean_score.to_string(), r.standard_error.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("oracle.csv"), e))?;
        files.push("oracle.csv".into());
    }
    if outcome.config.write_predictions {
        let pdir = dir.join("predictions");
        std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        outcome.test.write_csv(pdir.join("test_set.csv"))?;
        files.push("predictions/test_set.csv".into());
        for (name, m) in &outcome.predictions {
            m.write_csv(pdir.join(format!("{name}.csv")), Some(&outcome.test))?;
            files.push(format!("predictions/{name}.csv"));
        }
    }
    if outcome.config.write_models {
        outcome.family.save(dir.join("models"))?;
        files.push("models/family.json".into());
    }
    files.push("manifest.json".into());
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        config_hash: outcome.config.hash(),
        config: &outcome.config,
        metadata: &outcome.metadata,
        files: files.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ForestParams, LearnerParams};

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("[data]\nsource = \"heteroscedastic\"\nn_samples = 300\n").unwrap();
        assert_eq!(cfg.levels, QuantileLevelGrid::standard());
        assert_eq!(cfg.roster().len(), 11);
        assert_eq!(cfg.benchmark, "linear_pinball");
        cfg.validate().unwrap();
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
            levels = [0.25, 0.75]
            benchmark = "lin"

            [data]
            source = "spatial"
            n_stations = 20
            family = "log_normal"

            [seeds]
            split = 9

            [[bases]]
            name = "lin"
            kind = "linear_pinball"

            [[bases]]
            name = "qrf"
            kind = "quantile_forest"
            n_trees = 50

            [[combiners]]
            type = "median"

            [[combiners]]
            type = "learner"
            [combiners.spec]
            name = "lin"
            kind = "linear_pinball"
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.roster(), vec!["lin", "qrf", "median", "stack_lin"]);
        assert_eq!(cfg.seeds.split, 9);
        assert_eq!(
            cfg.bases[1].params,
            LearnerParams::QuantileForest(ForestParams { n_trees: 50, ..Default::default() })
        );
        let DataSource::Spatial(p) = &cfg.data else { panic!("wrong source") };
        assert_eq!(p.n_stations, 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_missing_benchmark_and_duplicates() {
        let mut cfg = ExperimentConfig::new(DataSource::Heteroscedastic(Default::default()));
        cfg.benchmark = "nope".into();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(DataSource::Heteroscedastic(Default::default()));
        cfg.bases.push(cfg.bases[0].clone());
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(DataSource::Heteroscedastic(Default::default()));
        cfg.bases.clear();
        cfg.combiners.clear();
        assert!(matches!(run_experiment(&cfg), Err(Error::Stage { stage: "config", .. })));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::new(DataSource::Heteroscedastic(Default::default()));
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seeds.split += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
