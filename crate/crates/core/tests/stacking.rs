use std::collections::BTreeSet;
use std::sync::Mutex;

use quantstack::dataset::{split_three_way, Dataset};
use quantstack::ensemble::{
    combine, fit_combiner, fit_stack, fit_stack_family, predict_stack, Combiner, EnsembleSpec, FitObserver,
    NoObserver, StackFamily, StackedModel,
};
use quantstack::experiment::{load_data, run_experiment_observed, DataSource, ExperimentConfig};
use quantstack::learners::{BoostingParams, ForestParams, LearnerParams, LearnerSpec, LinearParams, NeuralParams};
use quantstack::scoring::QuantileLevelGrid;
use quantstack::synthetic::{heteroscedastic, HeteroscedasticParams};
use quantstack::{LearnerKind, PredictionMatrix};

fn data(n: usize, seed: u64) -> Dataset {
    heteroscedastic(&HeteroscedasticParams { n_samples: n, noise_features: 1 }, seed).unwrap().0
}

fn small(kind: LearnerKind, seed: u64) -> LearnerSpec {
    let params = match kind {
        LearnerKind::LinearPinball => LearnerParams::LinearPinball(LinearParams::default()),
        LearnerKind::QuantileForest => LearnerParams::QuantileForest(ForestParams { n_trees: 40, ..Default::default() }),
        LearnerKind::GradientBoostPinball => {
            LearnerParams::GradientBoostPinball(BoostingParams { n_rounds: 60, ..Default::default() })
        }
        LearnerKind::NeuralPinball => LearnerParams::NeuralPinball(NeuralParams { epochs: 60, ..Default::default() }),
    };
    LearnerSpec::new(kind.as_str(), params, seed)
}

fn roster() -> Vec<LearnerSpec> {
    LearnerKind::ALL.iter().map(|&k| small(k, 3)).collect()
}

#[test]
fn constant_bases_give_set2_median() {
    let set2 = data(301, 4);
    let n = set2.len();
    let levels = QuantileLevelGrid::single(0.5).unwrap();
    let zeros = PredictionMatrix::new(levels.clone(), n, vec![0.0; n]).unwrap();
    let tens = PredictionMatrix::new(levels.clone(), n, vec![10.0; n]).unwrap();
    let names = vec!["zero".to_string(), "ten".to_string()];
    let spec = LearnerSpec::new("lin", LearnerParams::LinearPinball(LinearParams::default()), 0);
    let fc = fit_combiner(
        &Combiner::Learner { spec },
        0,
        &[zeros.clone(), tens.clone()],
        &[vec![1.0], vec![1.0]],
        &set2,
        &names,
        &levels,
        &NoObserver,
    )
    .unwrap();
    let out = combine(&fc, &[zeros.subrows(0..50), tens.subrows(0..50)], &levels).unwrap();

    let mut y = set2.targets();
    y.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = y[n / 2];
    for v in out.values() {
        assert!((v - median).abs() < 1e-3, "{v} vs {median}");
    }
}

trait Subrows {
    fn subrows(&self, r: std::ops::Range<usize>) -> PredictionMatrix;
}

impl Subrows for PredictionMatrix {
    fn subrows(&self, r: std::ops::Range<usize>) -> PredictionMatrix {
        let rows: Vec<Vec<f64>> = r.map(|i| self.row(i).to_vec()).collect();
        PredictionMatrix::from_rows(self.levels().clone(), &rows).unwrap()
    }
}

#[test]
fn structural_bounds_of_mean_and_median() {
    let d = data(600, 8);
    let plan = split_three_way(&d, 1).unwrap();
    let [s1, s2, s3] = [0, 1, 2].map(|k| d.subset(&plan.parts[k]));
    let levels = QuantileLevelGrid::quick();
    let fam = fit_stack_family(&roster(), &[Combiner::Mean, Combiner::Median], &s1, &s2, &levels, &NoObserver).unwrap();
    let (bases, stacked) = fam.predict_all(&s3).unwrap();
    for (_, m) in &stacked {
        for (i, row) in m.rows().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let vals: Vec<f64> = bases.iter().map(|(_, b)| b.get(i, j)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(lo - 1e-12 <= *v && *v <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn fit_stack_is_deterministic_and_round_trips() {
    let d = data(500, 2);
    let test = data(80, 99);
    let levels = QuantileLevelGrid::quick();
    let forest_combiner = Combiner::Learner { spec: small(LearnerKind::QuantileForest, 7) };
    let spec = EnsembleSpec { base_specs: roster(), combiner: forest_combiner, seed: 42 };
    let a = fit_stack(&spec, &d, &levels).unwrap();
    let b = fit_stack(&spec, &d, &levels).unwrap();
    let pa = predict_stack(&a, &test).unwrap();
    assert_eq!(pa, predict_stack(&b, &test).unwrap());
    assert_eq!(a.base_names(), vec!["linear_pinball", "quantile_forest", "gradient_boost_pinball", "neural_pinball"]);

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let loaded = StackedModel::load(dir.path()).unwrap();
    assert_eq!(predict_stack(&loaded, &test).unwrap(), pa);

    let other = EnsembleSpec { seed: 43, ..spec };
    assert_ne!(predict_stack(&fit_stack(&other, &d, &levels).unwrap(), &test).unwrap(), pa);
}

#[test]
fn family_round_trips() {
    let d = data(400, 6);
    let plan = split_three_way(&d, 2).unwrap();
    let [s1, s2, s3] = [0, 1, 2].map(|k| d.subset(&plan.parts[k]));
    let levels = QuantileLevelGrid::quick();
    let combiners = [
        Combiner::Best,
        Combiner::Learner { spec: small(LearnerKind::GradientBoostPinball, 1) },
        Combiner::Learner { spec: small(LearnerKind::LinearPinball, 1) },
    ];
    let fam = fit_stack_family(&roster(), &combiners, &s1, &s2, &levels, &NoObserver).unwrap();
    let dir = tempfile::tempdir().unwrap();
    fam.save(dir.path()).unwrap();
    let back = StackFamily::load(dir.path()).unwrap();
    assert_eq!(back, fam);
    assert_eq!(back.predict_all(&s3).unwrap(), fam.predict_all(&s3).unwrap());
}

#[test]
fn too_small_training_set_is_rejected() {
    let d = data(5, 1);
    let spec = EnsembleSpec { base_specs: roster(), combiner: Combiner::Mean, seed: 0 };
    assert!(fit_stack(&spec, &d, &QuantileLevelGrid::quick()).is_err());
}

#[test]
fn duplicate_base_names_are_rejected() {
    let spec = EnsembleSpec {
        base_specs: vec![small(LearnerKind::LinearPinball, 0), small(LearnerKind::LinearPinball, 1)],
        combiner: Combiner::Mean,
        seed: 0,
    };
    assert!(spec.validate().is_err());
}

#[derive(Default)]
struct Recorder {
    rows: Mutex<BTreeSet<usize>>,
    calls: Mutex<usize>,
}

impl FitObserver for Recorder {
    fn on_fit(&self, _learner: &str, data: &Dataset) {
        self.rows.lock().unwrap().extend(data.origin().iter().copied());
        *self.calls.lock().unwrap() += 1;
    }
}

#[test]
fn test_set_is_never_fitted() {
    let mut cfg = ExperimentConfig::new(DataSource::Heteroscedastic(HeteroscedasticParams {
        n_samples: 450,
        noise_features: 1,
    }));
    cfg.levels = QuantileLevelGrid::quick();
    cfg.bases = roster();
    cfg.combiners = vec![
        Combiner::Mean,
        Combiner::Best,
        Combiner::Learner { spec: small(LearnerKind::QuantileForest, 0) },
        Combiner::Learner { spec: small(LearnerKind::NeuralPinball, 0) },
    ];
    let rec = Recorder::default();
    let out = run_experiment_observed(&cfg, &rec).unwrap();

    let (d, _) = load_data(&cfg.data, cfg.seeds.data).unwrap();
    let plan = split_three_way(&d, cfg.seeds.split).unwrap();
    let seen = rec.rows.lock().unwrap();
    assert!(plan.parts[2].iter().all(|i| !seen.contains(i)));
    let train: BTreeSet<usize> = plan.parts[0].iter().chain(&plan.parts[1]).copied().collect();
    assert_eq!(*seen, train);
    // 4 set-1 fits, 2 learner combiners x 3 levels, 4 refits
    assert_eq!(*rec.calls.lock().unwrap(), 4 + 6 + 4);
    assert_eq!(out.test.origin(), plan.parts[2].as_slice());
}
