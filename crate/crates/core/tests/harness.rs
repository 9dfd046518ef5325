use quantstack::ensemble::Combiner;
use quantstack::experiment::{emit_report, read_scores_json, run_experiment, DataSource, ExperimentConfig};
use quantstack::importance::Setting;
use quantstack::learners::{LearnerParams, LearnerSpec};
use quantstack::scoring::{QuantileLevelGrid, ScoreTable};
use quantstack::synthetic::{generate_spatial, SpatialParams};
use quantstack::{Error, LearnerKind};

fn light(cfg: &mut ExperimentConfig) {
    let shrink = |p: &mut LearnerParams| match p {
        LearnerParams::QuantileForest(f) => f.n_trees = 40,
        LearnerParams::GradientBoostPinball(b) => b.n_rounds = 60,
        LearnerParams::NeuralPinball(n) => n.epochs = 60,
        LearnerParams::LinearPinball(_) => {}
    };
    cfg.bases.iter_mut().for_each(|b| shrink(&mut b.params));
    for c in cfg.combiners.iter_mut() {
        if let Combiner::Learner { spec } = c {
            shrink(&mut spec.params);
        }
    }
}

fn spatial_config(stations: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DataSource::Spatial(SpatialParams {
        n_stations: stations,
        n_months: 12,
        ..Default::default()
    }));
    cfg.levels = QuantileLevelGrid::quick();
    light(&mut cfg);
    cfg
}

#[test]
fn benchmark_only_run_has_zero_skill() {
    let mut cfg = spatial_config(15);
    cfg.bases = vec![LearnerSpec::default_for(LearnerKind::LinearPinball, 0)];
    cfg.combiners.clear();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.scores.algorithms(), vec!["linear_pinball"]);
    assert!(out.scores.rows.iter().all(|r| r.skill_vs_benchmark == Some(0.0) && r.rank == 1));
}

#[test]
fn full_roster_outputs() {
    let cfg = spatial_config(30);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.scores.algorithms(), cfg.roster());
    assert_eq!(out.scores.rows.len(), 11 * 3);

    // every algorithm at every level stays above the oracle up to noise
    let oracle = out.oracle.as_ref().unwrap();
    for (j, tau) in cfg.levels.iter().enumerate() {
        for r in out.scores.rows.iter().filter(|r| r.level == tau) {
            assert!(r.mean_score >= oracle[j].mean_score - 3.0 * oracle[j].standard_error, "{}", r.algorithm);
        }
    }
    // post-processed predictions
    for (_, m) in &out.predictions {
        assert!(m.rows().all(|r| r[0] >= 0.0 && r.windows(2).all(|w| w[0] <= w[1])));
    }
    // raw importance for the forest and boosting bases, stacked for their combiners
    let kinds: Vec<(Setting, &str)> = out.importance.iter().map(|r| (r.setting, r.model.as_str())).collect();
    assert_eq!(
        kinds,
        vec![
            (Setting::RawFeatures, "quantile_forest"),
            (Setting::RawFeatures, "gradient_boost_pinball"),
            (Setting::StackedPredictions, "stack_quantile_forest"),
            (Setting::StackedPredictions, "stack_gradient_boost_pinball"),
        ]
    );
    for rep in &out.importance {
        for tau in cfg.levels.iter() {
            let mut ranks: Vec<usize> = rep.at_level(tau).map(|r| r.rank).collect();
            ranks.sort_unstable();
            assert_eq!(ranks[0], 1);
            assert!(rep.at_level(tau).all(|r| r.value >= 0.0));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&out, dir.path()).unwrap();
    for f in &files {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(read_scores_json(dir.path().join("scores.json")).unwrap(), out.scores);
    let csv = std::fs::read(dir.path().join("scores.csv")).unwrap();
    let back = ScoreTable::read_csv(csv.as_slice(), "linear_pinball").unwrap();
    assert_eq!(back, out.scores);
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("# benchmark=linear_pinball\n"));
    assert!(text.contains(&format!("# config_hash={}\n", cfg.hash())));
}

#[test]
fn empty_table_is_refused_before_writing() {
    let cfg = spatial_config(10);
    let mut out = run_experiment(&{
        let mut c = cfg.clone();
        c.bases = vec![LearnerSpec::default_for(LearnerKind::LinearPinball, 0)];
        c.combiners.clear();
        c
    })
    .unwrap();
    out.scores.rows.clear();
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("report");
    assert!(matches!(emit_report(&out, &target), Err(Error::EmptyInput)));
    assert!(!target.exists());
}

#[test]
fn csv_sources_match_in_memory_generation() {
    let params = SpatialParams { n_stations: 12, n_months: 6, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let generated = generate_spatial(&params, 77).unwrap();
    generated.write_dir(dir.path(), &QuantileLevelGrid::quick()).unwrap();
    let (expected, _) = generated.assemble().unwrap();

    let text = "[data]\nsource = \"site_grid\"\nsites = \"sites.csv\"\n\
                [[data.products]]\nname = \"sat_a\"\npath = \"grid_sat_a.csv\"\n\
                [[data.products]]\nname = \"sat_b\"\npath = \"grid_sat_b.csv\"\n";
    std::fs::write(dir.path().join("run.toml"), text).unwrap();
    let cfg = ExperimentConfig::from_file(dir.path().join("run.toml")).unwrap();
    let (loaded, truth) = quantstack::experiment::load_data(&cfg.data, 0).unwrap();
    assert!(truth.is_none());
    assert_eq!(loaded, expected);

    expected.write_csv(dir.path().join("samples.csv")).unwrap();
    let cfg = ExperimentConfig::from_toml(&format!(
        "[data]\nsource = \"csv\"\npath = {:?}\n",
        dir.path().join("samples.csv")
    ))
    .unwrap();
    assert_eq!(quantstack::experiment::load_data(&cfg.data, 0).unwrap().0, expected);
}

#[test]
fn stage_errors_name_the_stage() {
    let cfg = ExperimentConfig::from_toml("[data]\nsource = \"csv\"\npath = \"/nonexistent/x.csv\"\n").unwrap();
    match run_experiment(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "data"),
        other => panic!("unexpected {:?}", other.err()),
    }
}
