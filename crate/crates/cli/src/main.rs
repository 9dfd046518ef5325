use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use quantstack::dataset::load_standard_csv;
use quantstack::ensemble::{fit_stack, predict_stack, Combiner, EnsembleSpec, StackFamily, StackedModel};
use quantstack::experiment::{emit_report, run_experiment, ExperimentConfig, Seeds};
use quantstack::features::{assemble_samples, read_grid_csv, read_site_csv};
use quantstack::importance::{self, raw_feature_importance, stacked_importance};
use quantstack::learners::{self, LearnerSpec};
use quantstack::postprocess::postprocess;
use quantstack::synthetic::{generate_spatial, heteroscedastic, HeteroscedasticParams, SpatialParams};
use quantstack::{Dataset, LearnerKind, PredictionMatrix, QuantileLevelGrid, ScoreTable, TrainedModel};

#[derive(Parser, Debug)]
#[command(name = "quantstack", version, about = "Quantile regression stacking for probabilistic prediction")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with its true conditional quantiles.
    Generate(GenerateArgs),
    /// Build distance-weighted samples from gauge and grid CSVs.
    Features(FeaturesArgs),
    /// Fit one learner, or a stacked ensemble when --combiner is given.
    Train(TrainArgs),
    /// Predict quantiles with a saved model, stack or run directory.
    Predict(PredictArgs),
    /// Score prediction files against observed targets.
    Evaluate(EvaluateArgs),
    /// Predictor importance of a saved tree-based model or stack.
    Importance(ImportanceArgs),
    /// Run the full experiment described by a config file.
    Run(RunArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum GeneratorKind {
    Spatial,
    Heteroscedastic,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = GeneratorKind::Spatial)]
    kind: GeneratorKind,
    /// TOML file with generator parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated levels for truth.csv.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    sites: PathBuf,
    /// Gridded product as NAME=PATH; repeat for each product.
    #[arg(long = "grid", required = true)]
    grids: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Sample CSV in the standard layout.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "linear_pinball")]
    learner: String,
    /// TOML learner spec; overrides --learner.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mean, median, best or a learner kind.
    #[arg(long)]
    combiner: Option<String>,
    /// Comma-separated base learner kinds for a stack.
    #[arg(long)]
    bases: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file, or directory for a stack.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model file, stack directory or run `models` directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Skip clamping and rearrangement.
    #[arg(long)]
    raw: bool,
    /// Output CSV, or directory when predicting a run's models.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Sample CSV holding the observed targets.
    #[arg(long)]
    data: PathBuf,
    /// Prediction file as NAME=PATH; repeat for each algorithm.
    #[arg(long = "pred", required = true)]
    predictions: Vec<String>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sample CSV whose header names the predictors.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Master seed; replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_models: bool,
}

fn parse_levels(text: Option<&str>, default: QuantileLevelGrid) -> Result<QuantileLevelGrid> {
    match text {
        Some(t) => QuantileLevelGrid::parse(t).with_context(|| format!("bad level list `{t}`")),
        None => Ok(default),
    }
}

fn name_path(arg: &str) -> Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => bail!("expected NAME=PATH, got `{arg}`"),
    }
}

fn load_samples(path: &Path) -> Result<Dataset> {
    let report = load_standard_csv(path).with_context(|| format!("reading {}", path.display()))?;
    if report.dropped_missing > 0 || !report.rejected.is_empty() {
        eprintln!(
            "{}: dropped {} rows with missing values, rejected {}",
            path.display(),
            report.dropped_missing,
            report.rejected.len()
        );
        for r in report.rejected.iter().take(5) {
            eprintln!("  line {}: {}", r.line, r.reason);
        }
    }
    Ok(report.dataset)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let levels = parse_levels(args.levels.as_deref(), QuantileLevelGrid::standard())?;
    let text = args.config.as_ref().map(std::fs::read_to_string).transpose()?;
    std::fs::create_dir_all(&args.out)?;
    match args.kind {
        GeneratorKind::Spatial => {
            let params: SpatialParams = text.map(|t| toml::from_str(&t)).transpose()?.unwrap_or_default();
            let data = generate_spatial(&params, args.seed)?;
            data.write_dir(&args.out, &levels)?;
            let (samples, _) = data.assemble()?;
            samples.write_csv(args.out.join("samples.csv"))?;
            println!(
                "wrote {} site-months for {} stations and {} products to {}",
                samples.len(),
                params.n_stations,
                params.products.len(),
                args.out.display()
            );
        }
        GeneratorKind::Heteroscedastic => {
            let params: HeteroscedasticParams = text.map(|t| toml::from_str(&t)).transpose()?.unwrap_or_default();
            let (samples, truth) = heteroscedastic(&params, args.seed)?;
            samples.write_csv(args.out.join("samples.csv"))?;
            truth.write_csv(args.out.join("truth.csv"), &samples, &levels)?;
            println!("wrote {} samples to {}", samples.len(), args.out.display());
        }
    }
    Ok(())
}

fn features(args: FeaturesArgs) -> Result<()> {
    let sites = read_site_csv(&args.sites)?;
    let products = args
        .grids
        .iter()
        .map(|g| {
            let (name, path) = name_path(g)?;
            read_grid_csv(&path, &name).with_context(|| format!("reading {}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = assemble_samples(&sites, &products)?;
    report.dataset.write_csv(&args.out)?;
    println!(
        "{} samples, {} site-months without target, {} skipped",
        report.dataset.len(),
        report.missing_targets,
        report.skipped.len()
    );
    for s in report.skipped.iter().take(5) {
        eprintln!("  {} month {}: {}", s.station_id, s.month, s.reason);
    }
    Ok(())
}

fn learner_spec(kind: &str, seed: u64) -> Result<LearnerSpec> {
    let kind: LearnerKind = kind.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(LearnerSpec::default_for(kind, seed))
}

fn train(args: TrainArgs) -> Result<()> {
    let data = load_samples(&args.data)?;
    let levels = parse_levels(args.levels.as_deref(), QuantileLevelGrid::standard())?;
    if let Some(c) = &args.combiner {
        let combiner = match c.as_str() {
            "mean" => Combiner::Mean,
            "median" => Combiner::Median,
            "best" => Combiner::Best,
            kind => Combiner::Learner { spec: learner_spec(kind, args.seed)? },
        };
        let base_specs = match &args.bases {
            Some(list) => list.split(',').map(|k| learner_spec(k.trim(), args.seed)).collect::<Result<_>>()?,
            None => LearnerKind::ALL.iter().map(|&k| LearnerSpec::default_for(k, args.seed)).collect(),
        };
        let spec = EnsembleSpec { base_specs, combiner, seed: args.seed };
        let model = fit_stack(&spec, &data, &levels)?;
        model.save(&args.out)?;
        println!("saved stack `{}` over {} bases to {}", model.name, model.base_models.len(), args.out.display());
        return Ok(());
    }
    let spec = match &args.config {
        Some(p) => toml::from_str::<LearnerSpec>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => learner_spec(&args.learner, args.seed)?,
    };
    let model = learners::fit(&spec, &data, &levels)?;
    model.save(&args.out)?;
    println!("saved {} ({}) fit on {} samples to {}", spec.name, spec.kind(), data.len(), args.out.display());
    Ok(())
}

fn finish(m: PredictionMatrix, raw: bool) -> PredictionMatrix {
    if raw {
        m
    } else {
        postprocess(m)
    }
}

fn predict(args: PredictArgs) -> Result<()> {
    let data = load_samples(&args.data)?;
    if args.model.join("family.json").exists() {
        let family = StackFamily::load(&args.model)?;
        let (bases, stacked) = family.predict_all(&data)?;
        std::fs::create_dir_all(&args.out)?;
        for (name, m) in bases.into_iter().chain(stacked) {
            finish(m, args.raw).write_csv(args.out.join(format!("{name}.csv")), Some(&data))?;
        }
        println!("wrote predictions of every algorithm to {}", args.out.display());
        return Ok(());
    }
    let m = if args.model.is_dir() {
        predict_stack(&StackedModel::load(&args.model)?, &data)?
    } else {
        learners::predict(&TrainedModel::load(&args.model)?, &data)?
    };
    finish(m, args.raw).write_csv(&args.out, Some(&data))?;
    println!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let data = load_samples(&args.data)?;
    let preds = args
        .predictions
        .iter()
        .map(|p| {
            let (name, path) = name_path(p)?;
            let m = PredictionMatrix::read_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            if m.n_rows() != data.len() {
                bail!("{} has {} rows, the data has {}", path.display(), m.n_rows(), data.len());
            }
            Ok((name, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let benchmark = args.benchmark.clone().unwrap_or_else(|| preds[0].0.clone());
    let table = ScoreTable::evaluate(&preds, &data.targets(), &benchmark)?;
    print_table(&table);
    if let Some(out) = &args.out {
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("benchmark".to_string(), benchmark);
        table.write_csv_file(out, &meta)?;
    }
    Ok(())
}

fn print_table(table: &ScoreTable) {
    println!("{:<32} {:>7} {:>12} {:>9} {:>9} {:>5}", "algorithm", "level", "mean_score", "skill", "coverage", "rank");
    for r in &table.rows {
        let skill = r.skill_vs_benchmark.map_or("-".to_string(), |s| format!("{s:.4}"));
        println!(
            "{:<32} {:>7} {:>12.5} {:>9} {:>9.4} {:>5}",
            r.algorithm, r.level, r.mean_score, skill, r.coverage, r.rank
        );
    }
}

fn predictor_names(data: Option<&Path>, p: usize) -> Result<Vec<String>> {
    match data {
        Some(path) => {
            let names = load_samples(path)?.feature_names().to_vec();
            if names.len() != p {
                bail!("{} has {} predictors, the model expects {p}", path.display(), names.len());
            }
            Ok(names)
        }
        None => Ok((1..=p).map(|j| format!("x{j}")).collect()),
    }
}

fn importance_cmd(args: ImportanceArgs) -> Result<()> {
    let mut reports = Vec::new();
    if args.model.is_dir() {
        let (bases, combiners, levels) = if args.model.join("family.json").exists() {
            let f = StackFamily::load(&args.model)?;
            (f.base_models.as_ref().clone(), f.combiners, f.levels)
        } else {
            let s = StackedModel::load(&args.model)?;
            (s.base_models.as_ref().clone(), vec![(s.name.clone(), s.combiner)], s.levels)
        };
        let p = bases.first().map_or(0, |b| b.feature_count);
        let names = predictor_names(args.data.as_deref(), p)?;
        for b in &bases {
            reports.extend(raw_feature_importance(b, &names)?);
        }
        let base_names: Vec<String> = bases.iter().map(|b| b.name().to_string()).collect();
        for (name, c) in &combiners {
            reports.extend(stacked_importance(name, c, &base_names, levels.levels())?);
        }
    } else {
        let model = TrainedModel::load(&args.model)?;
        let names = predictor_names(args.data.as_deref(), model.feature_count)?;
        match raw_feature_importance(&model, &names)? {
            Some(r) => reports.push(r),
            None => bail!("`{}` is a {} model; importance needs a forest or boosting model", model.name(), model.kind()),
        }
    }
    if reports.is_empty() {
        bail!("no tree-based model found in {}", args.model.display());
    }
    importance::write_csv_file(&args.out, &reports)?;
    println!("wrote {} importance tables to {}", reports.len(), args.out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = Seeds::from_master(seed);
    }
    if let Some(l) = &args.levels {
        cfg.levels = parse_levels(Some(l), cfg.levels.clone())?;
    }
    if args.no_models {
        cfg.write_models = false;
    }
    let out_dir = match (&args.out, &cfg.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => bail!("no output directory: pass --out or set out_dir in the config"),
    };
    let outcome = run_experiment(&cfg)?;
    let files = emit_report(&outcome, &out_dir)?;
    print_table(&outcome.scores);
    if let Some(oracle) = &outcome.oracle {
        for o in oracle {
            println!("oracle at {}: {:.5} (se {:.5})", o.level, o.mean_score, o.standard_error);
        }
    }
    println!("wrote {} files to {}", files.len(), out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Importance(a) => importance_cmd(a),
        Command::Run(a) => run(a),
    }
}
