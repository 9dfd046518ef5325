use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use quantstack::ensemble::{fit_stack, Combiner, EnsembleSpec};
use quantstack::features::{distance_weight, GridNeighborhood};
use quantstack::learners::{self, LearnerParams, LearnerSpec};
use quantstack::postprocess::postprocess;
use quantstack::scoring::mean_pinball;
use quantstack::{LearnerKind, QuantileLevelGrid};
use quantstack_bench::{rough_matrix, sample};

fn bench_scoring(c: &mut Criterion) {
    let d = sample(100_000, 0, 1);
    let y = d.targets();
    let z: Vec<f64> = y.iter().map(|v| v * 0.9 + 1.0).collect();
    c.bench_function("mean_pinball 100k", |b| b.iter(|| mean_pinball(black_box(&z), black_box(&y), 0.9)));

    let n = GridNeighborhood {
        grid_ids: [1, 2, 3, 4],
        distances: [0.11, 0.23, 0.31, 0.47],
        grid_values: [12.0, 40.0, 7.5, 0.0],
    };
    c.bench_function("distance_weight", |b| b.iter(|| distance_weight(black_box(&n))));

    let m = rough_matrix(10_000);
    c.bench_function("postprocess 10k x 15", |b| b.iter(|| postprocess(black_box(m.clone()))));
}

fn spec(kind: LearnerKind) -> LearnerSpec {
    let mut s = LearnerSpec::default_for(kind, 7);
    match &mut s.params {
        LearnerParams::QuantileForest(p) => p.n_trees = 50,
        LearnerParams::GradientBoostPinball(p) => p.n_rounds = 100,
        LearnerParams::NeuralPinball(p) => p.epochs = 100,
        LearnerParams::LinearPinball(_) => {}
    }
    s
}

fn bench_learners(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    let levels = QuantileLevelGrid::quick();
    for n in [1_000, 4_000] {
        let d = sample(n, 3, 2);
        for kind in LearnerKind::ALL {
            let s = spec(kind);
            group.bench_with_input(BenchmarkId::new(kind.as_str(), n), &d, |b, d| {
                b.iter(|| learners::fit(&s, d, &levels).unwrap())
            });
        }
    }
    group.finish();

    let d = sample(4_000, 3, 3);
    let test = sample(2_000, 3, 4);
    let forest = learners::fit(&spec(LearnerKind::QuantileForest), &d, &QuantileLevelGrid::standard()).unwrap();
    c.bench_function("forest predict 2k x 15", |b| b.iter(|| learners::predict(&forest, black_box(&test)).unwrap()));
}

fn bench_stack(c: &mut Criterion) {
    let mut group = c.benchmark_group("stack");
    group.sample_size(10);
    let d = sample(2_000, 3, 5);
    let ens = EnsembleSpec {
        base_specs: LearnerKind::ALL.iter().map(|&k| spec(k)).collect(),
        combiner: Combiner::Learner { spec: spec(LearnerKind::LinearPinball) },
        seed: 1,
    };
    let levels = QuantileLevelGrid::quick();
    group.bench_function("fit_stack 2k", |b| b.iter(|| fit_stack(&ens, &d, &levels).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_scoring, bench_learners, bench_stack);
criterion_main!(benches);
