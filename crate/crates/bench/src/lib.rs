//! Shared fixtures for the benchmarks in `benches/`.

use quantstack::synthetic::{heteroscedastic, HeteroscedasticParams};
use quantstack::{Dataset, PredictionMatrix, QuantileLevelGrid};

/// Heteroscedastic sample with one informative and `noise` irrelevant features.
pub fn sample(n: usize, noise: usize, seed: u64) -> Dataset {
    heteroscedastic(&HeteroscedasticParams { n_samples: n, noise_features: noise }, seed)
        .expect("valid generator parameters")
        .0
}

/// Deterministic matrix with crossings and negative values on the default grid.
pub fn rough_matrix(rows: usize) -> PredictionMatrix {
    let levels = QuantileLevelGrid::standard();
    let m = levels.len();
    let values = (0..rows * m).map(|k| ((k * 7919) % 211) as f64 - 30.0).collect();
    PredictionMatrix::new(levels, rows, values).expect("finite values")
}
