//! Numerical helpers shared by the learners.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;

/// Row-major predictor matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_dataset(d: &Dataset) -> Self {
        let p = d.feature_count();
        let data = d.rows().flat_map(|r| r.iter().copied()).collect();
        FeatureMatrix { n: d.len(), p, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        FeatureMatrix { n: rows.len(), p, data: rows.iter().flatten().copied().collect() }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.p + j]
    }
}

/// Z-score transform fitted on training data. Zero-variance columns are only
/// centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.n.max(1) as f64;
        let mut mean = vec![0.0; x.p];
        for i in 0..x.n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.p];
        for i in 0..x.n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| positive_or_one((s / n).sqrt())).collect();
        Standardizer { mean, scale }
    }

    pub fn fit_vector(y: &[f64]) -> (f64, f64) {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, positive_or_one(var.sqrt()))
    }

    pub fn apply(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }

    pub fn transform(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut data = vec![0.0; x.data.len()];
        for i in 0..x.n {
            self.apply(x.row(i), &mut data[i * x.p..(i + 1) * x.p]);
        }
        FeatureMatrix { n: x.n, p: x.p, data }
    }
}

fn positive_or_one(s: f64) -> f64 {
    if s > 1e-12 * (1.0 + s.abs()) && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Lower empirical τ-quantile `inf { y : F_n(y) >= τ }` of sorted data. This
/// is a minimiser of the mean pinball loss over constants.
pub fn empirical_quantile(sorted: &[f64], tau: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let k = ((tau * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

pub fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Pinball loss with the kink replaced by a quadratic of half-width `delta`
/// on residual `r = y - z`. It tends to the exact loss as `delta -> 0`.
#[inline]
pub fn smooth_pinball(r: f64, tau: f64, delta: f64) -> f64 {
    let w = if r >= 0.0 { tau } else { 1.0 - tau };
    let a = r.abs();
    if a <= delta {
        w * a * a / (2.0 * delta)
    } else {
        w * (a - delta / 2.0)
    }
}

/// Derivative of [`smooth_pinball`] with respect to the residual.
#[inline]
pub fn smooth_pinball_grad(r: f64, tau: f64, delta: f64) -> f64 {
    if r >= 0.0 {
        tau * (r / delta).min(1.0)
    } else {
        (1.0 - tau) * (r / delta).max(-1.0)
    }
}

/// Constant `c` minimising `sum_i smooth_pinball(r_i - c)`, with the minimal
/// loss.
pub fn smooth_pinball_argmin(residuals: &[f64], tau: f64, delta: f64) -> (f64, f64) {
    debug_assert!(!residuals.is_empty());
    let (mut lo, mut hi) = residuals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    if hi - lo == 0.0 {
        return (lo, 0.0);
    }
    lo -= delta;
    hi += delta;
    // sum of psi(r - c) is nonincreasing in c; bisect for its zero
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d: f64 = residuals.iter().map(|&r| smooth_pinball_grad(r - mid, tau, delta)).sum();
        if d > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let loss_at = |c: f64| residuals.iter().map(|&r| smooth_pinball(r - c, tau, delta)).sum::<f64>();
    let (l_lo, l_hi) = (loss_at(lo), loss_at(hi));
    if l_lo <= l_hi {
        (lo, l_lo)
    } else {
        (hi, l_hi)
    }
}

/// Mixes a seed with stream identifiers (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &s in stream {
        h = h.wrapping_add(s).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::pinball;
    use proptest::prelude::*;

    #[test]
    fn empirical_quantile_is_lower_quantile() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&s, 0.5), 2.0);
        assert_eq!(empirical_quantile(&s, 0.51), 3.0);
        assert_eq!(empirical_quantile(&s, 0.01), 1.0);
        assert_eq!(empirical_quantile(&s, 0.99), 4.0);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&ten, 0.3), 3.0);
    }

    #[test]
    fn smooth_loss_matches_exact_outside_band() {
        let (tau, delta) = (0.3, 0.01);
        for r in [-5.0, -0.5, 0.5, 5.0] {
            let exact = pinball(0.0, r, tau);
            assert!((smooth_pinball(r, tau, delta) - exact).abs() <= delta / 2.0 + 1e-15);
        }
        assert_eq!(smooth_pinball(0.0, tau, delta), 0.0);
    }

    #[test]
    fn seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, &[0, 0]), derive_seed(1, &[0, 1]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
        assert_eq!(derive_seed(5, &[3, 4]), derive_seed(5, &[3, 4]));
    }

    proptest! {
        #[test]
        fn empirical_quantile_minimises_pinball(v in proptest::collection::vec(-10f64..10.0, 1..60), tau in 0.01f64..0.99) {
            let s = sorted_copy(&v);
            let q = empirical_quantile(&s, tau);
            let score = |c: f64| v.iter().map(|&y| pinball(c, y, tau)).sum::<f64>();
            let best = v.iter().map(|&c| score(c)).fold(f64::INFINITY, f64::min);
            prop_assert!(score(q) <= best + 1e-9);
        }

        #[test]
        fn smooth_argmin_beats_neighbours(v in proptest::collection::vec(-10f64..10.0, 1..60), tau in 0.01f64..0.99, delta in 1e-4f64..1.0) {
            let (c, loss) = smooth_pinball_argmin(&v, tau, delta);
            let at = |c: f64| v.iter().map(|&r| smooth_pinball(r - c, tau, delta)).sum::<f64>();
            prop_assert!((at(c) - loss).abs() <= 1e-9 * (1.0 + loss));
            for step in [1e-3, 1e-2, 0.1, 1.0] {
                prop_assert!(loss <= at(c + step) + 1e-9);
                prop_assert!(loss <= at(c - step) + 1e-9);
            }
        }
    }
}
