//! Quantile regression network: one tanh hidden layer, a linear output, full
//! batch Adam on the smoothed pinball loss. Inputs and target are z-scored
//! with training statistics. The output layer starts at the best constant
//! (zero weights, bias at the empirical τ-quantile) and the best epoch by
//! exact training pinball loss is kept.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::common::{empirical_quantile, smooth_pinball_grad, sorted_copy, FeatureMatrix, Standardizer};
use super::invalid;
use crate::error::Result;
use crate::scoring::pinball;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Final smoothing half-width in standardised target units; training
    /// starts 100 times wider and shrinks over the first half of the epochs.
    pub smoothing: f64,
}

impl Default for NeuralParams {
    fn default() -> Self {
        NeuralParams { hidden: 16, epochs: 200, learning_rate: 0.05, smoothing: 1e-3 }
    }
}

impl NeuralParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(invalid("hidden", "layer size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(self.smoothing > 0.0) {
            return Err(invalid("smoothing", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    pub tau: f64,
    pub standardizer: Standardizer,
    pub y_mean: f64,
    pub y_scale: f64,
    pub hidden: usize,
    /// Row-major `hidden x p` input weights.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub history: Vec<f64>,
}

#[derive(Clone)]
struct Params {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl Params {
    fn flat_len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for v in self.w1.iter_mut().chain(self.b1.iter_mut()).chain(self.w2.iter_mut()).chain(std::iter::once(&mut self.b2)) {
            f(k, v);
            k += 1;
        }
    }
}

fn forward(p: &Params, hidden: usize, z: &[f64], h: &mut [f64]) -> f64 {
    let d = z.len();
    let mut out = p.b2;
    for j in 0..hidden {
        let w = &p.w1[j * d..(j + 1) * d];
        let a = p.b1[j] + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        h[j] = a.tanh();
        out += p.w2[j] * h[j];
    }
    out
}

impl NeuralModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let p = Params { w1: self.w1.clone(), b1: self.b1.clone(), w2: self.w2.clone(), b2: self.b2 };
        let mut z = vec![0.0; x.p];
        let mut h = vec![0.0; self.hidden];
        (0..x.n)
            .map(|i| {
                self.standardizer.apply(x.row(i), &mut z);
                self.y_mean + self.y_scale * forward(&p, self.hidden, &z, &mut h)
            })
            .collect()
    }
}

pub fn fit(params: &NeuralParams, x: &FeatureMatrix, y: &[f64], tau: f64, seed: u64) -> Result<NeuralModel> {
    let (n, d, hidden) = (x.n, x.p, params.hidden);
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let (y_mean, y_scale) = Standardizer::fit_vector(y);
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1.0 / (d.max(1) as f64).sqrt()).expect("valid normal");
    let mut p = Params {
        w1: (0..hidden * d).map(|_| init.sample(&mut rng)).collect(),
        b1: vec![0.0; hidden],
        w2: vec![0.0; hidden],
        b2: empirical_quantile(&sorted_copy(&ys), tau),
    };

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; p.flat_len()];
    let mut v = vec![0.0; p.flat_len()];
    let mut grad = p.clone();
    let mut h = vec![0.0; hidden];
    let anneal = (params.epochs / 2).max(1) as f64;
    let mut history = Vec::with_capacity(params.epochs + 1);
    let mut best: Option<(f64, Params)> = None;

    for epoch in 0..=params.epochs {
        let progress = (epoch as f64 / anneal).min(1.0);
        let delta = params.smoothing * 100f64.powf(1.0 - progress);
        grad.w1.iter_mut().for_each(|g| *g = 0.0);
        grad.b1.iter_mut().for_each(|g| *g = 0.0);
        grad.w2.iter_mut().for_each(|g| *g = 0.0);
        grad.b2 = 0.0;
        let mut exact = 0.0;
        for i in 0..n {
            let zi = z.row(i);
            let out = forward(&p, hidden, zi, &mut h);
            exact += pinball(out, ys[i], tau);
            // d loss / d out = -psi(y - out)
            let g_out = -smooth_pinball_grad(ys[i] - out, tau, delta) / n as f64;
            if g_out == 0.0 {
                continue;
            }
            grad.b2 += g_out;
            for j in 0..hidden {
                grad.w2[j] += g_out * h[j];
                let g_pre = g_out * p.w2[j] * (1.0 - h[j] * h[j]);
                if g_pre != 0.0 {
                    grad.b1[j] += g_pre;
                    for (gw, zv) in grad.w1[j * d..(j + 1) * d].iter_mut().zip(zi) {
                        *gw += g_pre * zv;
                    }
                }
            }
        }
        // reported in original target units
        let exact = exact / n as f64 * y_scale;
        history.push(exact);
        if best.as_ref().is_none_or(|(b, _)| exact < *b) {
            best = Some((exact, p.clone()));
        }
        if epoch == params.epochs {
            break;
        }
        let t = (epoch + 1) as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let mut flat_grad = Vec::with_capacity(m.len());
        grad.clone().for_each_mut(|_, g| flat_grad.push(*g));
        p.for_each_mut(|k, w| {
            let g = flat_grad[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            *w -= params.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        });
    }
    let (_, p) = best.expect("at least one epoch evaluated");
    Ok(NeuralModel {
        tau,
        standardizer,
        y_mean,
        y_scale,
        hidden,
        w1: p.w1,
        b1: p.b1,
        w2: p.w2,
        b2: p.b2,
        history,
    })
}
