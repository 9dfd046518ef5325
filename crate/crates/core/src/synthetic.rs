//! Synthetic data with closed-form conditional quantiles.
//!
//! Every target is `Y = max(0, m + s * eta)` (censored Gaussian) or
//! `Y = m * exp(s * eta - s^2 / 2)` (log-normal) with `eta ~ N(0, 1)`. The
//! generators record `(m, s)` for every sample in a [`SyntheticTruth`], from
//! which the exact conditional quantile at any level follows.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{assemble_samples, write_grid_csv, write_site_csv, GaugeSite, GridRecord, Product, SiteRecord};
use crate::learners::common::derive_seed;
use crate::prediction::PredictionMatrix;
use crate::scoring::{mean_pinball, QuantileLevelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    LogNormal,
}

pub fn standard_normal_quantile(tau: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(tau)
}

impl NoiseFamily {
    /// The τ-quantile of `Y` given location `m` and scale `s`.
    pub fn quantile(self, m: f64, s: f64, tau: f64) -> f64 {
        if s == 0.0 {
            return m.max(0.0);
        }
        let z = standard_normal_quantile(tau);
        match self {
            NoiseFamily::Gaussian => (m + s * z).max(0.0),
            NoiseFamily::LogNormal => m * (s * z - 0.5 * s * s).exp(),
        }
    }

    pub fn draw<R: Rng>(self, m: f64, s: f64, rng: &mut R) -> f64 {
        let eta: f64 = rng.sample(StandardNormal);
        match self {
            NoiseFamily::Gaussian => (m + s * eta).max(0.0),
            NoiseFamily::LogNormal => m * (s * eta - 0.5 * s * s).exp(),
        }
    }
}

/// Distribution parameters of every sample, aligned with a dataset's rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub family: NoiseFamily,
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
}

impl SyntheticTruth {
    pub fn len(&self) -> usize {
        self.location.len()
    }

    pub fn is_empty(&self) -> bool {
        self.location.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> SyntheticTruth {
        SyntheticTruth {
            family: self.family,
            location: indices.iter().map(|&i| self.location[i]).collect(),
            scale: indices.iter().map(|&i| self.scale[i]).collect(),
        }
    }

    /// True conditional quantiles, one row per sample.
    pub fn quantiles(&self, levels: &QuantileLevelGrid) -> PredictionMatrix {
        let rows: Vec<Vec<f64>> = self
            .location
            .iter()
            .zip(&self.scale)
            .map(|(&m, &s)| levels.iter().map(|t| self.family.quantile(m, s, t)).collect())
            .collect();
        PredictionMatrix::from_rows(levels.clone(), &rows).expect("finite quantiles")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, data: &Dataset, levels: &QuantileLevelGrid) -> Result<()> {
        if data.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: data.len() });
        }
        let q = self.quantiles(levels);
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["station_id".to_string(), "time_index".into(), "location".into(), "scale".into()];
        header.extend(levels.iter().map(|t| format!("q{t}")));
        w.write_record(&header)?;
        for (i, s) in data.samples().iter().enumerate() {
            let mut rec = vec![s.station_id.clone(), s.time_index.to_string()];
            rec.push(self.location[i].to_string());
            rec.push(self.scale[i].to_string());
            rec.extend(q.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }
}

/// Mean pinball of the true quantiles at each level, with its standard error.
pub fn oracle_scores(truth: &SyntheticTruth, observed: &[f64], levels: &QuantileLevelGrid) -> Result<Vec<(f64, f64)>> {
    let q = truth.quantiles(levels);
    levels
        .iter()
        .enumerate()
        .map(|(j, tau)| {
            let col = q.column(j);
            let mean = mean_pinball(&col, observed, tau)?;
            let n = observed.len() as f64;
            let var = col
                .iter()
                .zip(observed)
                .map(|(&z, &y)| (crate::scoring::pinball(z, y, tau) - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            Ok((mean, (var / n).sqrt()))
        })
        .collect()
}

/// `y = 10 + 5 x1 + (1 + x1) eta` with `x1, x2 ~ U(0, 1)`; `x2` is noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeteroscedasticParams {
    pub n_samples: usize,
    pub noise_features: usize,
}

impl Default for HeteroscedasticParams {
    fn default() -> Self {
        HeteroscedasticParams { n_samples: 15_000, noise_features: 1 }
    }
}

pub fn heteroscedastic(params: &HeteroscedasticParams, seed: u64) -> Result<(Dataset, SyntheticTruth)> {
    if params.n_samples == 0 {
        return Err(Error::Invalid("n_samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 1 + params.noise_features;
    let mut rows = Vec::with_capacity(params.n_samples);
    let mut targets = Vec::with_capacity(params.n_samples);
    let mut truth = SyntheticTruth { family: NoiseFamily::Gaussian, location: Vec::new(), scale: Vec::new() };
    for _ in 0..params.n_samples {
        let row: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
        let (m, s) = (10.0 + 5.0 * row[0], 1.0 + row[0]);
        targets.push(truth.family.draw(m, s, &mut rng));
        truth.location.push(m);
        truth.scale.push(s);
        rows.push(row);
    }
    let names = (1..=p).map(|k| format!("x{k}")).collect();
    Ok((Dataset::from_rows(names, rows, targets)?, truth))
}

/// A "satellite" product observing the truth field with bias and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub name: String,
    pub gain: f64,
    pub bias: f64,
    /// Standard deviation of the multiplicative error.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialParams {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub grid_spacing: f64,
    pub n_stations: usize,
    pub n_months: usize,
    pub family: NoiseFamily,
    /// Noise scale relative to the location, `s = noise_scale * m`.
    pub noise_scale: f64,
    pub products: Vec<ProductSpec>,
    /// Probability that a grid value is reported missing.
    pub missing_fraction: f64,
}

impl Default for SpatialParams {
    fn default() -> Self {
        SpatialParams {
            lon_min: -100.0,
            lon_max: -90.0,
            lat_min: 35.0,
            lat_max: 42.0,
            grid_spacing: 0.5,
            n_stations: 150,
            n_months: 24,
            family: NoiseFamily::Gaussian,
            noise_scale: 0.3,
            products: vec![
                ProductSpec { name: "sat_a".into(), gain: 0.9, bias: 5.0, noise: 0.1 },
                ProductSpec { name: "sat_b".into(), gain: 1.15, bias: -4.0, noise: 0.25 },
            ],
            missing_fraction: 0.0,
        }
    }
}

impl SpatialParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if !(self.lon_max > self.lon_min && self.lat_max > self.lat_min) {
            return bad("domain extent must be non-empty");
        }
        if !(self.grid_spacing > 0.0) {
            return bad("grid_spacing must be positive");
        }
        let nx = ((self.lon_max - self.lon_min) / self.grid_spacing).floor() as usize + 1;
        let ny = ((self.lat_max - self.lat_min) / self.grid_spacing).floor() as usize + 1;
        if nx < 2 || ny < 2 {
            return bad("grid must have at least two points along each axis");
        }
        if self.n_stations == 0 || self.n_months == 0 {
            return bad("n_stations and n_months must be positive");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and non-negative");
        }
        if self.products.is_empty() {
            return bad("at least one product is required");
        }
        if self.products.iter().any(|p| !(p.noise >= 0.0 && p.gain.is_finite() && p.bias.is_finite())) {
            return bad("product gain, bias and noise must be finite, noise non-negative");
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return bad("missing_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

pub fn elevation(lon: f64, lat: f64) -> f64 {
    800.0 + 500.0 * (0.7 * lon).sin() * (0.9 * lat).cos()
}

/// Location of the target distribution at a point and month.
pub fn truth_field(lon: f64, lat: f64, month: i64) -> f64 {
    let season = 2.0 * PI * month as f64 / 12.0;
    60.0 + 25.0 * (season + 0.3 * lon).sin() + 12.0 * (0.5 * lat).cos() * (0.4 * lon).sin()
        - 0.015 * (elevation(lon, lat) - 800.0)
}

pub struct SpatialData {
    pub sites: Vec<SiteRecord>,
    pub products: Vec<Product>,
    /// Keyed by `(station_id, month)`.
    pub truth: HashMap<(String, i64), (f64, f64)>,
    pub family: NoiseFamily,
}

impl SpatialData {
    /// Assembles the distance-weighted dataset and aligns the truth with it.
    pub fn assemble(&self) -> Result<(Dataset, SyntheticTruth)> {
        let report = assemble_samples(&self.sites, &self.products)?;
        let (mut location, mut scale) = (Vec::new(), Vec::new());
        for s in report.dataset.samples() {
            let (m, sd) = self.truth[&(s.station_id.clone(), s.time_index)];
            location.push(m);
            scale.push(sd);
        }
        Ok((report.dataset, SyntheticTruth { family: self.family, location, scale }))
    }

    /// Writes `sites.csv`, `grid_<product>.csv` and `truth.csv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>, levels: &QuantileLevelGrid) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_site_csv(dir.join("sites.csv"), &self.sites)?;
        for p in &self.products {
            write_grid_csv(dir.join(format!("grid_{}.csv", p.name)), p)?;
        }
        let (data, truth) = self.assemble()?;
        truth.write_csv(dir.join("truth.csv"), &data, levels)
    }
}

pub fn generate_spatial(params: &SpatialParams, seed: u64) -> Result<SpatialData> {
    params.validate()?;
    let nx = ((params.lon_max - params.lon_min) / params.grid_spacing).floor() as usize + 1;
    let ny = ((params.lat_max - params.lat_min) / params.grid_spacing).floor() as usize + 1;
    let grid: Vec<(u64, f64, f64)> = (0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (iy, ix)))
        .map(|(iy, ix)| {
            let lon = params.lon_min + ix as f64 * params.grid_spacing;
            let lat = params.lat_min + iy as f64 * params.grid_spacing;
            ((iy * nx + ix) as u64, lon, lat)
        })
        .collect();
    let lon_hi = params.lon_min + (nx - 1) as f64 * params.grid_spacing;
    let lat_hi = params.lat_min + (ny - 1) as f64 * params.grid_spacing;

    let mut products = Vec::with_capacity(params.products.len());
    for (k, spec) in params.products.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, k as u64]));
        let mut records = Vec::with_capacity(grid.len() * params.n_months);
        for month in 0..params.n_months as i64 {
            for &(grid_id, lon, lat) in &grid {
                let m = truth_field(lon, lat, month);
                let eps: f64 = rng.sample(StandardNormal);
                let missing = rng.gen::<f64>() < params.missing_fraction;
                let value = (spec.bias + spec.gain * m * (1.0 + spec.noise * eps)).max(0.0);
                records.push(GridRecord { grid_id, lon, lat, month, value: (!missing).then_some(value) });
            }
        }
        products.push(Product { name: spec.name.clone(), records });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
    let width = params.n_stations.to_string().len().max(4);
    let mut sites = Vec::with_capacity(params.n_stations * params.n_months);
    let mut truth = HashMap::new();
    for i in 0..params.n_stations {
        let lon = rng.gen_range(params.lon_min..=lon_hi);
        let lat = rng.gen_range(params.lat_min..=lat_hi);
        let site = GaugeSite { station_id: format!("S{:0width$}", i + 1), lon, lat, elevation: elevation(lon, lat) };
        for month in 0..params.n_months as i64 {
            let m = truth_field(lon, lat, month);
            let s = params.noise_scale * m;
            let target = params.family.draw(m, s, &mut rng);
            truth.insert((site.station_id.clone(), month), (m, s));
            sites.push(SiteRecord { site: site.clone(), month, target: Some(target) });
        }
    }
    Ok(SpatialData { sites, products, truth, family: params.family })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_table_values() {
        // standard normal table: z_0.9 = 1.2816, z_0.975 = 1.9600
        assert!((standard_normal_quantile(0.9) - 1.281_551_565_5).abs() < 1e-8);
        assert!((standard_normal_quantile(0.975) - 1.959_963_985).abs() < 1e-8);
        assert_eq!(standard_normal_quantile(0.5), 0.0);
    }

    #[test]
    fn gaussian_truth() {
        let t = SyntheticTruth { family: NoiseFamily::Gaussian, location: vec![20.0, 7.0], scale: vec![2.0, 0.5] };
        let q = t.quantiles(&QuantileLevelGrid::new(vec![0.5, 0.9]).unwrap());
        assert_eq!(q.row(0)[0], 20.0);
        assert!((q.row(0)[1] - (20.0 + 1.2816 * 2.0)).abs() < 1e-3);
        assert!((q.row(1)[1] - (7.0 + 1.2816 * 0.5)).abs() < 1e-3);
    }

    #[test]
    fn zero_noise_rows_are_constant() {
        let params = SpatialParams { noise_scale: 0.0, n_stations: 5, n_months: 3, ..Default::default() };
        let data = generate_spatial(&params, 4).unwrap();
        let (d, truth) = data.assemble().unwrap();
        let q = truth.quantiles(&QuantileLevelGrid::standard());
        for (i, row) in q.rows().enumerate() {
            assert!(row.iter().all(|&v| v == truth.location[i]));
            assert_eq!(d.sample(i).target, truth.location[i]);
        }
    }

    #[test]
    fn lognormal_median_and_mean() {
        let f = NoiseFamily::LogNormal;
        let (m, s) = (30.0, 0.4);
        assert!((f.quantile(m, s, 0.5) - m * (-0.08f64).exp()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mean = (0..200_000).map(|_| f.draw(m, s, &mut rng)).sum::<f64>() / 200_000.0;
        assert!((mean - m).abs() < 0.1);
    }

    #[test]
    fn quantile_rows_nondecreasing() {
        let (_, truth) = heteroscedastic(&HeteroscedasticParams { n_samples: 200, noise_features: 1 }, 3).unwrap();
        let q = truth.quantiles(&QuantileLevelGrid::standard());
        assert!(q.rows().all(|r| r.windows(2).all(|w| w[0] <= w[1])));
    }

    #[test]
    fn same_seed_same_output() {
        let params = SpatialParams { n_stations: 8, n_months: 4, missing_fraction: 0.05, ..Default::default() };
        let levels = QuantileLevelGrid::quick();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            generate_spatial(&params, 11).unwrap().write_dir(d.path(), &levels).unwrap();
        }
        for f in ["sites.csv", "grid_sat_a.csv", "grid_sat_b.csv", "truth.csv"] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let (a, _) = heteroscedastic(&HeteroscedasticParams::default(), 5).unwrap();
        let (b, _) = heteroscedastic(&HeteroscedasticParams::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_coverage_of_truth() {
        let (d, truth) = heteroscedastic(&HeteroscedasticParams { n_samples: 20_000, noise_features: 0 }, 9).unwrap();
        let q = truth.quantiles(&QuantileLevelGrid::quick());
        let y = d.targets();
        for (j, tau) in [0.1, 0.5, 0.9].into_iter().enumerate() {
            let c = crate::scoring::coverage(&q.column(j), &y).unwrap();
            assert!((c - tau).abs() < 0.015, "{tau}: {c}");
        }
    }
}
