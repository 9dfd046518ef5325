//! Spatial predictors from gridded satellite products.
//!
//! For every gauge and product the four closest grid points are located, and
//! each grid value is turned into its own predictor by weighting it with its
//! normalised inverse squared distance:
//!
//! ```text
//! w_k = (1 / d_k^2) / sum_i (1 / d_i^2),    feature_k = w_k * PR_k
//! ```
//!
//! The four features of a product therefore sum to the classic IDW (power 2)
//! interpolant at the gauge. Distances are Euclidean in the coordinate plane.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};

/// Distance floor applied when a gauge coincides with a grid point.
pub const DISTANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeSite {
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub grid_id: u64,
    pub lon: f64,
    pub lat: f64,
    pub value: f64,
}

/// The four grid points closest to a gauge, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNeighborhood {
    pub grid_ids: [u64; 4],
    pub distances: [f64; 4],
    pub grid_values: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedFeatures {
    pub weighted_values: [f64; 4],
}

impl WeightedFeatures {
    pub fn sum(&self) -> f64 {
        self.weighted_values.iter().sum()
    }
}

fn planar_distance(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx).hypot(ay - by)
}

/// Indices into `points` of the four closest points, ordered by distance and
/// then by grid id.
fn nearest_four_indices(lon: f64, lat: f64, points: &[GridPoint]) -> Result<[(usize, f64); 4]> {
    if points.len() < 4 {
        return Err(Error::TooSmall { needed: 4, got: points.len() });
    }
    let key = |i: usize, d: f64| (d, points[i].grid_id);
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(5);
    for (i, p) in points.iter().enumerate() {
        let d = planar_distance(lon, lat, p.lon, p.lat);
        if best.len() == 4 {
            let (wi, wd) = best[3];
            if key(i, d).partial_cmp(&key(wi, wd)) != Some(std::cmp::Ordering::Less) {
                continue;
            }
        }
        let pos = best
            .iter()
            .position(|&(j, dj)| key(i, d).partial_cmp(&key(j, dj)) == Some(std::cmp::Ordering::Less))
            .unwrap_or(best.len());
        best.insert(pos, (i, d));
        best.truncate(4);
    }
    Ok([best[0], best[1], best[2], best[3]])
}

/// Finds the four grid points closest to `site`.
///
/// Ties are broken by ascending grid id. A zero distance is replaced by
/// [`DISTANCE_FLOOR`].
pub fn nearest_four(site: &GaugeSite, points: &[GridPoint]) -> Result<GridNeighborhood> {
    let idx = nearest_four_indices(site.lon, site.lat, points)?;
    Ok(GridNeighborhood {
        grid_ids: idx.map(|(i, _)| points[i].grid_id),
        distances: idx.map(|(_, d)| d.max(DISTANCE_FLOOR)),
        grid_values: idx.map(|(i, _)| points[i].value),
    })
}

/// Normalised inverse squared distance weights.
pub fn idw_weights(distances: &[f64; 4]) -> [f64; 4] {
    let inv = distances.map(|d| {
        let d = d.max(DISTANCE_FLOOR);
        1.0 / (d * d)
    });
    let total: f64 = inv.iter().sum();
    inv.map(|w| w / total)
}

/// Splits the IDW interpolant into one weighted value per neighbour.
pub fn distance_weight(n: &GridNeighborhood) -> WeightedFeatures {
    let w = idw_weights(&n.distances);
    WeightedFeatures { weighted_values: std::array::from_fn(|k| w[k] * n.grid_values[k]) }
}

/// One gauge observation in one month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site: GaugeSite,
    pub month: i64,
    pub target: Option<f64>,
}

/// One grid value of a product in one month. `value` is `None` when missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub grid_id: u64,
    pub lon: f64,
    pub lat: f64,
    pub month: i64,
    pub value: Option<f64>,
}

/// A gridded satellite product: a name and its monthly grid values.
#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub name: String,
    pub records: Vec<GridRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedSample {
    pub station_id: String,
    pub month: i64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AssembleReport {
    pub dataset: Dataset,
    /// Site-months without a target.
    pub missing_targets: usize,
    pub skipped: Vec<SkippedSample>,
}

/// Predictor names in sample layout: four weighted values per product, then
/// elevation.
pub fn feature_names(products: &[Product]) -> Vec<String> {
    let mut names: Vec<String> =
        products.iter().flat_map(|p| (1..=4).map(move |k| format!("{}_{k}", p.name))).collect();
    names.push("elevation".into());
    names
}

struct ProductIndex {
    points: Vec<GridPoint>,
    bounds: (f64, f64, f64, f64),
    values: HashMap<(u64, i64), Option<f64>>,
}

impl ProductIndex {
    fn new(p: &Product) -> Self {
        let mut coords: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        let mut values = HashMap::new();
        for r in &p.records {
            coords.entry(r.grid_id).or_insert((r.lon, r.lat));
            values.insert((r.grid_id, r.month), r.value);
        }
        let points: Vec<GridPoint> =
            coords.iter().map(|(&grid_id, &(lon, lat))| GridPoint { grid_id, lon, lat, value: 0.0 }).collect();
        let bounds = points.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.lon), b.max(p.lon), c.min(p.lat), d.max(p.lat)),
        );
        ProductIndex { points, bounds, values }
    }

    fn covers(&self, s: &GaugeSite) -> bool {
        let (x0, x1, y0, y1) = self.bounds;
        s.lon >= x0 && s.lon <= x1 && s.lat >= y0 && s.lat <= y1
    }
}

/// Builds one sample per site-month with a target.
///
/// Site-months outside any product's grid extent, or whose neighbourhood lacks
/// a value that month, are skipped and reported. Output is ordered by station
/// id, then month.
pub fn assemble_samples(sites: &[SiteRecord], products: &[Product]) -> Result<AssembleReport> {
    if products.is_empty() {
        return Err(Error::Invalid("at least one satellite product is required".into()));
    }
    let indices: Vec<ProductIndex> = products.iter().map(ProductIndex::new).collect();
    for (p, idx) in products.iter().zip(&indices) {
        if idx.points.len() < 4 {
            return Err(Error::Invalid(format!("product `{}` has fewer than 4 grid points", p.name)));
        }
    }
    let mut ordered: Vec<&SiteRecord> = sites.iter().collect();
    ordered.sort_by(|a, b| a.site.station_id.cmp(&b.site.station_id).then(a.month.cmp(&b.month)));

    // Neighbourhood geometry depends only on the site, so cache it.
    let mut geometry: HashMap<(String, usize), [(usize, f64); 4]> = HashMap::new();
    let mut samples = Vec::new();
    let mut missing_targets = 0;
    let mut skipped = Vec::new();
    'records: for rec in ordered {
        let Some(target) = rec.target else {
            missing_targets += 1;
            continue;
        };
        let mut predictors = Vec::with_capacity(4 * products.len() + 1);
        for (pi, (product, idx)) in products.iter().zip(&indices).enumerate() {
            let skip = |reason: String| SkippedSample {
                station_id: rec.site.station_id.clone(),
                month: rec.month,
                reason,
            };
            if !idx.covers(&rec.site) {
                skipped.push(skip(format!("outside the grid coverage of `{}`", product.name)));
                continue 'records;
            }
            let key = (rec.site.station_id.clone(), pi);
            let near = match geometry.get(&key) {
                Some(n) => *n,
                None => {
                    let n = nearest_four_indices(rec.site.lon, rec.site.lat, &idx.points)?;
                    geometry.insert(key, n);
                    n
                }
            };
            let mut grid_values = [0.0; 4];
            for (k, &(i, _)) in near.iter().enumerate() {
                let id = idx.points[i].grid_id;
                match idx.values.get(&(id, rec.month)).copied().flatten() {
                    Some(v) => grid_values[k] = v,
                    None => {
                        skipped.push(skip(format!("`{}` has no value at grid point {id}", product.name)));
                        continue 'records;
                    }
                }
            }
            let n = GridNeighborhood {
                grid_ids: near.map(|(i, _)| idx.points[i].grid_id),
                distances: near.map(|(_, d)| d.max(DISTANCE_FLOOR)),
                grid_values,
            };
            predictors.extend(distance_weight(&n).weighted_values);
        }
        predictors.push(rec.site.elevation);
        samples.push(Sample {
            target,
            predictors,
            station_id: rec.site.station_id.clone(),
            time_index: rec.month,
        });
    }
    let dataset = Dataset::new(feature_names(products), samples)?;
    Ok(AssembleReport { dataset, missing_targets, skipped })
}

fn optional_number(raw: &str, line: usize) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "NA" {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::BadRow { row: line, message: format!("`{raw}` is not a number") })
}

fn number(raw: &str, line: usize) -> Result<f64> {
    optional_number(raw, line)?.ok_or_else(|| Error::BadRow { row: line, message: "missing value".into() })
}

/// Reads a grid CSV with columns `grid_id,lon,lat,month,value`.
pub fn read_grid_csv(path: impl AsRef<Path>, name: &str) -> Result<Product> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.deserialize::<HashMap<String, String>>().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let get = |k: &str| rec.get(k).map(String::as_str).ok_or_else(|| Error::MissingColumn(k.into()));
        records.push(GridRecord {
            grid_id: get("grid_id")?
                .trim()
                .parse()
                .map_err(|_| Error::BadRow { row: line, message: "bad grid_id".into() })?,
            lon: number(get("lon")?, line)?,
            lat: number(get("lat")?, line)?,
            month: number(get("month")?, line)? as i64,
            value: optional_number(get("value")?, line)?,
        });
    }
    Ok(Product { name: name.to_string(), records })
}

pub fn write_grid_csv(path: impl AsRef<Path>, product: &Product) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["grid_id", "lon", "lat", "month", "value"])?;
    for r in &product.records {
        w.write_record([
            r.grid_id.to_string(),
            r.lon.to_string(),
            r.lat.to_string(),
            r.month.to_string(),
            r.value.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

/// Reads a site CSV with columns `station_id,lon,lat,elevation,month,target`.
pub fn read_site_csv(path: impl AsRef<Path>) -> Result<Vec<SiteRecord>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<HashMap<String, String>>().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let get = |k: &str| rec.get(k).map(String::as_str).ok_or_else(|| Error::MissingColumn(k.into()));
        let target = optional_number(get("target")?, line)?;
        if let Some(t) = target {
            if t < 0.0 {
                return Err(Error::BadRow { row: line, message: format!("negative target {t}") });
            }
        }
        out.push(SiteRecord {
            site: GaugeSite {
                station_id: get("station_id")?.trim().to_string(),
                lon: number(get("lon")?, line)?,
                lat: number(get("lat")?, line)?,
                elevation: number(get("elevation")?, line)?,
            },
            month: number(get("month")?, line)? as i64,
            target,
        });
    }
    Ok(out)
}

pub fn write_site_csv(path: impl AsRef<Path>, sites: &[SiteRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["station_id", "lon", "lat", "elevation", "month", "target"])?;
    for r in sites {
        w.write_record([
            r.site.station_id.clone(),
            r.site.lon.to_string(),
            r.site.lat.to_string(),
            r.site.elevation.to_string(),
            r.month.to_string(),
            r.target.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}
