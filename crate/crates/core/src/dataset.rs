//! Tabular data model, CSV ingestion and seeded random splits.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation: a non-negative target with its predictor vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub target: f64,
    pub predictors: Vec<f64>,
    pub station_id: String,
    pub time_index: i64,
}

/// An ordered, immutable collection of samples sharing one feature layout.
///
/// `origin` maps every sample back to its row in the dataset it was cut from,
/// so subsets of subsets stay traceable to the source rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_names: Vec<String>,
    origin: Vec<usize>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let p = feature_names.len();
        for (i, s) in samples.iter().enumerate() {
            if s.predictors.len() != p {
                return Err(Error::BadRow {
                    row: i,
                    message: format!("expected {p} predictors, found {}", s.predictors.len()),
                });
            }
            if let Some(v) = s.predictors.iter().find(|v| !v.is_finite()) {
                return Err(Error::BadRow { row: i, message: format!("non-finite predictor {v}") });
            }
            if !(s.target.is_finite() && s.target >= 0.0) {
                return Err(Error::BadRow {
                    row: i,
                    message: format!("target must be finite and >= 0, found {}", s.target),
                });
            }
        }
        let origin = (0..samples.len()).collect();
        Ok(Dataset { samples, feature_names, origin })
    }

    /// Builds a dataset from a row-major predictor matrix and targets.
    pub fn from_rows(feature_names: Vec<String>, rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: targets.len() });
        }
        let samples = rows
            .into_iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (predictors, target))| Sample {
                target,
                predictors,
                station_id: String::new(),
                time_index: i as i64,
            })
            .collect();
        Dataset::new(feature_names, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.target).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.predictors.as_slice())
    }

    /// Source-row index of every sample.
    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    /// The samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            origin: indices.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    pub(crate) fn with_origin(mut self, origin: Vec<usize>) -> Dataset {
        debug_assert_eq!(origin.len(), self.samples.len());
        self.origin = origin;
        self
    }

    /// Replaces the predictors with `columns` (one vector per sample), keeping
    /// targets, identifiers and origin.
    pub fn with_predictors(&self, feature_names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Dataset> {
        if columns.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: columns.len() });
        }
        let samples = self
            .samples
            .iter()
            .zip(columns)
            .map(|(s, predictors)| Sample { predictors, ..s.clone() })
            .collect();
        let mut out = Dataset::new(feature_names, samples)?;
        out.origin = self.origin.clone();
        Ok(out)
    }

    /// Writes the dataset in the layout `station_id,time_index,target,<features...>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["station_id".to_string(), "time_index".into(), "target".into()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.station_id.clone(), s.time_index.to_string(), s.target.to_string()];
            rec.extend(s.predictors.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: String,
    pub features: Vec<String>,
    #[serde(default)]
    pub station_id: Option<String>,
    #[serde(default)]
    pub time_index: Option<String>,
}

impl CsvSchema {
    /// Schema matching the layout produced by [`Dataset::write_csv`].
    pub fn standard(features: Vec<String>) -> Self {
        CsvSchema {
            target: "target".into(),
            features,
            station_id: Some("station_id".into()),
            time_index: Some("time_index".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based line number in the file, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// Rows dropped because the target or a predictor cell was empty or `NA`.
    pub dropped_missing: usize,
    /// Rows rejected for invalid content.
    pub rejected: Vec<RejectedRow>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// Reads a headered CSV into a dataset.
///
/// Rows with a missing target or a missing predictor are dropped and counted.
/// Rows with unparseable cells or a negative target are rejected and reported
/// by line number; neither aborts the load.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_from(file, schema)
}

/// Loads a file in the [`Dataset::write_csv`] layout; every column other than
/// `station_id`, `time_index` and `target` is a feature.
pub fn load_standard_csv(path: impl AsRef<Path>) -> Result<LoadReport> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let features: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .filter(|h| !matches!(h.as_str(), "station_id" | "time_index" | "target"))
        .collect();
    load_csv(path, &CsvSchema::standard(features))
}

pub fn load_csv_from<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<LoadReport> {
    if schema.features.is_empty() {
        return Err(Error::Config("schema must name at least one feature column".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: HashMap<String, usize> =
        rdr.headers()?.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
    let col = |name: &str| header.get(name).copied().ok_or_else(|| Error::MissingColumn(name.to_string()));
    let target_col = col(&schema.target)?;
    let feature_cols = schema.features.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
    let station_col = schema.station_id.as_deref().map(col).transpose()?;
    let time_col = schema.time_index.as_deref().map(col).transpose()?;

    let mut samples = Vec::new();
    let mut dropped_missing = 0;
    let mut rejected = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let target_cell = cell(target_col);
        if is_missing(target_cell) || feature_cols.iter().any(|&c| is_missing(cell(c))) {
            dropped_missing += 1;
            continue;
        }
        let parsed = parse_row(&record, target_col, &feature_cols, station_col, time_col, i);
        match parsed {
            Ok(s) => samples.push(s),
            Err(reason) => rejected.push(RejectedRow { line, reason }),
        }
    }
    let dataset = Dataset::new(schema.features.clone(), samples)?;
    Ok(LoadReport { dataset, dropped_missing, rejected })
}

fn parse_row(
    record: &csv::StringRecord,
    target_col: usize,
    feature_cols: &[usize],
    station_col: Option<usize>,
    time_col: Option<usize>,
    ordinal: usize,
) -> std::result::Result<Sample, String> {
    let num = |c: usize| -> std::result::Result<f64, String> {
        let raw = record.get(c).unwrap_or("").trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("column {c}: `{raw}` is not a finite number")),
        }
    };
    let target = num(target_col)?;
    if target < 0.0 {
        return Err(format!("negative target {target}"));
    }
    let predictors = feature_cols.iter().map(|&c| num(c)).collect::<std::result::Result<Vec<_>, _>>()?;
    let station_id = station_col.map(|c| record.get(c).unwrap_or("").trim().to_string()).unwrap_or_default();
    let time_index = match time_col {
        Some(c) => {
            let raw = record.get(c).unwrap_or("").trim();
            raw.parse::<i64>().map_err(|_| format!("time index `{raw}` is not an integer"))?
        }
        None => ordinal as i64,
    };
    Ok(Sample { target, predictors, station_id, time_index })
}

/// A partition of `0..n` into disjoint parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub parts: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SplitPlan {
    /// Random partition of `0..n` into `k` parts whose sizes differ by at most
    /// one, larger parts first. Indices within each part are sorted.
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || n < k {
            return Err(Error::TooSmall { needed: k.max(1), got: n });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (base, extra) = (n / k, n % k);
        let mut parts = Vec::with_capacity(k);
        let mut start = 0;
        for j in 0..k {
            let len = base + usize::from(j < extra);
            let mut part = perm[start..start + len].to_vec();
            part.sort_unstable();
            parts.push(part);
            start += len;
        }
        Ok(SplitPlan { parts, seed })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }

    /// Sorted union of the given parts.
    pub fn union(&self, which: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = which.iter().flat_map(|&j| self.parts[j].iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

/// Three equally sized random parts (train, selection/combiner, test).
pub fn split_three_way(d: &Dataset, seed: u64) -> Result<SplitPlan> {
    SplitPlan::random(d.len(), 3, seed)
}

/// Two equally sized random parts used inside stacking.
pub fn split_two_way(d: &Dataset, seed: u64) -> Result<SplitPlan> {
    SplitPlan::random(d.len(), 2, seed)
}
