use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scoring::QuantileLevelGrid;

/// Samples × levels table of predictive quantiles, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    levels: QuantileLevelGrid,
    n_rows: usize,
    values: Vec<f64>,
}

impl PredictionMatrix {
    pub fn new(levels: QuantileLevelGrid, n_rows: usize, values: Vec<f64>) -> Result<Self> {
        let expected = n_rows * levels.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("prediction matrix contains non-finite values".into()));
        }
        Ok(PredictionMatrix { levels, n_rows, values })
    }

    pub fn from_rows(levels: QuantileLevelGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(levels, rows.len(), values)
    }

    /// Builds a matrix from one column per level.
    pub fn from_columns(levels: QuantileLevelGrid, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.len() != levels.len() {
            return Err(Error::DimensionMismatch { expected: levels.len(), got: columns.len() });
        }
        let n = columns.first().map_or(0, Vec::len);
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
        let m = levels.len();
        let mut values = vec![0.0; n * m];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * m + j] = *v;
            }
        }
        Self::new(levels, n, values)
    }

    pub fn levels(&self) -> &QuantileLevelGrid {
        &self.levels
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn get(&self, row: usize, level: usize) -> f64 {
        self.values[row * self.levels.len() + level]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let m = self.levels.len();
        &self.values[row * m..(row + 1) * m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.levels.len().max(1))
    }

    pub(crate) fn rows_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let m = self.levels.len().max(1);
        self.values.chunks_mut(m)
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn column(&self, level: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, level)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes `station_id,time_index,q<level>...`, taking the identifiers from
    /// `ids` when given.
    pub fn write_csv(&self, path: impl AsRef<Path>, ids: Option<&Dataset>) -> Result<()> {
        let path = path.as_ref();
        if let Some(d) = ids {
            if d.len() != self.n_rows {
                return Err(Error::DimensionMismatch { expected: self.n_rows, got: d.len() });
            }
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["station_id".to_string(), "time_index".into()];
        header.extend(self.levels.iter().map(|t| format!("q{t}")));
        w.write_record(&header)?;
        for (i, row) in self.rows().enumerate().take(self.n_rows) {
            let (station, time) = match ids {
                Some(d) => (d.sample(i).station_id.clone(), d.sample(i).time_index),
                None => (String::new(), i as i64),
            };
            let mut rec = vec![station, time.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a file written by [`PredictionMatrix::write_csv`]; levels come
    /// from the `q<level>` column names.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref())?;
        let mut cols = Vec::new();
        let mut levels = Vec::new();
        for (i, h) in rdr.headers()?.iter().enumerate() {
            if let Some(t) = h.trim().strip_prefix('q') {
                let tau = t.parse::<f64>().map_err(|_| Error::InvalidLevels(format!("bad column `{h}`")))?;
                cols.push(i);
                levels.push(tau);
            }
        }
        let levels = QuantileLevelGrid::new(levels)?;
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = cols
                .iter()
                .map(|&c| {
                    let raw = rec.get(c).unwrap_or("").trim();
                    raw.parse::<f64>()
                        .map_err(|_| Error::BadRow { row: r + 2, message: format!("`{raw}` is not a number") })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(levels, &rows)
    }
}

