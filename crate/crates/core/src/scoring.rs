//! Quantile scoring: pinball loss, averaged scores, skill scores, coverage
//! frequencies and per-level ranking.
//!
//! Coverage is reported as the fraction of observations at or below the
//! predicted τ-quantile, whose nominal value is τ. Observations equal to the
//! prediction count as covered, mirroring the `z >= y` indicator in the loss.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::PredictionMatrix;

/// Strictly increasing quantile levels in the open unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileLevelGrid(Vec<f64>);

/// The 15-level grid used for full experiments.
pub const DEFAULT_LEVELS: [f64; 15] = [
    0.025, 0.050, 0.075, 0.100, 0.200, 0.300, 0.400, 0.500, 0.600, 0.700, 0.800, 0.900, 0.925, 0.950, 0.975,
];

/// The reduced grid used for quick runs.
pub const QUICK_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

impl QuantileLevelGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidLevels("grid is empty".into()));
        }
        if let Some(t) = levels.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidLevels(format!("level {t} outside (0, 1)")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidLevels("levels must be strictly increasing".into()));
        }
        Ok(QuantileLevelGrid(levels))
    }

    pub fn single(level: f64) -> Result<Self> {
        Self::new(vec![level])
    }

    pub fn standard() -> Self {
        QuantileLevelGrid(DEFAULT_LEVELS.to_vec())
    }

    pub fn quick() -> Self {
        QuantileLevelGrid(QUICK_LEVELS.to_vec())
    }

    /// Parses a comma separated list such as `0.1,0.5,0.9`.
    pub fn parse(text: &str) -> Result<Self> {
        let levels = text
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::InvalidLevels(format!("cannot parse `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }
}

impl TryFrom<Vec<f64>> for QuantileLevelGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        QuantileLevelGrid::new(v)
    }
}

impl From<QuantileLevelGrid> for Vec<f64> {
    fn from(g: QuantileLevelGrid) -> Self {
        g.0
    }
}

/// Quantile scoring function `(z - y)(1{z >= y} - τ)`.
#[inline]
pub fn pinball(z: f64, y: f64, tau: f64) -> f64 {
    let indicator = if z >= y { 1.0 } else { 0.0 };
    (z - y) * (indicator - tau)
}

fn check_pair(predictions: &[f64], observations: &[f64]) -> Result<()> {
    if predictions.len() != observations.len() {
        return Err(Error::DimensionMismatch { expected: observations.len(), got: predictions.len() });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Pinball loss averaged over paired samples.
pub fn mean_pinball(predictions: &[f64], observations: &[f64], tau: f64) -> Result<f64> {
    check_pair(predictions, observations)?;
    let total: f64 = predictions.iter().zip(observations).map(|(&z, &y)| pinball(z, y, tau)).sum();
    Ok(total / predictions.len() as f64)
}

/// `1 - score / benchmark`; 0 matches the benchmark, 1 is a perfect score.
pub fn skill_score(score: f64, benchmark: f64) -> Result<f64> {
    if !(benchmark > 0.0) {
        return Err(Error::NonPositiveBenchmark(benchmark));
    }
    Ok(1.0 - score / benchmark)
}

/// Fraction of observations at or below their predicted quantile.
pub fn coverage(predictions: &[f64], observations: &[f64]) -> Result<f64> {
    check_pair(predictions, observations)?;
    let hits = predictions.iter().zip(observations).filter(|(z, y)| y <= z).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Competition ranking by ascending score: rank 1 is the lowest score and tied
/// scores share the smaller rank. The returned list is ordered by rank, then
/// by name.
pub fn rank_algorithms(scores: &[(String, f64)]) -> Vec<(String, usize)> {
    let mut sorted: Vec<&(String, f64)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(sorted.len());
    let mut rank = 0;
    for (i, (name, score)) in sorted.iter().map(|p| (&p.0, p.1)).enumerate() {
        if i == 0 || score != sorted[i - 1].1 {
            rank = i + 1;
        }
        out.push((name.clone(), rank));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub algorithm: String,
    pub level: f64,
    pub mean_score: f64,
    /// `None` when the benchmark scored exactly zero.
    pub skill_vs_benchmark: Option<f64>,
    pub coverage: f64,
    pub rank: usize,
}

/// Per (algorithm, level) evaluation results, ordered by level then algorithm
/// roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub benchmark: String,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Scores every algorithm's prediction matrix against the observations.
    pub fn evaluate(
        predictions: &[(String, PredictionMatrix)],
        observations: &[f64],
        benchmark: &str,
    ) -> Result<ScoreTable> {
        let (_, bench) = predictions
            .iter()
            .find(|(name, _)| name == benchmark)
            .ok_or_else(|| Error::Invalid(format!("benchmark `{benchmark}` is not among the evaluated algorithms")))?;
        let levels = bench.levels().clone();
        for (name, m) in predictions {
            if m.levels() != &levels {
                return Err(Error::Invalid(format!("algorithm `{name}` uses a different level grid")));
            }
        }
        let mut rows = Vec::new();
        for (j, tau) in levels.iter().enumerate() {
            let bench_score = mean_pinball(&bench.column(j), observations, tau)?;
            let mut level_rows = Vec::with_capacity(predictions.len());
            for (name, m) in predictions {
                let col = m.column(j);
                let mean_score = mean_pinball(&col, observations, tau)?;
                let skill = if name == benchmark {
                    Some(0.0)
                } else {
                    skill_score(mean_score, bench_score).ok()
                };
                level_rows.push(ScoreRow {
                    algorithm: name.clone(),
                    level: tau,
                    mean_score,
                    skill_vs_benchmark: skill,
                    coverage: coverage(&col, observations)?,
                    rank: 0,
                });
            }
            let scores: Vec<(String, f64)> = level_rows.iter().map(|r| (r.algorithm.clone(), r.mean_score)).collect();
            let ranks: BTreeMap<String, usize> = rank_algorithms(&scores).into_iter().collect();
            for r in &mut level_rows {
                r.rank = ranks[&r.algorithm];
            }
            rows.extend(level_rows);
        }
        Ok(ScoreTable { benchmark: benchmark.to_string(), rows })
    }

    pub fn get(&self, algorithm: &str, level: f64) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.level == level)
    }

    pub fn algorithms(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.algorithm) {
                seen.push(r.algorithm.clone());
            }
        }
        seen
    }

    /// CSV with `# key=value` metadata lines ahead of the header.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}").map_err(|e| Error::io("<scores.csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["algorithm", "level", "mean_score", "skill_vs_benchmark", "coverage", "rank"])?;
        for r in &self.rows {
            w.write_record([
                r.algorithm.clone(),
                r.level.to_string(),
                r.mean_score.to_string(),
                r.skill_vs_benchmark.map(|s| s.to_string()).unwrap_or_default(),
                r.coverage.to_string(),
                r.rank.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<scores.csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>, metadata: &BTreeMap<String, String>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), metadata)
    }

    /// Parses the CSV produced by [`ScoreTable::write_csv`].
    pub fn read_csv<R: std::io::Read>(reader: R, benchmark: &str) -> Result<ScoreTable> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::BadRow { row: rows.len(), message: format!("bad number in column {i}") })
            };
            let skill = match rec.get(3).unwrap_or("") {
                "" => None,
                _ => Some(f(3)?),
            };
            rows.push(ScoreRow {
                algorithm: rec.get(0).unwrap_or("").to_string(),
                level: f(1)?,
                mean_score: f(2)?,
                skill_vs_benchmark: skill,
                coverage: f(4)?,
                rank: f(5)? as usize,
            });
        }
        Ok(ScoreTable { benchmark: benchmark.to_string(), rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pinball_hand_cases() {
        assert_eq!(pinball(5.0, 5.0, 0.3), 0.0);
        assert_abs_diff_eq!(pinball(2.0, 4.0, 0.5), 1.0);
        assert_abs_diff_eq!(pinball(10.0, 0.0, 0.9), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_pinball_cases() {
        assert_eq!(mean_pinball(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 0.0);
        assert_abs_diff_eq!(mean_pinball(&[2.0, 4.0], &[4.0, 4.0], 0.5).unwrap(), 0.5);
        assert!(matches!(mean_pinball(&[1.0], &[1.0, 2.0], 0.5), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(mean_pinball(&[], &[], 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn skill_cases() {
        assert_eq!(skill_score(0.4, 0.4).unwrap(), 0.0);
        assert_eq!(skill_score(0.0, 0.4).unwrap(), 1.0);
        assert_eq!(skill_score(0.8, 0.4).unwrap(), -1.0);
        assert!(skill_score(0.1, 0.0).is_err());
        assert!(skill_score(0.1, -1.0).is_err());
    }

    #[test]
    fn coverage_cases() {
        assert_eq!(coverage(&[100.0, 100.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(coverage(&[-100.0, -100.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(coverage(&[2.5; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.5);
        // ties are covered
        assert_eq!(coverage(&[3.0; 3], &[3.0; 3]).unwrap(), 1.0);
        assert!(coverage(&[], &[]).is_err());
    }

    #[test]
    fn ranking() {
        let r = rank_algorithms(&[("A".into(), 1.0), ("B".into(), 0.5)]);
        assert_eq!(r, vec![("B".to_string(), 1), ("A".to_string(), 2)]);
        let r = rank_algorithms(&[("B".into(), 0.5), ("A".into(), 0.5)]);
        assert_eq!(r, vec![("A".to_string(), 1), ("B".to_string(), 1)]);
        let scores = [("q".to_string(), 0.3), ("r".to_string(), 0.1), ("s".to_string(), 0.3), ("t".to_string(), 0.2)];
        let r: BTreeMap<_, _> = rank_algorithms(&scores).into_iter().collect();
        assert_eq!((r["r"], r["t"], r["q"], r["s"]), (1, 2, 3, 3));
    }

    #[test]
    fn level_grid_validation() {
        assert_eq!(QuantileLevelGrid::standard().len(), 15);
        assert!(QuantileLevelGrid::new(vec![]).is_err());
        assert!(QuantileLevelGrid::new(vec![0.0, 0.5]).is_err());
        assert!(QuantileLevelGrid::new(vec![0.5, 1.0]).is_err());
        assert!(QuantileLevelGrid::new(vec![0.5, 0.5]).is_err());
        assert_eq!(QuantileLevelGrid::parse("0.1, 0.5,0.9").unwrap(), QuantileLevelGrid::quick());
        let g: std::result::Result<QuantileLevelGrid, _> = serde_json::from_str("[0.9, 0.1]");
        assert!(g.is_err());
    }

    #[test]
    fn table_benchmark_self_skill_is_zero() {
        let levels = QuantileLevelGrid::quick();
        let obs = vec![1.0, 2.0, 3.0, 4.0];
        let a = PredictionMatrix::from_rows(levels.clone(), &vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
        let b = PredictionMatrix::from_rows(levels.clone(), &vec![vec![2.0, 2.5, 3.5]; 4]).unwrap();
        let t = ScoreTable::evaluate(&[("qr".into(), a), ("other".into(), b)], &obs, "qr").unwrap();
        assert_eq!(t.rows.len(), 6);
        for tau in levels.iter() {
            assert_eq!(t.get("qr", tau).unwrap().skill_vs_benchmark, Some(0.0));
        }
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &BTreeMap::from([("seed".to_string(), "1".to_string())])).unwrap();
        let back = ScoreTable::read_csv(buf.as_slice(), "qr").unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn pinball_nonnegative_zero_iff_equal(z in -1e3f64..1e3, y in -1e3f64..1e3, tau in 0.001f64..0.999) {
            let l = pinball(z, y, tau);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, z == y);
        }

        #[test]
        fn pinball_homogeneous(z in -1e3f64..1e3, y in -1e3f64..1e3, tau in 0.001f64..0.999, a in 0.01f64..100.0) {
            let lhs = pinball(a * z, a * y, tau);
            let rhs = a * pinball(z, y, tau);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn skill_self_is_zero(x in 1e-9f64..1e9) {
            prop_assert_eq!(skill_score(x, x).unwrap(), 0.0);
        }

        #[test]
        fn mean_pinball_permutation_invariant(
            pairs in proptest::collection::vec((-50f64..50.0, -50f64..50.0), 1..40),
            tau in 0.01f64..0.99,
            rot in 0usize..40,
        ) {
            let (z, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut rotated = pairs.clone();
            let k = rot % pairs.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let (zr, yr): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
            let a = mean_pinball(&z, &y, tau).unwrap();
            let b = mean_pinball(&zr, &yr, tau).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
