//! Muscle-length datasets: normalization, train/test splits and CSV I/O.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels whose standard deviation falls below this are treated as constant.
pub const CONSTANT_STD: f64 = 1e-9;

/// Asymmetry above this in an imported distance matrix is reported.
pub const ASYMMETRY_WARN: f64 = 1e-6;

/// Per-channel z-score parameters (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl NormalizationStats {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A T×M matrix of channel samples (rows are samples, columns channels).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Array2<f64>,
    ids: Vec<String>,
    stats: Option<NormalizationStats>,
}

impl Dataset {
    /// Wraps raw (un-normalized) samples. Requires at least one row, two
    /// columns and unique channel ids.
    pub fn new(values: Array2<f64>, ids: Vec<String>) -> Result<Self> {
        let (t, m) = values.dim();
        if t == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one row".into()));
        }
        if m < 2 {
            return Err(Error::InvalidArgument("dataset needs at least two channels".into()));
        }
        if ids.len() != m {
            return Err(Error::DimensionMismatch {
                what: "channel ids",
                expected: m,
                got: ids.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("duplicate channel id {id:?}")));
            }
        }
        Ok(Self {
            values,
            ids,
            stats: None,
        })
    }

    /// Wraps samples that are already z-scored with `stats`.
    pub fn from_normalized(
        values: Array2<f64>,
        ids: Vec<String>,
        stats: NormalizationStats,
    ) -> Result<Self> {
        let mut d = Self::new(values, ids)?;
        if stats.mean.len() != d.channels() || stats.std.len() != d.channels() {
            return Err(Error::DimensionMismatch {
                what: "normalization stats",
                expected: d.channels(),
                got: stats.mean.len(),
            });
        }
        d.stats = Some(stats);
        Ok(d)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.stats.is_some()
    }

    pub fn stats(&self) -> Option<&NormalizationStats> {
        self.stats.as_ref()
    }

    /// Per-channel z-score over all rows.
    ///
    /// Constant channels (std below [`CONSTANT_STD`]) become all zeros and are
    /// flagged in the returned stats.
    pub fn normalize(&self) -> Result<(Dataset, NormalizationStats)> {
        if self.is_normalized() {
            return Err(Error::AlreadyNormalized);
        }
        let t = self.rows() as f64;
        let mean = self.values.sum_axis(Axis(0)) / t;
        let mut std = Vec::with_capacity(self.channels());
        let mut constant = Vec::with_capacity(self.channels());
        for (j, col) in self.values.columns().into_iter().enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / t;
            let s = var.sqrt();
            std.push(s);
            constant.push(s < CONSTANT_STD);
        }
        let mut values = self.values.clone();
        for (j, mut col) in values.columns_mut().into_iter().enumerate() {
            if constant[j] {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - mean[j]) / std[j]);
            }
        }
        let stats = NormalizationStats {
            mean: mean.to_vec(),
            std,
            constant,
        };
        let out = Dataset {
            values,
            ids: self.ids.clone(),
            stats: Some(stats.clone()),
        };
        Ok((out, stats))
    }

    /// Inverse of [`Dataset::normalize`]. Constant channels come back as their mean.
    pub fn denormalize(&self) -> Result<Dataset> {
        let stats = self.stats.as_ref().ok_or(Error::NotNormalized)?;
        let mut values = self.values.clone();
        for (j, mut col) in values.columns_mut().into_iter().enumerate() {
            let (m, s) = (stats.mean[j], stats.std[j]);
            if stats.constant[j] {
                col.fill(m);
            } else {
                col.mapv_inplace(|v| v * s + m);
            }
        }
        Ok(Dataset {
            values,
            ids: self.ids.clone(),
            stats: None,
        })
    }

    /// A new dataset with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            values: self.values.select(Axis(0), rows),
            ids: self.ids.clone(),
            stats: self.stats.clone(),
        }
    }

    /// A new dataset with the given channels.
    pub fn select_channels(&self, cols: &[usize]) -> Result<Dataset> {
        let values = self.values.select(Axis(1), cols);
        let ids = cols.iter().map(|&c| self.ids[c].clone()).collect();
        let mut d = Dataset::new(values, ids)?;
        d.stats = self.stats.as_ref().map(|s| NormalizationStats {
            mean: cols.iter().map(|&c| s.mean[c]).collect(),
            std: cols.iter().map(|&c| s.std[c]).collect(),
            constant: cols.iter().map(|&c| s.constant[c]).collect(),
        });
        Ok(d)
    }

    /// Random row-level partition into `round(T * f)` training rows and the rest.
    /// Each side keeps the original row order.
    pub fn split_train_test(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} must lie strictly between 0 and 1"
            )));
        }
        let t = self.rows();
        let n_train = (t as f64 * train_fraction).round() as usize;
        if n_train == 0 || n_train == t {
            return Err(Error::InvalidArgument(format!(
                "train fraction {train_fraction} leaves an empty side for {t} rows"
            )));
        }
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, test) = order.split_at_mut(n_train);
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.select_rows(train), self.select_rows(test)))
    }

    /// Writes the dataset as CSV: a header of channel ids, then one sample per row.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&self.ids)?;
        for row in self.values.rows() {
            // `{}` on f64 prints the shortest representation that parses back
            // to the same value.
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::export_csv`] (or any CSV with a
    /// header of unique channel ids and a numeric body).
    ///
    /// Parse errors carry 1-based data-row (header excluded) and column numbers.
    pub fn import_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let (ids, rows) = read_numeric_csv(file, true)?;
        let ids = ids.unwrap_or_default();
        let m = ids.len();
        let mut seen = HashSet::new();
        for (c, id) in ids.iter().enumerate() {
            if !seen.insert(id) {
                return Err(Error::Parse {
                    row: 0,
                    column: c + 1,
                    message: format!("duplicate channel id {id:?}"),
                });
            }
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                row: 1,
                column: 1,
                message: "no data rows".into(),
            });
        }
        let t = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((t, m), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Dataset::new(values, ids)
    }
}

/// Reads an all-numeric CSV body. With `header`, the first record is returned
/// as column names and every row must match its width; otherwise rows must
/// match the first row's width.
fn read_numeric_csv<R: std::io::Read>(
    reader: R,
    header: bool,
) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names = if header {
        Some(rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width = names.as_ref().map(Vec::len);
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                row: row_no,
                column: record.len().min(expected) + 1,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: row_no,
                    column: c + 1,
                    message: format!("not a number: {cell:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

/// An imported distance matrix and what was done to it.
#[derive(Debug, Clone)]
pub struct DistanceImport {
    pub matrix: Array2<f64>,
    /// Largest |D[i][j] - D[j][i]| in the file.
    pub max_asymmetry: f64,
    pub warnings: Vec<String>,
}

/// Reads a square, header-less CSV distance matrix for `expected` channels.
///
/// The result is symmetrized as (D + Dᵀ)/2 with a zero diagonal; asymmetry
/// above [`ASYMMETRY_WARN`] is logged and returned as a warning.
pub fn import_distance_matrix(path: impl AsRef<Path>, expected: usize) -> Result<DistanceImport> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let (_, rows) = read_numeric_csv(file, false)?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "distance matrix in {} is not square",
            path.display()
        )));
    }
    if n != expected {
        return Err(Error::DimensionMismatch {
            what: "distance matrix",
            expected,
            got: n,
        });
    }
    let raw = Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]);
    Ok(symmetrize(raw))
}

pub(crate) fn symmetrize(raw: Array2<f64>) -> DistanceImport {
    let n = raw.nrows();
    let mut max_asymmetry: f64 = 0.0;
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            max_asymmetry = max_asymmetry.max((raw[[i, j]] - raw[[j, i]]).abs());
            let v = 0.5 * (raw[[i, j]] + raw[[j, i]]);
            matrix[[i, j]] = v;
            matrix[[j, i]] = v;
        }
    }
    let mut warnings = Vec::new();
    if max_asymmetry > ASYMMETRY_WARN {
        let msg = format!("distance matrix asymmetric by up to {max_asymmetry}; averaged");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    DistanceImport {
        matrix,
        max_asymmetry,
        warnings,
    }
}

/// Writes a square matrix as header-less CSV.
pub fn export_matrix_csv(matrix: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for row in matrix.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn constant_channel_is_zeroed_and_flagged() {
        let d = Dataset::new(array![[1.0, 0.0], [1.0, 2.0], [1.0, 4.0]], ids(2)).unwrap();
        let (n, stats) = d.normalize().unwrap();
        assert_eq!(n.values().column(0).to_vec(), vec![0.0; 3]);
        assert!(stats.constant[0]);
        assert!(!stats.constant[1]);
    }

    #[test]
    fn two_point_column_maps_to_unit_z_scores() {
        let d = Dataset::new(array![[0.0, 5.0], [2.0, 7.0]], ids(2)).unwrap();
        let (n, stats) = d.normalize().unwrap();
        assert_eq!(n.values().column(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(stats.std[0], 1.0);
    }

    #[test]
    fn double_normalization_is_an_error() {
        let d = Dataset::new(array![[0.0, 5.0], [2.0, 7.0]], ids(2)).unwrap();
        let (n, _) = d.normalize().unwrap();
        assert!(matches!(n.normalize(), Err(Error::AlreadyNormalized)));
    }

    #[test]
    fn eighty_twenty_split_of_ten_rows() {
        let values = Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64);
        let d = Dataset::new(values, ids(2)).unwrap();
        let (a, b) = d.split_train_test(0.8, 4).unwrap();
        assert_eq!((a.rows(), b.rows()), (8, 2));
        let (a2, b2) = d.split_train_test(0.8, 4).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn split_rejects_empty_sides() {
        let d = Dataset::new(array![[0.0, 1.0], [1.0, 2.0]], ids(2)).unwrap();
        assert!(d.split_train_test(0.1, 0).is_err());
        assert!(d.split_train_test(1.0, 0).is_err());
        assert!(d.split_train_test(0.0, 0).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Dataset::new(Array2::zeros((0, 3)), ids(3)).is_err());
        assert!(Dataset::new(Array2::zeros((2, 1)), ids(1)).is_err());
        assert!(Dataset::new(Array2::zeros((2, 2)), vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn csv_shape_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "a,b,c\n1,2,3\n4,5,6\n").unwrap();
        let d = Dataset::import_csv(&p).unwrap();
        assert_eq!(d.values().dim(), (2, 3));

        fs::write(&p, "a,b,c\n1,2,3\n4,abc,6\n").unwrap();
        match Dataset::import_csv(&p) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(&p, "a,b,c\n1,2,3\n4,5\n").unwrap();
        assert!(matches!(Dataset::import_csv(&p), Err(Error::Parse { row: 2, .. })));

        fs::write(&p, "a,b,a\n1,2,3\n").unwrap();
        assert!(matches!(Dataset::import_csv(&p), Err(Error::Parse { column: 3, .. })));
    }

    #[test]
    fn distance_import_symmetrizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "0,1,4\n3,0,5\n4,5,0\n").unwrap();
        let imp = import_distance_matrix(&p, 3).unwrap();
        assert_eq!(imp.matrix[[0, 1]], 2.0);
        assert_eq!(imp.matrix[[1, 0]], 2.0);
        assert_eq!(imp.warnings.len(), 1);

        fs::write(&p, "0,1,4\n1,0.5,5\n4,5,0\n").unwrap();
        let imp = import_distance_matrix(&p, 3).unwrap();
        assert!(imp.warnings.is_empty());
        assert_eq!(imp.matrix[[1, 1]], 0.0);
        assert_eq!(imp.matrix[[0, 2]], 4.0);

        fs::write(&p, "0,1\n1,0\n").unwrap();
        assert!(matches!(
            import_distance_matrix(&p, 3),
            Err(Error::DimensionMismatch { expected: 3, got: 2, .. })
        ));
        fs::write(&p, "0,1,2\n1,0,2\n").unwrap();
        assert!(import_distance_matrix(&p, 2).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20)
        ) {
            let t = rows.len();
            let values = Array2::from_shape_vec((t, 3), rows.concat()).unwrap();
            let d = Dataset::new(values.clone(), ids(3)).unwrap();
            let (n, stats) = d.normalize().unwrap();
            for (j, col) in n.values().columns().into_iter().enumerate() {
                if !stats.constant[j] {
                    let mean = col.sum() / t as f64;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
                    prop_assert!(mean.abs() < 1e-6);
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
                }
            }
            let back = n.denormalize().unwrap();
            for (a, b) in back.values().iter().zip(values.iter()) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn csv_round_trip_is_lossless(
            rows in prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL, 2), 1..8)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.csv");
            let t = rows.len();
            let d = Dataset::new(Array2::from_shape_vec((t, 2), rows.concat()).unwrap(), ids(2)).unwrap();
            d.export_csv(&p).unwrap();
            prop_assert_eq!(Dataset::import_csv(&p).unwrap(), d);
        }

        #[test]
        fn split_partitions_rows(t in 2usize..60, f in 0.05f64..0.95, seed in any::<u64>()) {
            let values = Array2::from_shape_fn((t, 2), |(i, j)| (i * 2 + j) as f64);
            let d = Dataset::new(values, ids(2)).unwrap();
            if let Ok((a, b)) = d.split_train_test(f, seed) {
                let mut all: Vec<i64> = a.values().column(0).iter().chain(b.values().column(0).iter())
                    .map(|v| *v as i64).collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..t as i64).map(|i| i * 2).collect::<Vec<_>>());
            }
        }
    }
}
