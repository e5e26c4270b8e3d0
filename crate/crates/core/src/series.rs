//! Multivariate series container and raw lag autocovariances.
//!
//! Values are stored as a `d × n` column-major matrix, so column `t` is the
//! observation vector `Y_t` and the raw storage is already the time-major
//! stacking used by the whitening step.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{MfbError, Result};

/// A `d`-dimensional series observed at `n` time points.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries {
    values: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl MultiSeries {
    /// Wraps a `d × n` matrix. Requires `d ≥ 1`, `n ≥ 2` and finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(MfbError::EmptySeries("series has no dimensions".into()));
        }
        if values.ncols() < 2 {
            return Err(MfbError::InvalidSeries(format!(
                "series needs at least 2 time points, got {}",
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (d, _) = values.shape();
            return Err(MfbError::InvalidSeries(format!(
                "non-finite value at dimension {}, time {}",
                pos % d,
                pos / d
            )));
        }
        Ok(Self {
            values,
            labels: None,
        })
    }

    /// Builds a series from one vector per dimension.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(MfbError::EmptySeries("series has no dimensions".into()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MfbError::InvalidSeries("ragged dimension rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), n, |i, t| rows[i][t]))
    }

    /// Builds a series from one vector per time point.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(MfbError::InvalidSeries("series has no time points".into()));
        }
        let d = columns[0].len();
        if d == 0 {
            return Err(MfbError::EmptySeries("series has no dimensions".into()));
        }
        if columns.iter().any(|c| c.len() != d) {
            return Err(MfbError::InvalidSeries("ragged time columns".into()));
        }
        Self::new(DMatrix::from_fn(d, columns.len(), |i, t| columns[t][i]))
    }

    /// Univariate convenience constructor.
    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, values.len(), values))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dims() {
            return Err(MfbError::DimensionMismatch {
                expected: self.dims(),
                actual: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn dims(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn get(&self, dim: usize, t: usize) -> f64 {
        self.values[(dim, t)]
    }

    /// Observation vector `Y_t`.
    pub fn column(&self, t: usize) -> &[f64] {
        let d = self.dims();
        &self.values.as_slice()[t * d..(t + 1) * d]
    }

    /// All values of one dimension, in time order.
    pub fn row(&self, dim: usize) -> Vec<f64> {
        self.values.row(dim).iter().copied().collect()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Time-major stacking `[Y_1ᵀ, …, Y_nᵀ]ᵀ`.
    pub fn as_stacked(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Reads a CSV with a header row of dimension names and one row per time step.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if labels.is_empty() || labels.iter().all(String::is_empty) {
            return Err(MfbError::EmptySeries("CSV header has no columns".into()));
        }
        let mut columns = Vec::new();
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != labels.len() {
                return Err(MfbError::Parse(format!(
                    "row {} has {} cells, expected {}",
                    row_idx + 1,
                    record.len(),
                    labels.len()
                )));
            }
            let mut col = Vec::with_capacity(labels.len());
            for (j, cell) in record.iter().enumerate() {
                if cell.is_empty() {
                    return Err(MfbError::Parse(format!(
                        "missing cell at row {}, column '{}'",
                        row_idx + 1,
                        labels[j]
                    )));
                }
                let v: f64 = cell.parse().map_err(|_| {
                    MfbError::Parse(format!(
                        "cannot parse '{}' at row {}, column '{}'",
                        cell,
                        row_idx + 1,
                        labels[j]
                    ))
                })?;
                col.push(v);
            }
            columns.push(col);
        }
        Self::from_columns(&columns)?.with_labels(labels)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Writes the CSV layout accepted by [`MultiSeries::read_csv`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<String> = match &self.labels {
            Some(l) => l.clone(),
            None => (1..=self.dims()).map(|i| format!("y{i}")).collect(),
        };
        wtr.write_record(&header)?;
        for t in 0..self.len() {
            wtr.write_record(self.column(t).iter().map(|v| format_float(*v)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Lag-`h` autocovariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCov {
    pub lag: usize,
    pub matrix: DMatrix<f64>,
}

/// `(1/n) Σ_{t=1}^{n-h} Y_t Y_{t+h}ᵀ`. Means are not subtracted.
pub fn lag_cov(series: &MultiSeries, h: usize) -> Result<LagCov> {
    Ok(LagCov {
        lag: h,
        matrix: lag_cov_matrix(series.values(), h)?,
    })
}

pub(crate) fn lag_cov_matrix(values: &DMatrix<f64>, h: usize) -> Result<DMatrix<f64>> {
    let (d, n) = values.shape();
    if d == 0 {
        return Err(MfbError::EmptySeries("series has no dimensions".into()));
    }
    if h >= n {
        return Err(MfbError::LagOutOfRange { lag: h, len: n });
    }
    let data = values.as_slice();
    let mut out = DMatrix::zeros(d, d);
    for t in 0..n - h {
        let a = &data[t * d..(t + 1) * d];
        let b = &data[(t + h) * d..(t + h + 1) * d];
        for j in 0..d {
            let bj = b[j];
            for i in 0..d {
                out[(i, j)] += a[i] * bj;
            }
        }
    }
    out /= n as f64;
    Ok(out)
}

/// Subtracts per-dimension sample means; returns the centered series and the means.
pub fn center(series: &MultiSeries) -> (MultiSeries, Vec<f64>) {
    let n = series.len() as f64;
    let means: Vec<f64> = (0..series.dims())
        .map(|i| series.values.row(i).iter().sum::<f64>() / n)
        .collect();
    let mut values = series.values.clone();
    for (i, m) in means.iter().enumerate() {
        values.row_mut(i).iter_mut().for_each(|v| *v -= m);
    }
    (
        MultiSeries {
            values,
            labels: series.labels.clone(),
        },
        means,
    )
}
