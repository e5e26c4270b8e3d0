//! Banded lower-triangular storage, banded Cholesky, and triangular solves.
//!
//! Row `i` stores the `width` entries `L[i][i-width+1..=i]`, left-padded with
//! zeros for the first rows. Row `i` of the factor depends only on rows
//! `< i`, so factoring a longer matrix with the same leading block reproduces
//! the shorter factor bit for bit; [`BandedLower::extend_cholesky`] relies on it.

use nalgebra::DMatrix;

use crate::error::{MfbError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedLower {
    order: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedLower {
    pub fn identity(order: usize) -> Self {
        let mut data = vec![0.0; order];
        data.iter_mut().for_each(|v| *v = 1.0);
        Self {
            order,
            width: 1,
            data,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of stored entries per row, diagonal included.
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// `L[i][j]`; zero outside the band and above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j >= self.width {
            0.0
        } else {
            self.row(i)[j + self.width - 1 - i]
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.row(i)[self.width - 1]
    }

    /// Banded Cholesky `A = L Lᵀ` of the symmetric matrix whose lower entries
    /// are given by `entry(i, j)` for `i - width < j ≤ i`.
    pub fn cholesky<F>(order: usize, width: usize, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64,
    {
        let mut l = Self {
            order: 0,
            width: width.max(1),
            data: Vec::new(),
        };
        l.grow(order, &entry)?;
        Ok(l)
    }

    /// Continues the factorization to a larger `order` of a matrix whose
    /// leading block is the one already factored. Leading rows are copied.
    pub fn extend_cholesky<F>(&self, order: usize, entry: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> f64,
    {
        let mut l = self.clone();
        l.grow(order, &entry)?;
        Ok(l)
    }

    fn grow<F>(&mut self, order: usize, entry: &F) -> Result<()>
    where
        F: Fn(usize, usize) -> f64,
    {
        let w = self.width;
        let start = self.order;
        self.data.resize(order * w, 0.0);
        for i in start..order {
            let lo = (i + 1).saturating_sub(w);
            for j in lo..=i {
                // Σ_{k=lo}^{j-1} L[i][k] L[j][k]
                let ri = i * w + (lo + w - 1 - i);
                let rj = j * w + (lo + w - 1 - j);
                let len = j - lo;
                let dot: f64 = self.data[ri..ri + len]
                    .iter()
                    .zip(&self.data[rj..rj + len])
                    .map(|(a, b)| a * b)
                    .sum();
                let s = entry(i, j) - dot;
                let pos = i * w + (j + w - 1 - i);
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        self.order = i;
                        self.data.truncate(i * w);
                        return Err(MfbError::NonPositivePivot { row: i, value: s });
                    }
                    self.data[pos] = s.sqrt();
                } else {
                    self.data[pos] = s / self.diagonal(j);
                }
            }
        }
        self.order = order;
        Ok(())
    }

    /// Copy restricted to the leading `order` rows and columns.
    pub fn leading(&self, order: usize) -> Self {
        let order = order.min(self.order);
        Self {
            order,
            width: self.width,
            data: self.data[..order * self.width].to_vec(),
        }
    }

    /// Solves `L x = b` by forward substitution over the leading `b.len()` rows.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() > self.order {
            return Err(MfbError::DimensionMismatch {
                expected: self.order,
                actual: b.len(),
            });
        }
        let w = self.width;
        let mut x = vec![0.0; b.len()];
        for i in 0..b.len() {
            let lo = (i + 1).saturating_sub(w);
            let r = self.row(i);
            let off = lo + w - 1 - i;
            let dot: f64 = r[off..w - 1]
                .iter()
                .zip(&x[lo..i])
                .map(|(a, b)| a * b)
                .sum();
            let d = r[w - 1];
            if d == 0.0 {
                return Err(MfbError::NonPositivePivot { row: i, value: d });
            }
            x[i] = (b[i] - dot) / d;
        }
        Ok(x)
    }

    /// Solves `Lᵀ x = b` by back substitution over the leading `b.len()` rows.
    pub fn solve_upper(&self, b: &[f64]) -> Result<Vec<f64>> {
        let m = b.len();
        if m > self.order {
            return Err(MfbError::DimensionMismatch {
                expected: self.order,
                actual: m,
            });
        }
        let w = self.width;
        let mut x = b.to_vec();
        for i in (0..m).rev() {
            let d = self.diagonal(i);
            if d == 0.0 {
                return Err(MfbError::NonPositivePivot { row: i, value: d });
            }
            x[i] /= d;
            let xi = x[i];
            let lo = (i + 1).saturating_sub(w);
            let r = self.row(i);
            for (k, xk) in x.iter_mut().enumerate().take(i).skip(lo) {
                *xk -= r[k + w - 1 - i] * xi;
            }
        }
        Ok(x)
    }

    /// `L x` over the leading `x.len()` rows.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() > self.order {
            return Err(MfbError::DimensionMismatch {
                expected: self.order,
                actual: x.len(),
            });
        }
        Ok((0..x.len()).map(|i| self.row_dot(i, x)).collect())
    }

    /// `Σ_j L[i][j] x[j]`; `x` must cover columns up to `i`.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let w = self.width;
        let lo = (i + 1).saturating_sub(w);
        let r = self.row(i);
        r[lo + w - 1 - i..]
            .iter()
            .zip(&x[lo..=i])
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.order, self.order, |i, j| self.get(i, j))
    }
}

/// Dense lower Cholesky; reference implementation for small matrices.
pub fn dense_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return Err(MfbError::NonPositivePivot { row: i, value: s });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}
