//! Minimal dense matrix kernel.
//!
//! Level blocks in the target models are small (a handful of phases), so
//! everything is stored dense and row-major. The only nontrivial routine is
//! [`Matrix::inverse`], a partial-pivoted LU factorization solved against the
//! identity; its singularity threshold is scale-free.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Relative pivot threshold: a pivot smaller than this times the largest
/// absolute entry of the input matrix is treated as singular.
const PIVOT_RTOL: f64 = 1e-13;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Inversion failed: the pivot at `column` fell below the scale-free threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularMatrix {
    pub column: usize,
    pub pivot: f64,
    pub threshold: f64,
}

impl fmt::Display for SingularMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "matrix is numerically singular (pivot {:e} below {:e} at column {})",
            self.pivot, self.threshold, self.column
        )
    }
}

impl core::error::Error for SingularMatrix {}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(libm::fabs(x)))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// `self * rhs`.
    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "vector length must match columns");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Entry-wise scaling.
    pub fn scaled(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        for x in &mut out.data {
            *x *= c;
        }
        out
    }

    pub fn neg(&self) -> Matrix {
        self.scaled(-1.0)
    }

    pub fn sub_assign(&mut self, rhs: &Matrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }

    pub fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    /// Clips entries in `[-band, 0)` up to zero. Returns the most negative
    /// entry seen below the band, if any.
    pub fn clip_negative(&mut self, band: f64) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for x in &mut self.data {
            if *x < 0.0 {
                if *x >= -band {
                    *x = 0.0;
                } else if worst.map_or(true, |w| *x < w) {
                    worst = Some(*x);
                }
            }
        }
        worst
    }

    /// Inverse by partial-pivoted LU, solving against the identity.
    ///
    /// A pivot below `1e-13 * max|entry|` of the input reports singularity.
    pub fn inverse(&self) -> Result<Matrix, SingularMatrix> {
        assert_eq!(self.rows, self.cols, "only square matrices invert");
        let n = self.rows;
        let threshold = PIVOT_RTOL * self.max_abs();
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for col in 0..n {
            let mut best = col;
            let mut best_abs = libm::fabs(lu[col * n + col]);
            for r in col + 1..n {
                let a = libm::fabs(lu[r * n + col]);
                if a > best_abs {
                    best = r;
                    best_abs = a;
                }
            }
            if best_abs <= threshold {
                return Err(SingularMatrix { column: col, pivot: best_abs, threshold });
            }
            if best != col {
                for j in 0..n {
                    lu.swap(col * n + j, best * n + j);
                }
                perm.swap(col, best);
            }
            let pivot = lu[col * n + col];
            for r in col + 1..n {
                let factor = lu[r * n + col] / pivot;
                lu[r * n + col] = factor;
                for j in col + 1..n {
                    lu[r * n + j] -= factor * lu[col * n + j];
                }
            }
        }

        // Solve L U x = P e_j for every identity column.
        let mut inv = Matrix::zeros(n, n);
        let mut x = vec![0.0; n];
        for j in 0..n {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = if perm[i] == j { 1.0 } else { 0.0 };
            }
            for i in 1..n {
                let mut s = x[i];
                for k in 0..i {
                    s -= lu[i * n + k] * x[k];
                }
                x[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[i];
                for k in i + 1..n {
                    s -= lu[i * n + k] * x[k];
                }
                x[i] = s / lu[i * n + i];
            }
            for i in 0..n {
                inv.set(i, j, x[i]);
            }
        }
        Ok(inv)
    }
}

/// `row * m` for a row vector.
pub fn row_mul(row: &[f64], m: &Matrix) -> Vec<f64> {
    assert_eq!(row.len(), m.rows, "row length must match rows");
    let mut out = vec![0.0; m.cols];
    for (i, &a) in row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, &b) in out.iter_mut().zip(m.row(i)) {
            *o += a * b;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_triangular_block() {
        // (-Q)^{-1} for Q = [[-2, 1], [0, -3]].
        let m = Matrix::from_rows(&[&[2.0, -1.0], &[0.0, 3.0]]);
        let inv = m.inverse().unwrap();
        let expect = [[0.5, 1.0 / 6.0], [0.0, 1.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((inv.get(i, j) - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn inverse_times_original_is_identity() {
        let m = Matrix::from_rows(&[&[4.0, 1.0, 0.3], &[0.2, 3.0, 0.9], &[1.1, 0.0, 2.5]]);
        let inv = m.inverse().unwrap();
        let prod = m.mul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn conservative_block_is_singular() {
        // Row sums zero => -Q singular.
        let m = Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert!(m.inverse().is_err());
    }

    #[test]
    fn singularity_threshold_is_scale_free() {
        let m = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-15]]);
        let err = m.inverse().unwrap_err();
        // Scaling the matrix must not change the verdict.
        let scaled = m.scaled(1e12);
        assert!(scaled.inverse().is_err());
        assert!(err.pivot < err.threshold || err.pivot <= err.threshold);
    }

    #[test]
    fn row_mul_matches_mul_vec_transpose() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let r = row_mul(&[1.0, 0.5, 2.0], &m);
        assert_eq!(r, vec![1.0 + 1.5 + 10.0, 2.0 + 2.0 + 12.0]);
    }
}
