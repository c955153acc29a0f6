//! Small dense row-major matrices.
//!
//! Feature matrices here have at most a handful of columns and the
//! information matrices are (d+1)x(d+1), so plain loops are enough.

use crate::error::{Result, SimError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Empty matrix with a fixed column count, ready for [`Matrix::push_row`].
    pub fn with_cols(cols: usize) -> Self {
        Matrix {
            rows: 0,
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SimError::contract(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::with_cols(cols);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.cols {
            return Err(SimError::contract(format!(
                "row has {} columns, matrix has {}",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Appends all rows of `other`.
    pub fn extend(&mut self, other: &Matrix<T>) -> Result<()> {
        if other.cols != self.cols {
            return Err(SimError::contract(format!(
                "cannot stack {} columns onto {}",
                other.cols, self.cols
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut m = Self::with_cols(self.cols);
        for &i in idx {
            m.data.extend_from_slice(self.row(i));
            m.rows += 1;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mat_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// `vᵀ M v` for a square matrix.
    pub fn quad_form(&self, v: &[T]) -> T {
        debug_assert_eq!(self.rows, self.cols);
        dot(v, &self.mat_vec(v))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    ///
    /// Returns `None` when a pivot falls below `tol` relative to the largest
    /// diagonal magnitude.
    pub fn inverse(&self, tol: T) -> Option<Self> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let scale = (0..n)
            .map(|i| self[(i, i)].abs())
            .fold(T::zero(), T::max)
            .max(T::min_positive_value());
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| {
                    a[(x, col)]
                        .abs()
                        .partial_cmp(&a[(y, col)].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            // Written to also reject NaN pivots.
            if a[(pivot, col)].abs().partial_cmp(&(tol * scale)) != Some(std::cmp::Ordering::Greater) {
                return None;
            }
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] = a[(col, j)] / p;
                inv[(col, j)] = inv[(col, j)] / p;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[(i, col)];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    a[(i, j)] = a[(i, j)] - f * a[(col, j)];
                    inv[(i, j)] = inv[(i, j)] - f * inv[(col, j)];
                }
            }
        }
        Some(inv)
    }

    /// Replaces the matrix with `(M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::of(0.5);
        for i in 0..self.rows {
            for j in 0..i {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
