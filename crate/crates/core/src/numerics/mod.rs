//! Dense vectors and matrices, a Cholesky solver, and the pinned PRNG.
//!
//! Everything is `f64`. Containers are small row-major buffers; no attempt is
//! made at BLAS-level performance.

mod linalg;
mod rng;

pub use linalg::{gram, matvec, solve_spd, transpose_matvec, SPD_PIVOT_TOLERANCE};
pub use rng::{splitmix64, Rng};

use std::ops::{Deref, Index};

use crate::error::{check_dim, Error, Result};

/// Fixed-length vector of `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dim("dot", self.len(), other.len())?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_dim("add", self.len(), other.len())?;
        Ok(Vector(
            self.iter().zip(other.iter()).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_dim("sub", self.len(), other.len())?;
        Ok(Vector(
            self.iter().zip(other.iter()).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector(self.iter().map(|a| a * c).collect())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|a| a.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_row_major", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim("Matrix::from_rows", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Appends a column of ones on the right.
    pub fn with_ones_column(&self) -> Matrix {
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.push(1.0);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Adds `lambda` to every diagonal entry of a square matrix.
    pub fn add_diagonal(&self, lambda: f64) -> Result<Matrix> {
        check_dim("add_diagonal", self.rows, self.cols)?;
        let mut m = self.clone();
        for i in 0..self.rows {
            m.data[i * self.cols + i] += lambda;
        }
        Ok(m)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

/// Selects entries of `v` at `indices`.
pub fn select(v: &Vector, indices: &[usize]) -> Result<Vector> {
    indices
        .iter()
        .map(|&i| {
            v.get(i).copied().ok_or_else(|| {
                Error::invalid(format!("index {i} out of range for length {}", v.len()))
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Vector)
}
