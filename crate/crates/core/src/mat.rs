//! Flat row-major matrix of `f32` values.
//!
//! Particle and dataset arrays are stored in 32-bit floats to halve memory
//! traffic in the projection loops; every scalar computation on them happens
//! in `f64` (see the dot-product helpers in [`crate::projections`]).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_vec(data: Vec<f32>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { data, rows, cols })
    }

    /// Builds a matrix from rows of `f64` values, narrowing to `f32`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::invalid("ragged rows"));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Ok(Matrix {
            data,
            rows: rows.len(),
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product of an `f32` data row with `f64` weights, accumulated in
/// `f64`. Four-way unrolled so the compiler can vectorize it.
#[inline]
pub fn dot(x: &[f32], w: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), w.len());
    let chunks = x.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let b = i * 4;
        s0 += x[b] as f64 * w[b];
        s1 += x[b + 1] as f64 * w[b + 1];
        s2 += x[b + 2] as f64 * w[b + 2];
        s3 += x[b + 3] as f64 * w[b + 3];
    }
    for i in chunks * 4..x.len() {
        s0 += x[i] as f64 * w[i];
    }
    (s0 + s1) + (s2 + s3)
}

/// `out[i] += c * w[i]` over f64 slices.
#[inline]
pub fn axpy(c: f64, w: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), out.len());
    for (o, &wi) in out.iter_mut().zip(w) {
        *o += c * wi;
    }
}
