//! Dense row-major matrices and the valid-region correlation they share.

use crate::error::{Error, Result};

/// Row-major 2-D array of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from a row-major slice. Errors if the length does not factor.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {}x{}={} elements, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Square matrix from a row-major slice.
    pub fn square(side: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_rows(side, side, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Row-major view of the underlying storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row-major flattening (the A' vector of the pipeline).
    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Valid-region 2-D correlation: out[m][n] = sum_{i,j} k[i][j] * img[m+i][n+j].
///
/// This is the sliding-window product the optical unit realizes; callers that
/// need the textbook flipped-kernel convolution can flip beforehand.
pub fn correlate_valid(image: &Matrix, kernel: &Matrix) -> Result<Matrix> {
    if kernel.rows() > image.rows() || kernel.cols() > image.cols() {
        return Err(Error::Dimension(format!(
            "kernel {}x{} larger than image {}x{}",
            kernel.rows(),
            kernel.cols(),
            image.rows(),
            image.cols()
        )));
    }
    let out_r = image.rows() - kernel.rows() + 1;
    let out_c = image.cols() - kernel.cols() + 1;
    let mut out = Matrix::zeros(out_r, out_c);
    for m in 0..out_r {
        for n in 0..out_c {
            let mut acc = 0.0;
            for i in 0..kernel.rows() {
                for j in 0..kernel.cols() {
                    acc += kernel.get(i, j) * image.get(m + i, n + j);
                }
            }
            out.set(m, n, acc);
        }
    }
    Ok(out)
}
