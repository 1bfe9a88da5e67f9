//! Dense row-major `f32` matrices.
//!
//! Storage is single precision; every reduction (matrix products, norms, dot
//! products) accumulates in `f64` before rounding back.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// A `1 x n` matrix.
    pub fn row_vector(values: &[f32]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    /// An `n x 1` matrix.
    pub fn col_vector(values: &[f32]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f32> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn zip_map(
        &self,
        other: &Matrix,
        what: &str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Matrix> {
        self.check_same_shape(other, what)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: f32) -> Matrix {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f32, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.axpy(1.0, other)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_F / ‖other‖_F`, or the absolute difference when `other` is zero.
    pub fn relative_error(&self, reference: &Matrix) -> Result<f64> {
        self.check_same_shape(reference, "relative_error")?;
        let diff: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let norm = reference.frobenius_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }

    /// Little-endian byte image of the payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        gemm(self, false, other, false)
    }
}

/// Dot product with four independent f64 partial sums.
fn dot_f64(x: &[f32], y: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] as f64 * b[l] as f64;
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&a, &b) in xr.iter().zip(yr) {
        s += a as f64 * b as f64;
    }
    s
}

/// General product `op(a) · op(b)` where `op` optionally transposes.
///
/// Accumulates in `f64`.
pub fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Result<Matrix> {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != kb {
        return Err(Error::shape(format!(
            "matmul inner dimensions differ: {m}x{k} · {kb}x{n}"
        )));
    }
    let mut out = Matrix::zeros(m, n);
    match (trans_a, trans_b) {
        (false, false) => {
            let b64: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
            let mut acc = vec![0.0f64; n];
            for i in 0..m {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for (p, &aip) in a.row(i).iter().enumerate() {
                    if aip == 0.0 {
                        continue;
                    }
                    let aip = aip as f64;
                    for (acc_j, &bpj) in acc.iter_mut().zip(&b64[p * n..(p + 1) * n]) {
                        *acc_j += aip * bpj;
                    }
                }
                for (o, &v) in out.data[i * n..(i + 1) * n].iter_mut().zip(&acc) {
                    *o = v as f32;
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = a.row(i);
                for j in 0..n {
                    out.data[i * n + j] = dot_f64(arow, b.row(j)) as f32;
                }
            }
        }
        (true, false) => {
            let b64: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
            let mut acc = vec![0.0f64; m * n];
            for p in 0..k {
                let brow = &b64[p * n..(p + 1) * n];
                for (i, &api) in a.row(p).iter().enumerate() {
                    if api == 0.0 {
                        continue;
                    }
                    let api = api as f64;
                    for (acc_ij, &bpj) in acc[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *acc_ij += api * bpj;
                    }
                }
            }
            for (o, v) in out.data.iter_mut().zip(acc) {
                *o = v as f32;
            }
        }
        (true, true) => {
            let at = a.transpose();
            let bt = b.transpose();
            return gemm(&at, false, &bt, false);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0f64;
            for p in 0..a.cols() {
                s += a.get(i, p) as f64 * b.get(p, j) as f64;
            }
            s as f32
        })
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = Rng::new(3);
        let m = rng.normal_matrix(3, 5, 1.0);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn rank_one_outer_product() {
        let a = Matrix::col_vector(&[1.0, -2.0, 3.0]);
        let b = Matrix::row_vector(&[0.5, 4.0]);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(c.get(i, j), a.get(i, 0) * b.get(0, j));
            }
        }
    }

    #[test]
    fn random_product_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = rng.normal_matrix(5, 4, 1.0);
        let b = rng.normal_matrix(4, 3, 1.0);
        let c = a.matmul(&b).unwrap();
        assert!(c.relative_error(&naive(&a, &b)).unwrap() <= 1e-6);
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = Rng::new(5);
        let a = rng.normal_matrix(4, 6, 1.0);
        let b = rng.normal_matrix(5, 6, 1.0);
        let c = rng.normal_matrix(4, 5, 1.0);
        let nt = gemm(&a, false, &b, true).unwrap();
        assert!(nt.relative_error(&naive(&a, &b.transpose())).unwrap() < 1e-6);
        let tn = gemm(&a, true, &c, false).unwrap();
        assert!(tn.relative_error(&naive(&a.transpose(), &c)).unwrap() < 1e-6);
        let d = rng.normal_matrix(3, 4, 1.0);
        let tt = gemm(&c, true, &d, true).unwrap();
        assert!(tt.relative_error(&naive(&c.transpose(), &d.transpose())).unwrap() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
        assert!(matches!(Matrix::from_vec(2, 2, vec![1.0; 3]), Err(Error::Shape(_))));
    }
}
