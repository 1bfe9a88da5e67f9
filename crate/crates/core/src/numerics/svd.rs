//! Truncated SVD by one-sided (Hestenes) Jacobi rotations.

use crate::error::{Error, Result};

use super::Matrix;

const ROTATION_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 30;

/// Rank-`r` factors with `m ≈ u · diag(s) · vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `rows x r`, orthonormal columns (zero columns for zero singular values).
    pub u: Matrix,
    /// Non-negative, descending.
    pub s: Vec<f32>,
    /// `cols x r`.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &s) in self.s.iter().enumerate() {
                us.set(i, j, us.get(i, j) * s);
            }
        }
        us.matmul(&self.v.transpose()).expect("svd factor shapes are consistent")
    }
}

/// Leading `rank` singular triplets of `m`.
pub fn svd_truncated(m: &Matrix, rank: usize) -> Result<Svd> {
    let min_dim = m.rows().min(m.cols());
    if rank == 0 || rank > min_dim {
        return Err(Error::Parameter(format!(
            "svd rank {rank} outside 1..={min_dim} for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    // Orthogonalize the columns of the tall orientation.
    let transposed = m.rows() < m.cols();
    let (rows, cols) = if transposed { (m.cols(), m.rows()) } else { (m.rows(), m.cols()) };
    // Column-major working copy of the tall matrix.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| if transposed { m.get(j, i) } else { m.get(i, j) } as f64)
                .collect()
        })
        .collect();
    let mut v: Vec<Vec<f64>> =
        (0..cols).map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= ROTATION_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> =
        a.iter().enumerate().map(|(j, col)| (j, col.iter().map(|x| x * x).sum::<f64>().sqrt())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    order.truncate(rank);

    let mut left = Matrix::zeros(rows, rank);
    let mut right = Matrix::zeros(cols, rank);
    let mut s = Vec::with_capacity(rank);
    for (k, &(j, sigma)) in order.iter().enumerate() {
        s.push(sigma as f32);
        if sigma > 0.0 {
            for i in 0..rows {
                left.set(i, k, (a[j][i] / sigma) as f32);
            }
        }
        for i in 0..cols {
            right.set(i, k, v[j][i] as f32);
        }
    }
    Ok(if transposed {
        Svd { u: right, s, v: left }
    } else {
        Svd { u: left, s, v: right }
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}
