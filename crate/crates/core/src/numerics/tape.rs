//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node holding its forward value. Node order is
//! creation order, which is already topological, so [`Tape::backward`] walks
//! the nodes once in reverse.
//!
//! The op set is deliberately small: matmul (with optional operand
//! transposes), add, hadamard, scalar scale, row softmax, GELU, layer norm
//! (no affine part), MSE loss, row concatenation, row slicing and column
//! broadcast. Everything the models need is composed from these.

use crate::error::{Error, Result};

use super::matrix::gemm;
use super::Matrix;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_a: bool, trans_b: bool },
    Add(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f32),
    RowSoftmax(Var),
    Gelu(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    MseLoss(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    BroadcastCols { x: Var },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
    trainable: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f32 {
        self.nodes[v.0].value.get(0, 0)
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad, trainable: false });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad: true, trainable: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is skipped by the backward pass.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, trans_a: bool, b: Var, trans_b: bool) -> Result<Var> {
        let value = gemm(self.value(a), trans_a, self.value(b), trans_b)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul { a, b, trans_a, trans_b }, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::Hadamard(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.needs(&[a]);
        self.push(Op::Scale(a, s), value, rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let row = x.row(i);
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                out.set(i, j, (e / total) as f32);
            }
        }
        let rg = self.needs(&[a]);
        self.push(Op::RowSoftmax(a), out, rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| {
            let x = x as f64;
            (0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())) as f32
        });
        let rg = self.needs(&[a]);
        self.push(Op::Gelu(a), value, rg)
    }

    /// Per-row standardization to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut rstd = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out.set(i, j, ((v as f64 - mean) * r) as f32);
            }
            rstd.push(r);
        }
        let rg = self.needs(&[a]);
        self.push(Op::LayerNorm { x: a, rstd }, out, rg)
    }

    /// Mean squared difference, a `1 x 1` node.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(format!("mse_loss: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let total: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
            .sum();
        let value = Matrix::filled(1, 1, (total / x.len() as f64) as f32);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MseLoss(a, b), value, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_rows of nothing"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::shape(format!("concat_rows: {} vs {} columns", m.cols(), cols)));
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = self.needs(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(a);
        if start + len > m.rows() || len == 0 {
            return Err(Error::shape(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                m.rows()
            )));
        }
        let cols = m.cols();
        let value = Matrix::from_vec(len, cols, m.data()[start * cols..(start + len) * cols].to_vec())?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::SliceRows { x: a, start }, value, rg))
    }

    /// Repeats a `1 x n` row `rows` times, so each column carries one value.
    pub fn broadcast_cols(&mut self, a: Var, rows: usize) -> Result<Var> {
        let m = self.value(a);
        if m.rows() != 1 {
            return Err(Error::shape(format!("broadcast_cols expects 1 row, got {}", m.rows())));
        }
        let mut data = Vec::with_capacity(rows * m.cols());
        for _ in 0..rows {
            data.extend_from_slice(m.data());
        }
        let value = Matrix::from_vec(rows, m.cols(), data)?;
        let rg = self.needs(&[a]);
        Ok(self.push(Op::BroadcastCols { x: a }, value, rg))
    }

    /// Sum of all entries as a `1 x 1` node, composed from two matmuls.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape();
        let left = self.constant(Matrix::filled(1, r, 1.0));
        let right = self.constant(Matrix::filled(c, 1, 1.0));
        let row = self.matmul(left, a)?;
        self.matmul(row, right)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let leaves = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| if n.trainable { g } else { None })
            .collect();
        Ok(Gradients { grads: leaves })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut accumulate = |v: Var, delta: Matrix| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta)?,
                slot => *slot = Some(delta),
            }
            Ok(())
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_a, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let da = if *trans_a {
                        gemm(bv, *trans_b, g, true)?
                    } else {
                        gemm(g, false, bv, !*trans_b)?
                    };
                    accumulate(*a, da)?;
                }
                if needs(*b) {
                    let db = if *trans_b {
                        gemm(g, true, av, *trans_a)?
                    } else {
                        gemm(av, !*trans_a, g, false)?
                    };
                    accumulate(*b, db)?;
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(*a, g.clone())?;
                }
                if needs(*b) {
                    accumulate(*b, g.clone())?;
                }
            }
            Op::Hadamard(a, b) => {
                if needs(*a) {
                    accumulate(*a, g.hadamard(self.value(*b))?)?;
                }
                if needs(*b) {
                    accumulate(*b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, s) => accumulate(*a, g.scale(*s))?,
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(&p, &q)| p as f64 * q as f64).sum();
                    for j in 0..y.cols() {
                        dx.set(i, j, (yr[j] as f64 * (gr[j] as f64 - dot)) as f32);
                    }
                }
                accumulate(*a, dx)?;
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let dx = x.zip_map(g, "gelu'", |x, g| {
                    let x = x as f64;
                    let inner = GELU_C * (x + GELU_K * x * x * x);
                    let th = inner.tanh();
                    let d = 0.5 * (1.0 + th)
                        + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                    (d * g as f64) as f32
                })?;
                accumulate(*a, dx)?;
            }
            Op::LayerNorm { x, rstd } => {
                let xhat = &node.value;
                let n = xhat.cols() as f64;
                let mut dx = Matrix::zeros(xhat.rows(), xhat.cols());
                for i in 0..xhat.rows() {
                    let (hr, gr) = (xhat.row(i), g.row(i));
                    let mean_g = gr.iter().map(|&v| v as f64).sum::<f64>() / n;
                    let mean_gh =
                        gr.iter().zip(hr).map(|(&p, &q)| p as f64 * q as f64).sum::<f64>() / n;
                    for j in 0..xhat.cols() {
                        let v = rstd[i] * (gr[j] as f64 - mean_g - hr[j] as f64 * mean_gh);
                        dx.set(i, j, v as f32);
                    }
                }
                accumulate(*x, dx)?;
            }
            Op::MseLoss(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.get(0, 0) as f64 / av.len() as f64;
                let diff = av.zip_map(bv, "mse'", |p, q| ((p as f64 - q as f64) * k) as f32)?;
                if needs(*b) {
                    accumulate(*b, diff.scale(-1.0))?;
                }
                if needs(*a) {
                    accumulate(*a, diff)?;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if needs(p) {
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(p, Matrix::from_vec(rows, cols, slice)?)?;
                    }
                    offset += rows;
                }
            }
            Op::SliceRows { x, start } => {
                let src = self.value(*x);
                let mut dx = Matrix::zeros(src.rows(), src.cols());
                let cols = src.cols();
                dx.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                accumulate(*x, dx)?;
            }
            Op::BroadcastCols { x } => {
                let mut sums = vec![0.0f64; g.cols()];
                for i in 0..g.rows() {
                    for (s, &v) in sums.iter_mut().zip(g.row(i)) {
                        *s += v as f64;
                    }
                }
                let row: Vec<f32> = sums.into_iter().map(|v| v as f32).collect();
                accumulate(*x, Matrix::row_vector(&row))?;
            }
        }
        Ok(())
    }
}

/// Gradients of the trainable leaves of one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` for constants and for leaves the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled when absent.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves a gradient out, zero-filled when absent.
    pub fn take(&mut self, tape: &Tape, v: Var) -> Matrix {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }
}
