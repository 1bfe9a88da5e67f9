use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::LayerDeltas;
use crate::error::{Error, Result};
use crate::lora::{Container, LoraAdapter, KIND_GATES};
use crate::numerics::Matrix;

/// Added to the norm product so the cosine stays finite for zero gates.
pub const COSINE_EPS: f64 = 1e-8;

/// Per-column gate vectors of one layer, each stored as a `1 x n` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePair {
    pub m_v: Matrix,
    pub m_o: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeGates {
    pub layers: BTreeMap<String, GatePair>,
}

impl MergeGates {
    /// All-ones gates sized to each adapter layer's delta columns.
    pub fn ones_for(adapter: &LoraAdapter) -> Self {
        let layers = adapter
            .layers
            .iter()
            .map(|(k, l)| {
                let n = l.delta_shape().1;
                (k.clone(), GatePair { m_v: Matrix::filled(1, n, 1.0), m_o: Matrix::filled(1, n, 1.0) })
            })
            .collect();
        Self { layers }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.values().all(|g| g.m_v.is_finite() && g.m_o.is_finite())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(KIND_GATES);
        for (k, g) in &self.layers {
            c.tensors.insert(format!("{k}.m_v"), g.m_v.clone());
            c.tensors.insert(format!("{k}.m_o"), g.m_o.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND_GATES)?;
        let mut layers = BTreeMap::new();
        for name in c.tensors.keys() {
            let Some(key) = name.strip_suffix(".m_v") else { continue };
            let m_v = c.tensor(name)?.clone();
            let m_o = c.tensor(&format!("{key}.m_o"))?.clone();
            if m_v.rows() != 1 || m_v.shape() != m_o.shape() {
                return Err(Error::Format { offset: 8, detail: format!("gate shapes for `{key}` disagree") });
            }
            layers.insert(key.to_string(), GatePair { m_v, m_o });
        }
        if 2 * layers.len() != c.tensors.len() {
            return Err(Error::Format { offset: 8, detail: "unpaired gate tensors".into() });
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Scales column `j` of `delta` by `gate[j]`.
fn gate_columns(delta: &Matrix, gate: &Matrix) -> Result<Matrix> {
    if gate.rows() != 1 || gate.cols() != delta.cols() {
        return Err(Error::shape(format!(
            "gate {:?} does not match delta with {} columns",
            gate.shape(),
            delta.cols()
        )));
    }
    let g = gate.data();
    Ok(Matrix::from_fn(delta.rows(), delta.cols(), |i, j| delta.get(i, j) * g[j]))
}

/// `m_o ⊗ Δo + m_v ⊗ Δv`, with each gate scaling whole delta columns.
pub fn gated_delta_from(view: &LayerDeltas, object: &LayerDeltas, gates: &MergeGates) -> Result<LayerDeltas> {
    let mut out = LayerDeltas::new();
    for (key, g) in &gates.layers {
        let dv = view.get(key).ok_or_else(|| Error::Key(key.clone()))?;
        let d_o = object.get(key).ok_or_else(|| Error::Key(key.clone()))?;
        out.insert(key.clone(), gate_columns(d_o, &g.m_o)?.add(&gate_columns(dv, &g.m_v)?)?);
    }
    if out.len() != view.len() || out.len() != object.len() {
        return Err(Error::Contract("gates and adapters cover different layers".into()));
    }
    Ok(out)
}

pub fn gated_delta(view: &LoraAdapter, object: &LoraAdapter, gates: &MergeGates) -> Result<LayerDeltas> {
    view.check_same_keys(object)?;
    gated_delta_from(&view.deltas(), &object.deltas(), gates)
}

/// What the orthogonality penalty acts on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyTarget {
    /// Cosine between the gate vectors `m_v` and `m_o` of each layer.
    #[default]
    GateVectors,
    /// Absolute dot products between corresponding gated delta columns.
    DeltaColumns,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// `|⟨v, o⟩| / (‖v‖‖o‖ + ε)` and its gradients with respect to `v` and `o`.
fn abs_cosine_with_grad(v: &[f32], o: &[f32]) -> (f64, Vec<f64>, Vec<f64>) {
    let c = dot(v, o);
    let (nv, no) = (dot(v, v).sqrt(), dot(o, o).sqrt());
    let den = nv * no + COSINE_EPS;
    let value = c.abs() / den;
    let sign = if c > 0.0 {
        1.0
    } else if c < 0.0 {
        -1.0
    } else {
        0.0
    };
    let grad = |x: &[f32], y: &[f32], nx: f64, ny: f64| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let radial = if nx > 0.0 { c.abs() * ny * xi as f64 / (nx * den * den) } else { 0.0 };
                sign * yi as f64 / den - radial
            })
            .collect()
    };
    let gv = grad(v, o, nv, no);
    let go = grad(o, v, no, nv);
    (value, gv, go)
}

/// Penalty value with gradients for every gate row.
pub struct PenaltyGrad {
    pub value: f64,
    pub grads: BTreeMap<String, (Matrix, Matrix)>,
}

/// Sum over layers of the absolute gate-vector cosine.
pub fn cosine_penalty(gates: &MergeGates) -> f64 {
    gates.layers.values().map(|g| abs_cosine_with_grad(g.m_v.data(), g.m_o.data()).0).sum()
}

pub fn cosine_penalty_grad(gates: &MergeGates) -> PenaltyGrad {
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for (k, g) in &gates.layers {
        let (p, gv, go) = abs_cosine_with_grad(g.m_v.data(), g.m_o.data());
        value += p;
        let to_row = |v: Vec<f64>| Matrix::row_vector(&v.into_iter().map(|x| x as f32).collect::<Vec<_>>());
        grads.insert(k.clone(), (to_row(gv), to_row(go)));
    }
    PenaltyGrad { value, grads }
}

/// `Σ_layers Σ_j |m_v[j]·m_o[j]·⟨Δv_j, Δo_j⟩|` with gradients.
pub fn column_dot_penalty_grad(view: &LayerDeltas, object: &LayerDeltas, gates: &MergeGates) -> Result<PenaltyGrad> {
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for (k, g) in &gates.layers {
        let dv = view.get(k).ok_or_else(|| Error::Key(k.clone()))?;
        let d_o = object.get(k).ok_or_else(|| Error::Key(k.clone()))?;
        let n = g.m_v.cols();
        let (mut gv, mut go) = (vec![0.0f32; n], vec![0.0f32; n]);
        for j in 0..n {
            let d = dot(&dv.column(j), &d_o.column(j));
            let (mv, mo) = (g.m_v.data()[j] as f64, g.m_o.data()[j] as f64);
            let term = mv * mo * d;
            value += term.abs();
            let s = term.signum();
            gv[j] = (s * mo * d) as f32;
            go[j] = (s * mv * d) as f32;
        }
        grads.insert(k.clone(), (Matrix::row_vector(&gv), Matrix::row_vector(&go)));
    }
    Ok(PenaltyGrad { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn one_layer(v: &[f32], o: &[f32]) -> MergeGates {
        let mut layers = BTreeMap::new();
        layers.insert("k".to_string(), GatePair { m_v: Matrix::row_vector(v), m_o: Matrix::row_vector(o) });
        MergeGates { layers }
    }

    #[test]
    fn orthogonal_and_identical_gates() {
        assert_eq!(cosine_penalty(&one_layer(&[1.0, 0.0], &[0.0, 3.0])), 0.0);
        let p = cosine_penalty(&one_layer(&[0.5, 2.0, -1.0], &[0.5, 2.0, -1.0]));
        assert!((p - 1.0).abs() < 1e-7);
    }

    #[test]
    fn negating_one_gate_keeps_penalty() {
        let g = one_layer(&[0.3, -1.2, 0.8], &[1.0, 0.4, 0.1]);
        let neg = one_layer(&[0.3, -1.2, 0.8], &[-1.0, -0.4, -0.1]);
        assert!((cosine_penalty(&g) - cosine_penalty(&neg)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let v: Vec<f32> = (0..6).map(|_| rng.normal() as f32).collect();
        let o: Vec<f32> = (0..6).map(|_| rng.normal() as f32).collect();
        let (_, gv, go) = abs_cosine_with_grad(&v, &o);
        let f = |v: &[f64], o: &[f64]| {
            let c: f64 = v.iter().zip(o).map(|(a, b)| a * b).sum();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let no = o.iter().map(|a| a * a).sum::<f64>().sqrt();
            c.abs() / (nv * no + COSINE_EPS)
        };
        let (v64, o64): (Vec<f64>, Vec<f64>) =
            (v.iter().map(|&x| x as f64).collect(), o.iter().map(|&x| x as f64).collect());
        let h = 1e-6;
        for j in 0..6 {
            let (mut vp, mut vm) = (v64.clone(), v64.clone());
            vp[j] += h;
            vm[j] -= h;
            let fd = (f(&vp, &o64) - f(&vm, &o64)) / (2.0 * h);
            assert!((fd - gv[j]).abs() <= 1e-4 * fd.abs().max(1e-3), "v[{j}]: {fd} vs {}", gv[j]);
            let (mut op, mut om) = (o64.clone(), o64.clone());
            op[j] += h;
            om[j] -= h;
            let fd = (f(&v64, &op) - f(&v64, &om)) / (2.0 * h);
            assert!((fd - go[j]).abs() <= 1e-4 * fd.abs().max(1e-3), "o[{j}]: {fd} vs {}", go[j]);
        }
    }

    #[test]
    fn gate_length_mismatch_is_shape_error() {
        let mut view = LayerDeltas::new();
        view.insert("k".into(), Matrix::filled(3, 2, 1.0));
        let object = view.clone();
        let gates = one_layer(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]);
        assert!(matches!(gated_delta_from(&view, &object, &gates), Err(Error::Shape(_))));
    }
}
