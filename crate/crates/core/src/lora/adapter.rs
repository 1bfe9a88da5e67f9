use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::denoiser::{attention_projection_keys, DenoiserConfig, LayerDeltas};
use crate::error::{Error, Result};
use crate::numerics::{svd_truncated, Matrix, Rng};
use crate::scenegen::Token;

/// Rank used when nothing else is configured.
pub const DEFAULT_RANK: usize = 8;

/// One low-rank factor pair: `delta = scale * a * b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraLayer {
    /// `m x r`
    pub a: Matrix,
    /// `r x n`
    pub b: Matrix,
    pub scale: f32,
}

impl LoraLayer {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let layer = Self { a, b, scale: 1.0 };
        layer.validate()?;
        Ok(layer)
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Shape of the full delta.
    pub fn delta_shape(&self) -> (usize, usize) {
        (self.a.rows(), self.b.cols())
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.a.cols();
        if self.b.rows() != r {
            return Err(Error::shape(format!("A is {:?} but B is {:?}", self.a.shape(), self.b.shape())));
        }
        if r == 0 || r > self.a.rows().min(self.b.cols()) {
            return Err(Error::Parameter(format!(
                "rank {r} outside 1..={}",
                self.a.rows().min(self.b.cols())
            )));
        }
        if !self.scale.is_finite() {
            return Err(Error::Parameter("non-finite adapter scale".into()));
        }
        Ok(())
    }

    pub fn delta(&self) -> Matrix {
        let mut d = self.a.matmul(&self.b).expect("factor shapes validated");
        if self.scale != 1.0 {
            d = d.scale(self.scale);
        }
        d
    }
}

/// Low-rank adapter over a set of attention projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub layers: BTreeMap<String, LoraLayer>,
    pub concept_tag: String,
    pub uid_tokens: Vec<Token>,
}

impl LoraAdapter {
    /// Fresh adapter on every attention projection: `A = 0`, `B ~ N(0, 1/√n)`,
    /// so the initial delta is exactly zero and every delta column lies in the
    /// span of the trained factor `A`.
    pub fn init(cfg: &DenoiserConfig, rank: usize, concept_tag: &str, uid_tokens: Vec<Token>, seed: u64) -> Result<Self> {
        let d = cfg.embed_dim;
        if rank == 0 || rank > d {
            return Err(Error::Parameter(format!("rank {rank} outside 1..={d}")));
        }
        let mut rng = Rng::derived(seed, 0x6c_6f7261);
        let layers = attention_projection_keys(cfg)
            .into_iter()
            .map(|key| {
                let b = rng.normal_matrix(rank, d, 1.0 / (d as f32).sqrt());
                (key, LoraLayer { a: Matrix::zeros(d, rank), b, scale: 1.0 })
            })
            .collect();
        Ok(Self { layers, concept_tag: concept_tag.to_string(), uid_tokens })
    }

    /// Checks factor shapes and that every key is an attention projection.
    pub fn validate(&self, cfg: &DenoiserConfig) -> Result<()> {
        let allowed = attention_projection_keys(cfg);
        for (key, layer) in &self.layers {
            if !allowed.contains(key) {
                return Err(Error::Contract(format!("adapter targets `{key}`, which is not an attention projection")));
            }
            layer.validate()?;
            if layer.delta_shape() != (cfg.embed_dim, cfg.embed_dim) {
                return Err(Error::shape(format!("{key}: delta shape {:?}", layer.delta_shape())));
            }
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.layers.keys()
    }

    /// `scale · A·B` for one layer.
    pub fn materialize(&self, key: &str) -> Result<Matrix> {
        self.layers.get(key).map(LoraLayer::delta).ok_or_else(|| Error::Key(key.to_string()))
    }

    /// Every layer's delta.
    pub fn deltas(&self) -> LayerDeltas {
        self.layers.iter().map(|(k, l)| (k.clone(), l.delta())).collect()
    }

    /// Adapter whose deltas equal `deltas`, factored at `rank` per layer.
    pub fn from_deltas(deltas: &LayerDeltas, rank: usize, concept_tag: &str, uid_tokens: Vec<Token>) -> Result<Self> {
        let layers = deltas
            .iter()
            .map(|(k, d)| Ok((k.clone(), extract_lora(d, rank)?)))
            .collect::<Result<_>>()?;
        Ok(Self { layers, concept_tag: concept_tag.to_string(), uid_tokens })
    }

    /// Errors unless both adapters target exactly the same layers.
    pub fn check_same_keys(&self, other: &LoraAdapter) -> Result<()> {
        if self.layers.keys().ne(other.layers.keys()) {
            return Err(Error::Contract(format!(
                "adapters `{}` and `{}` target different layers",
                self.concept_tag, other.concept_tag
            )));
        }
        Ok(())
    }
}

/// Best rank-`r` factorization `A = U·√S`, `B = √S·Vᵀ`.
pub fn extract_lora(delta: &Matrix, rank: usize) -> Result<LoraLayer> {
    let svd = svd_truncated(delta, rank)?;
    let roots: Vec<f32> = svd.s.iter().map(|s| s.max(0.0).sqrt()).collect();
    let a = Matrix::from_fn(delta.rows(), rank, |i, k| svd.u.get(i, k) * roots[k]);
    let b = Matrix::from_fn(rank, delta.cols(), |k, j| roots[k] * svd.v.get(j, k));
    Ok(LoraLayer { a, b, scale: 1.0 })
}
