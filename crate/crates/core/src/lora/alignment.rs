use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{Matrix, Rng};

use super::adapter::LoraAdapter;

/// Column-cosine statistics for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    pub key: String,
    pub mean_abs_cos: f64,
    pub max_abs_cos: f64,
    /// Columns where both deltas are non-zero.
    pub n_columns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub layers: Vec<LayerAlignment>,
    /// Mean |cos| over every compared column of every layer.
    pub mean_abs_cos: f64,
    /// Same statistic for independent Gaussian matrices of the same shapes.
    pub baseline_mean: f64,
    pub baseline_p95: f64,
    pub baseline_trials: usize,
}

impl AlignmentReport {
    pub fn exceeds_baseline(&self) -> bool {
        self.mean_abs_cos > self.baseline_p95
    }
}

/// |cos| between column `j` of `a` and of `b`; `None` if either is zero.
fn column_abs_cos(a: &Matrix, b: &Matrix, j: usize) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..a.rows() {
        let (x, y) = (a.get(i, j) as f64, b.get(i, j) as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na <= 1e-24 || nb <= 1e-24 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).abs().min(1.0))
}

/// Sum and count of per-column |cos| between two same-shaped matrices, plus the maximum.
fn compare(a: &Matrix, b: &Matrix) -> (f64, usize, f64) {
    let (mut sum, mut n, mut max) = (0.0, 0, 0.0f64);
    for j in 0..a.cols() {
        if let Some(c) = column_abs_cos(a, b, j) {
            sum += c;
            n += 1;
            max = max.max(c);
        }
    }
    (sum, n, max)
}

/// Pairs corresponding delta columns of two adapters and compares their
/// mean |cos| to a Monte-Carlo baseline of random Gaussian matrices.
pub fn alignment(a: &LoraAdapter, b: &LoraAdapter, baseline_trials: usize, seed: u64) -> Result<AlignmentReport> {
    a.check_same_keys(b)?;
    let mut layers = Vec::new();
    let mut shapes = Vec::new();
    let (mut total, mut count) = (0.0, 0usize);
    for key in a.layers.keys() {
        let (da, db) = (a.materialize(key)?, b.materialize(key)?);
        if da.shape() != db.shape() {
            return Err(crate::Error::Contract(format!("{key}: delta shapes {:?} vs {:?}", da.shape(), db.shape())));
        }
        let (sum, n, max) = compare(&da, &db);
        total += sum;
        count += n;
        shapes.push(da.shape());
        layers.push(LayerAlignment {
            key: key.clone(),
            mean_abs_cos: if n > 0 { sum / n as f64 } else { 0.0 },
            max_abs_cos: max,
            n_columns: n,
        });
    }

    let mut rng = Rng::derived(seed, 0x616c_6967);
    let mut samples = Vec::with_capacity(baseline_trials);
    for _ in 0..baseline_trials {
        let (mut s, mut n) = (0.0, 0usize);
        for &(r, c) in &shapes {
            let x = rng.normal_matrix(r, c, 1.0);
            let y = rng.normal_matrix(r, c, 1.0);
            let (sum, k, _) = compare(&x, &y);
            s += sum;
            n += k;
        }
        samples.push(if n > 0 { s / n as f64 } else { 0.0 });
    }
    samples.sort_by(f64::total_cmp);
    let baseline_mean = if samples.is_empty() { 0.0 } else { samples.iter().sum::<f64>() / samples.len() as f64 };
    let baseline_p95 = percentile(&samples, 0.95);

    Ok(AlignmentReport {
        layers,
        mean_abs_cos: if count > 0 { total / count as f64 } else { 0.0 },
        baseline_mean,
        baseline_p95,
        baseline_trials,
    })
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}
