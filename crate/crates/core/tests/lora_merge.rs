//! Adapter extraction against an independent SVD, merge identities against
//! scalar loops, and gate training behaviour.

mod common;

use common::{random_adapter, random_deltas, tiny_config};
use nalgebra::DMatrix;
use viewmerge::denoiser::{forward, ModelWeights};
use viewmerge::lora::{extract_lora, LoraAdapter};
use viewmerge::merge::{
    compose_for_inference, cosine_penalty, gated_delta, linear_deltas, merge_linear, train_merge, GatePair,
    MergeConfig, MergeGates,
};
use viewmerge::numerics::{Matrix, Rng};
use viewmerge::scenegen::{describe, make_splits, Background, ConceptTokens, ObjectId, SplitRequest, ViewId, Elevation};

fn max_diff(a: &Matrix, b: &Matrix) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn singular_values(m: &Matrix) -> Vec<f64> {
    let d = DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) as f64);
    let mut s: Vec<f64> = d.svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

#[test]
fn full_rank_extraction_reconstructs() {
    let mut rng = Rng::new(3);
    for (r, c, k) in [(8, 8, 8), (12, 6, 6), (5, 9, 5)] {
        let m = rng.normal_matrix(r, c, 1.0);
        let layer = extract_lora(&m, k).unwrap();
        assert!(max_diff(&layer.delta(), &m) <= 1e-5, "{r}x{c}");
    }
}

#[test]
fn low_rank_input_is_recovered_at_its_rank() {
    let mut rng = Rng::new(4);
    let m = rng.normal_matrix(16, 4, 0.5).matmul(&rng.normal_matrix(4, 16, 0.5)).unwrap();
    let layer = extract_lora(&m, 4).unwrap();
    assert!(max_diff(&layer.delta(), &m) <= 1e-5);
}

#[test]
fn truncation_residual_matches_tail_singular_values() {
    let mut rng = Rng::new(5);
    for _ in 0..5 {
        let m = rng.normal_matrix(10, 14, 1.0);
        let s = singular_values(&m);
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let residual = extract_lora(&m, k).unwrap().delta().sub(&m).unwrap().frobenius_norm();
            let optimal = s[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((residual - optimal).abs() <= 1e-4 * (1.0 + optimal), "rank {k}: {residual} vs {optimal}");
            assert!(residual <= last + 1e-6, "residual grew at rank {k}");
            last = residual;
        }
    }
}

#[test]
fn linear_merge_endpoints_and_convexity() {
    let cfg = tiny_config();
    let v = random_adapter(&cfg, 2, "v", 1);
    let o = random_adapter(&cfg, 2, "o", 2);
    let (dv, d_o) = (v.deltas(), o.deltas());
    for (w, expect_v, expect_o) in [(1.0f32, 1.0f32, 0.0f32), (0.0, 0.0, 1.0), (0.3, 0.3, 0.7)] {
        let merged = linear_deltas(&v, &o, w).unwrap();
        for (key, m) in &merged {
            let oracle = Matrix::from_fn(m.rows(), m.cols(), |i, j| {
                expect_v * dv[key].get(i, j) + expect_o * d_o[key].get(i, j)
            });
            assert!(max_diff(m, &oracle) <= 1e-5, "w={w} {key}");
        }
    }
    let as_adapter = merge_linear(&v, &o, 0.3).unwrap();
    for (key, m) in linear_deltas(&v, &o, 0.3).unwrap() {
        assert!(max_diff(&as_adapter.materialize(&key).unwrap(), &m) <= 1e-5);
    }
    assert!(linear_deltas(&v, &o, 1.5).is_err());
}

fn random_gates(adapter: &LoraAdapter, seed: u64) -> MergeGates {
    let mut rng = Rng::new(seed);
    let mut gates = MergeGates::ones_for(adapter);
    for pair in gates.layers.values_mut() {
        let n = pair.m_v.cols();
        *pair = GatePair { m_v: rng.normal_matrix(1, n, 1.0), m_o: rng.normal_matrix(1, n, 1.0) };
    }
    gates
}

#[test]
fn gated_delta_matches_scalar_loop() {
    let cfg = tiny_config();
    let v = random_adapter(&cfg, 3, "v", 7);
    let o = random_adapter(&cfg, 3, "o", 8);
    for seed in 0..5 {
        let gates = random_gates(&v, seed);
        let out = gated_delta(&v, &o, &gates).unwrap();
        for (key, m) in &out {
            let (dv, d_o) = (v.materialize(key).unwrap(), o.materialize(key).unwrap());
            let g = &gates.layers[key];
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let oracle = g.m_o.get(0, j) as f64 * d_o.get(i, j) as f64 + g.m_v.get(0, j) as f64 * dv.get(i, j) as f64;
                    assert!((m.get(i, j) as f64 - oracle).abs() <= 1e-6, "{key} ({i},{j})");
                }
            }
        }
    }
}

#[test]
fn unit_gates_sum_the_deltas() {
    let cfg = tiny_config();
    let v = random_adapter(&cfg, 2, "v", 1);
    let o = random_adapter(&cfg, 2, "o", 2);
    let out = gated_delta(&v, &o, &MergeGates::ones_for(&v)).unwrap();
    for (key, m) in &out {
        let sum = v.materialize(key).unwrap().add(&o.materialize(key).unwrap()).unwrap();
        assert!(max_diff(m, &sum) <= 1e-6);
    }
}

#[test]
fn composed_weights_equal_adapted_forward() {
    let cfg = tiny_config();
    let base = ModelWeights::init(&cfg, 0).unwrap();
    let v = random_adapter(&cfg, 2, "v", 1);
    let o = random_adapter(&cfg, 2, "o", 2);
    let gates = random_gates(&v, 9);
    let composed = compose_for_inference(&base, &v, &o, &gates).unwrap();
    let deltas = gated_delta(&v, &o, &gates).unwrap();
    let x = Rng::new(1).normal_matrix(cfg.grid, cfg.grid, 1.0);
    let p = describe(None, ObjectId::Ring);
    for t in [0, 7, 19] {
        let a = forward(&composed, None, &x, t, &p).unwrap();
        let b = forward(&base, Some(&deltas), &x, t, &p).unwrap();
        assert!(max_diff(&a, &b) <= 1e-4, "t={t}");
    }
}

#[test]
fn mismatched_adapters_are_rejected() {
    let cfg = tiny_config();
    let v = random_adapter(&cfg, 2, "v", 1);
    let mut o = random_adapter(&cfg, 2, "o", 2);
    let first = o.layers.keys().next().unwrap().clone();
    o.layers.remove(&first);
    assert!(gated_delta(&v, &o, &MergeGates::ones_for(&v)).is_err());
    assert!(linear_deltas(&v, &o, 0.5).is_err());
}

fn merge_data(seed: u64) -> (viewmerge::scenegen::Dataset, viewmerge::scenegen::Dataset) {
    let cfg = tiny_config();
    let req = SplitRequest {
        target_view: ViewId::new(Elevation::Mid, 2).unwrap(),
        view_object: ObjectId::Square,
        novel_object: ObjectId::Ring,
        n_object_shots: 2,
        background: Background::Plain,
        grid: cfg.grid,
        object_shot_views: None,
    };
    let tokens = ConceptTokens::draw(&mut Rng::new(seed)).unwrap();
    let s = make_splits(&req, tokens, seed).unwrap();
    (s.view_shot, s.object_shots)
}

#[test]
fn strong_penalty_drives_gates_apart() {
    let cfg = tiny_config();
    let base = ModelWeights::init(&cfg, 0).unwrap();
    for seed in 0..10 {
        let v = random_adapter(&cfg, 2, "v", 100 + seed);
        let o = random_adapter(&cfg, 2, "o", 200 + seed);
        let (vd, od) = merge_data(seed);
        let config = MergeConfig { lambda: 1e3, iterations: 100, lr: 5e-5, seed, ..MergeConfig::default() };
        let (gates, log) = train_merge(&base, &v, &o, &vd, &od, &config).unwrap();
        let first = log[0].penalty;
        let last = cosine_penalty(&gates);
        assert!(last < first, "seed {seed}: penalty {first} -> {last}");
    }
}

#[test]
fn gate_training_leaves_adapters_and_base_untouched() {
    let cfg = tiny_config();
    let base = ModelWeights::init(&cfg, 0).unwrap();
    let v = random_adapter(&cfg, 2, "v", 1);
    let o = random_adapter(&cfg, 2, "o", 2);
    let (base_before, v_before, o_before) = (base.clone(), v.clone(), o.clone());
    let (vd, od) = merge_data(0);
    let config = MergeConfig { iterations: 10, lr: 0.1, ..MergeConfig::default() };
    let (gates, log) = train_merge(&base, &v, &o, &vd, &od, &config).unwrap();
    assert_eq!(log.len(), 10);
    assert_ne!(gates, MergeGates::ones_for(&v));
    assert_eq!(base, base_before);
    assert_eq!(v, v_before);
    assert_eq!(o, o_before);
    let again = train_merge(&base, &v, &o, &vd, &od, &config).unwrap().0;
    assert_eq!(gates, again);
}

#[test]
fn zero_deltas_give_zero_merge() {
    let cfg = tiny_config();
    let zeros: viewmerge::denoiser::LayerDeltas =
        random_deltas(&cfg, 1, 0).into_iter().map(|(k, m)| (k, Matrix::zeros(m.rows(), m.cols()))).collect();
    let z = LoraAdapter::from_deltas(&zeros, 1, "z", vec![]).unwrap();
    for m in gated_delta(&z, &z, &random_gates(&z, 1)).unwrap().values() {
        assert_eq!(m.max_abs(), 0.0);
    }
}
