//! Tape gradients against central finite differences of independent f64
//! reference implementations, and SVD against a symmetric eigen-solver.
//! Each check panics on failure.

use nalgebra::DMatrix;
use viewmerge::numerics::{svd_truncated, Matrix, Rng, Tape, Var};

const INSTANCES: u64 = 10;
const TOL: f64 = 1e-4;

type Ref = Vec<Vec<f64>>;

fn to_ref(m: &Matrix) -> Ref {
    (0..m.rows()).map(|i| m.row(i).iter().map(|&v| v as f64).collect()).collect()
}

fn ref_matmul(a: &Ref, b: &Ref) -> Ref {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn ref_t(a: &Ref) -> Ref {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn weighted_sum(y: &Ref, w: &Ref) -> f64 {
    y.iter().zip(w).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y)).sum()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Relative error `‖g − fd‖ / max(‖fd‖, 1e-8)`, with the central-difference
/// gradient of `f` around every input entry.
fn check<F>(name: &str, inputs: &[Ref], tape_grads: &[Matrix], f: F)
where
    F: Fn(&[Ref]) -> f64,
{
    let h = 1e-5;
    let mut num2 = 0.0;
    let mut den2 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            for j in 0..input[0].len() {
                let mut plus = inputs.to_vec();
                plus[k][i][j] += h;
                let mut minus = inputs.to_vec();
                minus[k][i][j] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let g = tape_grads[k].get(i, j) as f64;
                num2 += (g - fd).powi(2);
                den2 += fd * fd;
            }
        }
    }
    let rel = num2.sqrt() / den2.sqrt().max(1e-8);
    assert!(rel <= TOL, "{name}: relative gradient error {rel:.3e}");
}

/// Runs `build` on a tape with trainable copies of `inputs`, contracts the
/// output with a fixed random weight, and returns the input gradients.
fn tape_grads(inputs: &[Matrix], weight: &Matrix, build: impl Fn(&mut Tape, &[Var]) -> Var) -> Vec<Matrix> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = build(&mut tape, &vars);
    let w = tape.constant(weight.clone());
    let prod = tape.hadamard(out, w).unwrap();
    let loss = tape.sum_all(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect()
}

pub fn matmul_all_transpose_flags() {
    for seed in 0..INSTANCES {
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut rng = Rng::new(seed);
            let a = if ta { rng.normal_matrix(4, 3, 1.0) } else { rng.normal_matrix(3, 4, 1.0) };
            let b = if tb { rng.normal_matrix(5, 4, 1.0) } else { rng.normal_matrix(4, 5, 1.0) };
            let w = rng.normal_matrix(3, 5, 1.0);
            let g = tape_grads(&[a.clone(), b.clone()], &w, |t, v| t.matmul_t(v[0], ta, v[1], tb).unwrap());
            let wr = to_ref(&w);
            check("matmul", &[to_ref(&a), to_ref(&b)], &g, |x| {
                let a = if ta { ref_t(&x[0]) } else { x[0].clone() };
                let b = if tb { ref_t(&x[1]) } else { x[1].clone() };
                weighted_sum(&ref_matmul(&a, &b), &wr)
            });
        }
    }
}

pub fn elementwise_ops() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(100 + seed);
        let a = rng.normal_matrix(3, 4, 1.0);
        let b = rng.normal_matrix(3, 4, 1.0);
        let w = rng.normal_matrix(3, 4, 1.0);
        let wr = to_ref(&w);
        let ins = [to_ref(&a), to_ref(&b)];

        let g = tape_grads(&[a.clone(), b.clone()], &w, |t, v| t.add(v[0], v[1]).unwrap());
        check("add", &ins, &g, |x| {
            let y: Ref = x[0].iter().zip(&x[1]).map(|(p, q)| p.iter().zip(q).map(|(a, b)| a + b).collect()).collect();
            weighted_sum(&y, &wr)
        });

        let g = tape_grads(&[a.clone(), b.clone()], &w, |t, v| t.hadamard(v[0], v[1]).unwrap());
        check("hadamard", &ins, &g, |x| {
            let y: Ref = x[0].iter().zip(&x[1]).map(|(p, q)| p.iter().zip(q).map(|(a, b)| a * b).collect()).collect();
            weighted_sum(&y, &wr)
        });

        let g = tape_grads(&[a.clone()], &w, |t, v| t.scale(v[0], -1.7));
        check("scale", &ins[..1], &g, |x| {
            let y: Ref = x[0].iter().map(|r| r.iter().map(|v| v * -1.7f32 as f64).collect()).collect();
            weighted_sum(&y, &wr)
        });

        let g = tape_grads(&[a.clone()], &w, |t, v| t.gelu(v[0]));
        check("gelu", &ins[..1], &g, |x| {
            let y: Ref = x[0].iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
            weighted_sum(&y, &wr)
        });
    }
}

pub fn row_softmax_and_layer_norm() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(200 + seed);
        let a = rng.normal_matrix(4, 6, 1.5);
        let w = rng.normal_matrix(4, 6, 1.0);
        let wr = to_ref(&w);
        let ins = [to_ref(&a)];

        let g = tape_grads(&[a.clone()], &w, |t, v| t.row_softmax(v[0]));
        check("row_softmax", &ins, &g, |x| {
            let y: Ref = x[0]
                .iter()
                .map(|r| {
                    let m = r.iter().cloned().fold(f64::MIN, f64::max);
                    let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                })
                .collect();
            weighted_sum(&y, &wr)
        });

        let g = tape_grads(&[a.clone()], &w, |t, v| t.layer_norm(v[0]));
        check("layer_norm", &ins, &g, |x| {
            let y: Ref = x[0]
                .iter()
                .map(|r| {
                    let n = r.len() as f64;
                    let mean = r.iter().sum::<f64>() / n;
                    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    r.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
                })
                .collect();
            weighted_sum(&y, &wr)
        });
    }
}

pub fn mse_and_shape_ops() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(300 + seed);
        let a = rng.normal_matrix(3, 4, 1.0);
        let b = rng.normal_matrix(3, 4, 1.0);
        let c = rng.normal_matrix(2, 4, 1.0);
        let row = rng.normal_matrix(1, 4, 1.0);

        // mse_loss is already scalar; contract with a 1x1 weight.
        let w1 = Matrix::filled(1, 1, 1.3);
        let g = tape_grads(&[a.clone(), b.clone()], &w1, |t, v| t.mse_loss(v[0], v[1]).unwrap());
        check("mse_loss", &[to_ref(&a), to_ref(&b)], &g, |x| {
            let s: f64 = x[0].iter().zip(&x[1]).flat_map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b).powi(2))).sum();
            1.3f32 as f64 * s / 12.0
        });

        let w = rng.normal_matrix(5, 4, 1.0);
        let wr = to_ref(&w);
        let g = tape_grads(&[a.clone(), c.clone()], &w, |t, v| t.concat_rows(&[v[0], v[1]]).unwrap());
        check("concat_rows", &[to_ref(&a), to_ref(&c)], &g, |x| {
            let y: Ref = x[0].iter().chain(&x[1]).cloned().collect();
            weighted_sum(&y, &wr)
        });

        let w = rng.normal_matrix(2, 4, 1.0);
        let wr = to_ref(&w);
        let g = tape_grads(&[a.clone()], &w, |t, v| t.slice_rows(v[0], 1, 2).unwrap());
        check("slice_rows", &[to_ref(&a)], &g, |x| weighted_sum(&x[0][1..3].to_vec(), &wr));

        let w = rng.normal_matrix(3, 4, 1.0);
        let wr = to_ref(&w);
        let g = tape_grads(&[row.clone()], &w, |t, v| t.broadcast_cols(v[0], 3).unwrap());
        check("broadcast_cols", &[to_ref(&row)], &g, |x| {
            let y: Ref = vec![x[0][0].clone(); 3];
            weighted_sum(&y, &wr)
        });

        let w1 = Matrix::filled(1, 1, 1.0);
        let g = tape_grads(&[a.clone()], &w1, |t, v| t.sum_all(v[0]).unwrap());
        check("sum_all", &[to_ref(&a)], &g, |x| x[0].iter().flatten().sum());
    }
}

pub fn composed_attention_block() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(400 + seed);
        let x = rng.normal_matrix(5, 4, 1.0);
        let wq = rng.normal_matrix(4, 4, 0.5);
        let wk = rng.normal_matrix(4, 4, 0.5);
        let w = rng.normal_matrix(5, 4, 1.0);
        let wr = to_ref(&w);
        let g = tape_grads(&[x.clone(), wq.clone(), wk.clone()], &w, |t, v| {
            let n = t.layer_norm(v[0]);
            let q = t.matmul(n, v[1]).unwrap();
            let k = t.matmul(n, v[2]).unwrap();
            let s = t.matmul_t(q, false, k, true).unwrap();
            let p = t.row_softmax(s);
            let o = t.matmul(p, n).unwrap();
            t.gelu(o)
        });
        check("attention", &[to_ref(&x), to_ref(&wq), to_ref(&wk)], &g, |ins| {
            let n: Ref = ins[0]
                .iter()
                .map(|r| {
                    let m = r.iter().sum::<f64>() / r.len() as f64;
                    let var = r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64;
                    r.iter().map(|v| (v - m) / (var + 1e-5).sqrt()).collect()
                })
                .collect();
            let q = ref_matmul(&n, &ins[1]);
            let k = ref_matmul(&n, &ins[2]);
            let s = ref_matmul(&q, &ref_t(&k));
            let p: Ref = s
                .iter()
                .map(|r| {
                    let m = r.iter().cloned().fold(f64::MIN, f64::max);
                    let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    e.iter().map(|v| v / z).collect()
                })
                .collect();
            let o = ref_matmul(&p, &n);
            let y: Ref = o.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
            weighted_sum(&y, &wr)
        });
    }
}

pub fn svd_matches_eigen_oracle() {
    for seed in 0..INSTANCES {
        let mut rng = Rng::new(500 + seed);
        let (r, c) = if seed % 2 == 0 { (9, 6) } else { (5, 8) };
        let m = rng.normal_matrix(r, c, 1.0);
        let k = r.min(c);
        let svd = svd_truncated(&m, k).unwrap();

        let dm = DMatrix::from_fn(r, c, |i, j| m.get(i, j) as f64);
        let gram = dm.transpose() * &dm;
        let mut eig: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|&e| e.max(0.0).sqrt()).collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (i, &s) in svd.s.iter().enumerate() {
            let rel = (s as f64 - eig[i]).abs() / eig[0];
            assert!(rel <= 1e-5, "seed {seed}: singular value {i}: {s} vs {}", eig[i]);
        }
    }
}
