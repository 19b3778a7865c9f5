use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Central-difference gradient of a plain closure; independent of the graph.
fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + eps;
            let plus = f(&xs);
            xs[i] = orig - eps;
            let minus = f(&xs);
            xs[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        let rel = (a - e).abs() / a.abs().max(e.abs()).max(1e-8);
        assert!(rel < tol, "entry {i}: {a} vs {e} (rel {rel:e})");
    }
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::identity(2));
    let m = g.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let out = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(Tensor::matrix(&[vec![1.0, 2.0]]));
    let b = g.constant(Tensor::matrix(&[vec![3.0], vec![4.0]]));
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[11.0]);
    assert_eq!(g.value(out).shape(), &[1, 1]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, AutogradError::ShapeMismatch { .. }));
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a0 = random(&mut rng, 12);
    let b0 = random(&mut rng, 8);
    let w = random(&mut rng, 6);
    let loss_of = |a: &[f64], b: &[f64]| {
        let prod = matmul_raw(a, b, 3, 4, 2);
        prod.iter().zip(&w).map(|(p, w)| (p * w).tanh()).sum::<f64>()
    };
    let mut g = Graph::new();
    let a = g.leaf(Tensor::new(vec![3, 4], a0.clone()).unwrap());
    let b = g.leaf(Tensor::new(vec![4, 2], b0.clone()).unwrap());
    let wv = g.constant(Tensor::new(vec![3, 2], w.clone()).unwrap());
    let p = g.matmul(a, b).unwrap();
    let pw = g.mul(p, wv).unwrap();
    let t = g.tanh(pw).unwrap();
    let l = g.sum(t);
    g.backward(l).unwrap();
    let fa = fd_gradient(&|x| loss_of(x, &b0), &a0, 1e-6);
    let fb = fd_gradient(&|x| loss_of(&a0, x), &b0, 1e-6);
    assert_close(g.grad(a).unwrap().data(), &fa, 1e-6);
    assert_close(g.grad(b).unwrap().data(), &fb, 1e-6);
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let b = g.constant(Tensor::vector(vec![4.0, 5.0, 6.0]));
    let m = g.elementwise(Elementwise::Mul, a, Some(b)).unwrap();
    assert_eq!(g.value(m).data(), &[4.0, 10.0, 18.0]);

    let z = g.leaf(Tensor::vector(vec![0.0]));
    let t = g.elementwise(Elementwise::Tanh, z, None).unwrap();
    assert_eq!(g.value(t).data(), &[0.0]);
    let l = g.sum(t);
    g.backward(l).unwrap();
    assert_eq!(g.grad(z).unwrap().data(), &[1.0]);
}

#[test]
fn log_rejects_non_positive() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 0.0]));
    assert_eq!(g.log(a).unwrap_err(), AutogradError::Domain { index: 1, value: 0.0 });
    let b = g.constant(Tensor::vector(vec![-2.0]));
    assert!(g.log(b).is_err());
}

#[test]
fn binary_rejects_general_broadcast() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let col = g.constant(Tensor::zeros(&[2]));
    assert!(g.add(a, col).is_err());
    assert!(g.elementwise(Elementwise::Add, a, None).is_err());
}

#[test]
fn bias_broadcast_gradient_is_column_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = random(&mut rng, 6);
    let b0 = random(&mut rng, 3);
    let up = random(&mut rng, 6);
    let loss_of = |bias: &[f64]| {
        x0.iter()
            .enumerate()
            .map(|(i, x)| ((x + bias[i % 3]).tanh()) * up[i])
            .sum::<f64>()
    };
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2, 3], x0.clone()).unwrap());
    let b = g.leaf(Tensor::vector(b0.clone()));
    let u = g.constant(Tensor::new(vec![2, 3], up.clone()).unwrap());
    let s = g.add(x, b).unwrap();
    let t = g.tanh(s).unwrap();
    let tu = g.mul(t, u).unwrap();
    let l = g.sum(tu);
    g.backward(l).unwrap();
    let fd = fd_gradient(&loss_of, &b0, 1e-6);
    assert_close(g.grad(b).unwrap().data(), &fd, 1e-6);
}

#[test]
fn unary_and_binary_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a0: Vec<f64> = (0..6).map(|_| rng.random_range(0.2..2.0)).collect();
    let b0 = random(&mut rng, 6);
    // L = Σ log(a) * exp(b) - tanh(a - b)
    let loss_of = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.ln() * y.exp() - (x - y).tanh())
            .sum::<f64>()
    };
    let mut g = Graph::new();
    let a = g.leaf(Tensor::new(vec![2, 3], a0.clone()).unwrap());
    let b = g.leaf(Tensor::new(vec![2, 3], b0.clone()).unwrap());
    let la = g.log(a).unwrap();
    let eb = g.exp(b).unwrap();
    let prod = g.mul(la, eb).unwrap();
    let diff = g.sub(a, b).unwrap();
    let th = g.tanh(diff).unwrap();
    let out = g.sub(prod, th).unwrap();
    let l = g.sum(out);
    g.backward(l).unwrap();
    assert_close(g.grad(a).unwrap().data(), &fd_gradient(&|x| loss_of(x, &b0), &a0, 1e-6), 1e-6);
    assert_close(g.grad(b).unwrap().data(), &fd_gradient(&|x| loss_of(&a0, x), &b0, 1e-6), 1e-6);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let s = g.softmax_lastdim(x, None).unwrap();
    for v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
    let s = g.softmax_lastdim(x, None).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = g.softmax_lastdim(x, Some(&[true, true, false])).unwrap();
    let sigma = 0.2689414213699951; // e / (e + e²)
    let out = g.value(s).data();
    assert!((out[0] - sigma).abs() < 1e-15);
    assert!((out[1] - (1.0 - sigma)).abs() < 1e-15);
    assert_eq!(out[2], 0.0);
}

#[test]
fn softmax_fully_masked_row_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 2]));
    let err = g.softmax_lastdim(x, Some(&[true, false, false, false])).unwrap_err();
    assert_eq!(err, AutogradError::FullyMasked { row: 1 });
}

#[test]
fn masked_softmax_gradient_is_exactly_zero_on_masked_slots() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = random(&mut rng, 8);
    let w = random(&mut rng, 8);
    let mask = [true, false, true, true, false, true, true, true];
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 4], x0.clone()).unwrap());
    let wv = g.constant(Tensor::new(vec![2, 4], w.clone()).unwrap());
    let s = g.softmax_lastdim(x, Some(&mask)).unwrap();
    let sw = g.mul(s, wv).unwrap();
    let l = g.sum(sw);
    g.backward(l).unwrap();
    let grad = g.grad(x).unwrap();
    assert_eq!(grad.data()[1], 0.0);
    assert_eq!(grad.data()[4], 0.0);
    let loss_of = |xs: &[f64]| {
        let mut total = 0.0;
        for r in 0..2 {
            let idx: Vec<usize> = (r * 4..r * 4 + 4).filter(|&i| mask[i]).collect();
            let z: f64 = idx.iter().map(|&i| xs[i].exp()).sum();
            total += idx.iter().map(|&i| xs[i].exp() / z * w[i]).sum::<f64>();
        }
        total
    };
    assert_close(grad.data(), &fd_gradient(&loss_of, &x0, 1e-6), 1e-6);
}

#[test]
fn reductions_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let w = g.constant(Tensor::vector(vec![0.5, 0.5]));
    let ws = g.reduce(Reduction::WeightedSum, x, Some(0), Some(w)).unwrap();
    assert_eq!(g.value(ws).data(), &[0.5, 0.5]);

    let v = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = g.reduce(Reduction::Sum, v, None, None).unwrap();
    assert_eq!(g.value(s).data(), &[6.0]);
    let m = g.reduce(Reduction::Mean, v, Some(0), None).unwrap();
    assert_eq!(g.value(m).data(), &[2.0]);

    let mat = g.constant(Tensor::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let rows = g.sum_axis(mat, 1).unwrap();
    assert_eq!(g.value(rows).data(), &[3.0, 7.0]);
    assert!(matches!(
        g.reduce(Reduction::Sum, mat, Some(2), None),
        Err(AutogradError::InvalidAxis { .. })
    ));
    assert!(g.reduce(Reduction::WeightedSum, mat, None, Some(w)).is_err());
    assert_eq!(
        g.reduce(Reduction::WeightedSum, mat, Some(0), None).unwrap_err(),
        AutogradError::MissingWeights
    );
}

#[test]
fn weighted_sum_gradients_match_finite_differences() {
    // x: [2, 3, 2] pooled over axis 1 with weights [2, 3].
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x0 = random(&mut rng, 12);
    let w0 = random(&mut rng, 6);
    let up = random(&mut rng, 4);
    let loss_of = |x: &[f64], w: &[f64]| {
        let mut total = 0.0;
        for o in 0..2 {
            for n in 0..2 {
                let pooled: f64 = (0..3).map(|i| w[o * 3 + i] * x[(o * 3 + i) * 2 + n]).sum();
                total += pooled * up[o * 2 + n];
            }
        }
        total
    };
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 3, 2], x0.clone()).unwrap());
    let w = g.leaf(Tensor::new(vec![2, 3], w0.clone()).unwrap());
    let u = g.constant(Tensor::new(vec![2, 2], up.clone()).unwrap());
    let ws = g.weighted_sum(x, w, 1).unwrap();
    assert_eq!(g.value(ws).shape(), &[2, 2]);
    let wu = g.mul(ws, u).unwrap();
    let l = g.sum(wu);
    g.backward(l).unwrap();
    assert_close(g.grad(w).unwrap().data(), &fd_gradient(&|v| loss_of(&x0, v), &w0, 1e-6), 1e-6);
    assert_close(g.grad(x).unwrap().data(), &fd_gradient(&|v| loss_of(v, &w0), &x0, 1e-6), 1e-6);
}

#[test]
fn gather_scatter_concat_reshape_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let t0 = random(&mut rng, 8); // [4, 2]
    let up = random(&mut rng, 15); // [5, 3]
    let loss_of = |t: &[f64]| {
        // gather rows [1, 1, 3], scatter to rows [0, 2, 4] of 5, concat with a
        // column of row index, weighted by up
        let gathered = [t[2], t[3], t[2], t[3], t[6], t[7]];
        let mut full = [0.0; 10];
        for (i, &r) in [0usize, 2, 4].iter().enumerate() {
            full[r * 2] = gathered[i * 2];
            full[r * 2 + 1] = gathered[i * 2 + 1];
        }
        let mut total = 0.0;
        for r in 0..5 {
            total += full[r * 2] * up[r * 3] + full[r * 2 + 1] * up[r * 3 + 1] + (r as f64) * up[r * 3 + 2];
        }
        total.tanh()
    };
    let mut g = Graph::new();
    let t = g.leaf(Tensor::new(vec![4, 2], t0.clone()).unwrap());
    let gath = g.gather_rows(t, &[1, 1, 3]).unwrap();
    let sc = g.scatter_rows(gath, &[0, 2, 4], 5).unwrap();
    let idx = g.constant(Tensor::new(vec![5, 1], (0..5).map(|r| r as f64).collect()).unwrap());
    let cat = g.concat_cols(sc, idx).unwrap();
    let flat = g.reshape(cat, &[15]).unwrap();
    let u = g.constant(Tensor::vector(up.clone()));
    let prod = g.mul(flat, u).unwrap();
    let s = g.sum(prod);
    let l = g.tanh(s).unwrap();
    g.backward(l).unwrap();
    assert_close(g.grad(t).unwrap().data(), &fd_gradient(&loss_of, &t0, 1e-6), 1e-6);

    assert!(g.gather_rows(t, &[4]).is_err());
    assert!(g.scatter_rows(gath, &[0, 0, 1], 5).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, -2.0, 3.0, 0.5, 7.0]));
    let l = g.sum(x);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 5]);

    let mut g = Graph::new();
    let xs = vec![1.0, -2.0, 3.0];
    let x = g.leaf(Tensor::vector(xs.clone()));
    let sq = g.mul(x, x).unwrap();
    let l = g.sum(sq);
    g.backward(l).unwrap();
    let expect: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.grad(x).unwrap().data(), expect.as_slice());
}

#[test]
fn backward_requires_scalar_and_accumulates() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert_eq!(g.backward(x).unwrap_err(), AutogradError::NonScalarLoss(vec![2]));
    let l = g.sum(x);
    g.backward(l).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let x = g.leaf(Tensor::vector(vec![3.0, 4.0]));
    let p = g.mul(c, x).unwrap();
    let l = g.sum(p);
    g.backward(l).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn grad_check_linear_regression_toy() {
    // L = mean((X w + b − y)²)
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = Tensor::new(vec![6, 3], random(&mut rng, 18)).unwrap();
    let y = Tensor::new(vec![6, 1], random(&mut rng, 6)).unwrap();
    let mut params = ParamStore::new();
    params.insert("w", Tensor::new(vec![3, 1], random(&mut rng, 3)).unwrap());
    params.insert("b", Tensor::vector(vec![0.3]));
    let cfg = GradCheckConfig {
        eps: 1e-5,
        tol: 1e-7,
        subset: None,
    };
    let report = grad_check(&mut params, &cfg, |g, b| -> Result<Var, AutogradError> {
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let xw = g.matmul(xv, b.var("w"))?;
        let pred = g.add(xw, b.var("b"))?;
        let r = g.sub(pred, yv)?;
        let sq = g.mul(r, r)?;
        Ok(g.mean(sq))
    })
    .unwrap();
    assert!(report.passed(), "{}", report.render_table());
    assert!(report.max_rel_error() < 1e-7);
    assert_eq!(report.entries.len(), 2);
}

#[test]
fn grad_check_with_infinite_tolerance_always_passes() {
    let mut params = ParamStore::new();
    params.insert("w", Tensor::vector(vec![1.0]));
    let cfg = GradCheckConfig {
        eps: 1e-5,
        tol: f64::INFINITY,
        subset: None,
    };
    // A deliberately wrong "gradient": the graph computes w but the clamp
    // hides the dependence below the floor.
    let report = grad_check(&mut params, &cfg, |g, b| -> Result<Var, AutogradError> {
        let c = g.clamp_min(b.var("w"), 2.0);
        Ok(g.sum(c))
    })
    .unwrap();
    assert!(report.passed());
}

#[test]
fn grad_check_subset_and_frozen_rows() {
    let mut params = ParamStore::new();
    params.insert_frozen("table", Tensor::matrix(&[vec![0.0, 0.0], vec![1.0, 2.0]]), vec![0]);
    params.insert("other", Tensor::vector(vec![1.0]));
    let cfg = GradCheckConfig {
        subset: Some(vec!["table".into()]),
        ..GradCheckConfig::default()
    };
    let report = grad_check(&mut params, &cfg, |g, b| -> Result<Var, AutogradError> {
        let t = g.mul(b.var("table"), b.var("table"))?;
        let s = g.sum(t);
        let o = g.mul(s, b.var("other"))?;
        Ok(g.sum(o))
    })
    .unwrap();
    assert_eq!(report.entries.len(), 1);
    assert!(report.passed());
}

#[test]
fn relative_error_definition() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    assert!((relative_error(0.0, 1e-9) - 0.1).abs() < 1e-12);
}

#[test]
fn graph_replay_is_bit_identical() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![3, 3], random(&mut rng, 9)).unwrap());
        let b = g.leaf(Tensor::new(vec![3, 3], random(&mut rng, 9)).unwrap());
        let p = g.matmul(a, b).unwrap();
        let s = g.softmax_lastdim(p, None).unwrap();
        let l = g.sum(s);
        let t = g.tanh(l).unwrap();
        g.backward(t).unwrap();
        (g.value(p).clone(), g.grad(a).unwrap(), g.grad(b).unwrap())
    };
    assert_eq!(build(), build());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..7,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.6)).collect();
        for r in 0..rows {
            mask[r * cols + rng.random_range(0..cols)] = true;
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let s = g.softmax_lastdim(x, Some(&mask)).unwrap();
        let out = g.value(s);
        for r in 0..rows {
            let row = out.row(r);
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            for c in 0..cols {
                prop_assert!(row[c] >= 0.0);
                if !mask[r * cols + c] {
                    prop_assert_eq!(row[c], 0.0);
                }
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(
        seed in any::<u64>(),
        ca in -3.0f64..3.0,
        cb in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Tensor::new(vec![2, 3], random(&mut rng, 6)).unwrap();
        let w0 = Tensor::new(vec![3, 2], random(&mut rng, 6)).unwrap();
        let grads = |wa: f64, wb: f64| {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let w = g.constant(w0.clone());
            let p = g.matmul(x, w).unwrap();
            let t = g.tanh(p).unwrap();
            let l1 = g.sum(t);
            let e = g.exp(x).unwrap();
            let l2 = g.mean(e);
            let a = g.scale(l1, wa);
            let b = g.scale(l2, wb);
            let l = g.add(a, b).unwrap();
            g.backward(l).unwrap();
            g.grad(x).unwrap()
        };
        let combined = grads(ca, cb);
        let g1 = grads(1.0, 0.0);
        let g2 = grads(0.0, 1.0);
        for i in 0..6 {
            let expect = ca * g1.data()[i] + cb * g2.data()[i];
            prop_assert!((combined.data()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }
}
