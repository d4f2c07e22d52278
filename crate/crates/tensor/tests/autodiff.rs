use avnav_tensor::gradcheck::{check_inputs, check_params, GradCheckConfig};
use avnav_tensor::{ParamStore, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Values bounded away from zero so relu/clamp kinks are never straddled.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn naive_matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0f64;
            for l in 0..k {
                s += f64::from(a[i * k + l]) * f64::from(b[l * n + j]);
            }
            out[i * n + j] = s as f32;
        }
    }
    out
}

/// Fixed random projection turning any output into a scalar loss.
fn project(tape: &mut Tape<'_>, y: Var, seed: u64) -> avnav_tensor::Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, &shape, 1.0))?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn assert_gradcheck(name: &str, inputs: &[Tensor], build: impl Fn(&mut Tape<'_>, &[Var]) -> avnav_tensor::Result<Var>) {
    let cfg = GradCheckConfig::default();
    let report = check_inputs(&cfg, inputs, build).unwrap();
    assert!(
        report.passed(&cfg),
        "{name}: max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn relu_forward() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![-1.0, 0.0, 2.0])).unwrap();
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![0.3; 4])).unwrap();
    let y = tape.softmax(x).unwrap();
    for &p in tape.value(y).data() {
        assert!((p - 0.25).abs() < 1e-7);
    }
}

#[test]
fn matmul_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(m, k, n) in &[(2, 3, 2), (1, 7, 5), (9, 4, 11), (33, 17, 65)] {
        let a = rand_tensor(&mut rng, &[m, k], 1.0);
        let b = rand_tensor(&mut rng, &[k, n], 1.0);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()).unwrap(), tape.constant(b.clone()).unwrap());
        let c = tape.matmul(va, vb).unwrap();
        let expected = naive_matmul(a.data(), b.data(), m, k, n);
        for (x, y) in tape.value(c).data().iter().zip(&expected) {
            assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn matmul_shape_mismatch_is_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
    assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape { .. })));
}

#[test]
fn non_finite_output_is_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![100.0])).unwrap();
    assert!(matches!(tape.exp(x), Err(TensorError::NonFinite { .. })));
    assert!(tape.constant(Tensor::row(vec![f32::NAN])).is_err());
}

#[test]
fn cross_entropy_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
    let l = tape.cross_entropy(x, &[0]).unwrap();
    assert!((tape.value(l).item().unwrap() - std::f32::consts::LN_2).abs() < 1e-6);

    // -log(e^10 / (e^10 + e^-10)) = ln(1 + e^-20)
    let x = tape.constant(Tensor::row(vec![10.0, -10.0])).unwrap();
    let l = tape.cross_entropy(x, &[0]).unwrap();
    let expected = (-20.0f64).exp().ln_1p();
    let got = f64::from(tape.value(l).item().unwrap());
    assert!((got - expected).abs() / expected < 1e-3, "{got} vs {expected}");
}

#[test]
fn cross_entropy_label_out_of_range() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
    assert!(matches!(tape.cross_entropy(x, &[2]), Err(TensorError::Index { .. })));
}

#[test]
fn mse_values() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::row(vec![1.0, 1.0])).unwrap();
    let t = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
    let l = tape.mse(p, t).unwrap();
    assert_eq!(tape.value(l).item().unwrap(), 1.0);
    let l0 = tape.mse(p, p).unwrap();
    assert_eq!(tape.value(l0).item().unwrap(), 0.0);
    let bad = tape.constant(Tensor::row(vec![0.0; 3])).unwrap();
    assert!(tape.mse(p, bad).is_err());
}

#[test]
fn mse_gradient_closed_form() {
    let pred = Tensor::row(vec![0.5, -1.0, 2.0]);
    let target = Tensor::row(vec![0.0, 1.0, 1.5]);
    let mut tape = Tape::new();
    let p = tape.leaf(pred.clone(), true).unwrap();
    let t = tape.constant(target.clone()).unwrap();
    let l = tape.mse(p, t).unwrap();
    let g = tape.backward(l).unwrap();
    for ((gi, p), t) in g.wrt(p).unwrap().iter().zip(pred.data()).zip(target.data()) {
        assert!((gi - 2.0 * (p - t) / 3.0).abs() < 1e-7);
    }
}

#[test]
fn sum_backward_is_ones_and_accumulates() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    for round in 1..=2 {
        let grads = {
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let l = tape.sum(x).unwrap();
            tape.backward(l).unwrap()
        };
        store.accumulate(&grads);
        assert!(store.grad(id).data().iter().all(|&g| g == round as f32));
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(vec![1.0, 2.0]), true).unwrap();
    assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn grad_reverse_forward_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[3, 5], 4.0);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone()).unwrap();
    let y = tape.grad_reverse(v, 0.7).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(tape.value(y)), bits(&x));
}

#[test]
fn grad_reverse_with_zero_lambda_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row(vec![1.0, -2.0, 3.0]), true).unwrap();
    let y = tape.grad_reverse(x, 0.0).unwrap();
    let z = tape.tanh(y).unwrap();
    let l = tape.sum(z).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.wrt(x).unwrap().iter().all(|&v| v == 0.0));
}

fn grad_through(x: &Tensor, w: &Tensor, reverse: Option<f32>) -> Vec<f32> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true).unwrap();
    let input = match reverse {
        Some(lambda) => tape.grad_reverse(xv, lambda).unwrap(),
        None => xv,
    };
    let wv = tape.constant(w.clone()).unwrap();
    let h = tape.matmul(input, wv).unwrap();
    let h = tape.tanh(h).unwrap();
    let l = tape.cross_entropy(h, &[1, 0]).unwrap();
    tape.backward(l).unwrap().wrt(xv).unwrap().to_vec()
}

#[test]
fn grad_reverse_unit_lambda_negates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[2, 4], 1.0);
    let w = rand_tensor(&mut rng, &[4, 3], 1.0);
    let plain = grad_through(&x, &w, None);
    let reversed = grad_through(&x, &w, Some(1.0));
    for (p, r) in plain.iter().zip(&reversed) {
        assert_eq!(*r, -*p);
    }
}

proptest! {
    #[test]
    fn grad_reverse_scales_by_negative_lambda(seed in 0u64..1000, lambda in -3.0f32..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 4], 2.0);
        let w = rand_tensor(&mut rng, &[4, 3], 2.0);
        let plain = grad_through(&x, &w, None);
        let reversed = grad_through(&x, &w, Some(lambda));
        for (p, r) in plain.iter().zip(&reversed) {
            prop_assert_eq!(r.to_bits(), ((-lambda) * p).to_bits());
        }
    }
}

#[test]
fn gradcheck_every_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_away_from_zero(&mut rng, &[3, 4]);
    let b = rand_away_from_zero(&mut rng, &[3, 4]);
    let m = rand_tensor(&mut rng, &[4, 5], 1.0);
    let bias = rand_tensor(&mut rng, &[4], 1.0);

    assert_gradcheck("matmul", &[a.clone(), m.clone()], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 10)
    });
    assert_gradcheck("add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 11)
    });
    assert_gradcheck("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, 12)
    });
    assert_gradcheck("mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, 13)
    });
    assert_gradcheck("add_bias", &[a.clone(), bias.clone()], |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, 14)
    });
    assert_gradcheck("concat", &[a.clone(), b.clone()], |t, v| {
        let y = t.concat(&[v[0], v[1]])?;
        project(t, y, 15)
    });
    assert_gradcheck("concat_rows", &[a.clone(), b.clone()], |t, v| {
        let y = t.concat_rows(&[v[0], v[1]])?;
        project(t, y, 16)
    });
    assert_gradcheck("slice", &[a.clone()], |t, v| {
        let y = t.slice(v[0], 1, 3)?;
        project(t, y, 17)
    });
    assert_gradcheck("slice_rows", &[a.clone()], |t, v| {
        let y = t.slice_rows(v[0], 1, 3)?;
        project(t, y, 18)
    });
    assert_gradcheck("gather_rows", &[a.clone()], |t, v| {
        let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
        project(t, y, 32)
    });
    assert_gradcheck("mean", &[a.clone()], |t, v| {
        let y = t.mul(v[0], v[0])?;
        t.mean(y)
    });
    assert_gradcheck("relu", &[a.clone()], |t, v| {
        let y = t.relu(v[0])?;
        project(t, y, 19)
    });
    assert_gradcheck("tanh", &[a.clone()], |t, v| {
        let y = t.tanh(v[0])?;
        project(t, y, 20)
    });
    assert_gradcheck("sigmoid", &[a.clone()], |t, v| {
        let y = t.sigmoid(v[0])?;
        project(t, y, 21)
    });
    assert_gradcheck("exp", &[a.clone()], |t, v| {
        let y = t.exp(v[0])?;
        project(t, y, 22)
    });
    assert_gradcheck("softmax", &[a.clone()], |t, v| {
        let y = t.softmax(v[0])?;
        project(t, y, 23)
    });
    assert_gradcheck("log_softmax", &[a.clone()], |t, v| {
        let y = t.log_softmax(v[0])?;
        project(t, y, 24)
    });
    assert_gradcheck("pick", &[a.clone()], |t, v| {
        let y = t.pick(v[0], &[3, 0, 2])?;
        project(t, y, 25)
    });
    assert_gradcheck("clamp", &[a.clone()], |t, v| {
        let y = t.clamp(v[0], -0.8, 0.8)?;
        project(t, y, 26)
    });
    assert_gradcheck("minimum", &[a.clone(), b.clone()], |t, v| {
        let y = t.minimum(v[0], v[1])?;
        project(t, y, 27)
    });
    assert_gradcheck("scale", &[a.clone()], |t, v| {
        let y = t.scale(v[0], -1.7)?;
        project(t, y, 28)
    });
    assert_gradcheck("add_scalar", &[a.clone()], |t, v| {
        let y = t.add_scalar(v[0], 0.5)?;
        project(t, y, 29)
    });
    assert_gradcheck("cross_entropy", &[a.clone()], |t, v| t.cross_entropy(v[0], &[1, 3, 0]));
    assert_gradcheck("mse", &[a.clone(), b.clone()], |t, v| t.mse(v[0], v[1]));
    assert_gradcheck("grad_reverse", &[a.clone()], |t, v| {
        let y = t.grad_reverse(v[0], -1.0)?;
        let y = t.tanh(y)?;
        project(t, y, 30)
    });
}

#[test]
fn gradcheck_random_three_layer_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let dims = [6, 8, 8, 3];
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let wid = store.add(format!("w{i}"), rand_tensor(&mut rng, &[w[0], w[1]], 0.8));
        let bid = store.add(format!("b{i}"), rand_tensor(&mut rng, &[w[1]], 0.2));
        layers.push((wid, bid));
    }
    let x = rand_tensor(&mut rng, &[4, 6], 1.0);
    let cfg = GradCheckConfig::default();
    let report = check_params(&cfg, &store, None, |tape, store| {
        let mut h = tape.constant(x.clone())?;
        for (i, &(w, b)) in layers.iter().enumerate() {
            let (wv, bv) = (tape.param(store, w), tape.param(store, b));
            h = tape.matmul(h, wv)?;
            h = tape.add_bias(h, bv)?;
            if i + 1 < layers.len() {
                h = tape.tanh(h)?;
            }
        }
        tape.cross_entropy(h, &[0, 2, 1, 2])
    })
    .unwrap();
    assert_eq!(report.checked, store.num_scalars());
    assert!(report.passed(&cfg), "{report:?}");
}

#[test]
fn gradcheck_detects_a_wrong_gradient() {
    // A reversed layer claims the opposite gradient of the function it computes.
    let cfg = GradCheckConfig::default();
    let x = Tensor::row(vec![0.3, -0.4, 0.9]);
    let report = check_inputs(&cfg, &[x], |t, v| {
        let y = t.grad_reverse(v[0], 1.0)?;
        let y = t.tanh(y)?;
        project(t, y, 31)
    })
    .unwrap();
    assert!(!report.passed(&cfg));
}
