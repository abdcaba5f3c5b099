use mgsr_autodiff::{grad_check, AutodiffError, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any tensor to a scalar through a fixed random linear functional so
/// every output coordinate contributes to the gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p, None)
}

fn check_points<F>(name: &str, shape: &[usize], lo: f64, hi: f64, f: F)
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for point in 0..20 {
        let x = random_tensor(&mut rng, shape, lo, hi);
        let err = grad_check(|g, v| f(g, v), &x, H).unwrap();
        assert!(err < TOL, "{name} point {point}: rel err {err:e}");
    }
}

#[test]
fn add_example() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_slice(&[1.0, 2.0]));
    let b = g.constant(Tensor::from_slice(&[3.0, 4.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    let mut g = Graph::new();
    let i = g.constant(Tensor::eye(3));
    let xv = g.constant(x.clone());
    let y = g.matmul(i, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn sum_of_squares_gradient() {
    let x = Tensor::from_slice(&[1.0, 2.0, 3.0]);
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let sq = g.mul(v, v).unwrap();
    let s = g.sum(sq, None).unwrap();
    g.backward(s).unwrap();
    let analytic = g.grad(v).unwrap().data().to_vec();
    // central differences, h = 1e-6
    let f = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
    for i in 0..3 {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += 1e-6;
        minus[i] -= 1e-6;
        let numeric = (f(&plus) - f(&minus)) / 2e-6;
        assert!((numeric - analytic[i]).abs() < 1e-6);
    }
    assert_eq!(analytic, vec![2.0, 4.0, 6.0]);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_slice(&[0.0, 0.0]));
    let s = g.softmax(a, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let b = g.constant(Tensor::from_slice(&[2f64.ln(), 1f64.ln()]));
    let s = g.softmax(b, 0).unwrap();
    let d = g.value(s).data();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((d[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_rejects_nan() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_slice(&[0.0, f64::NAN]));
    assert!(matches!(g.softmax(a, 0), Err(AutodiffError::NaN(_))));
}

#[test]
fn softmax_gradient_random_8() {
    check_points("softmax8", &[8], -3.0, 3.0, |g, x| {
        let s = g.softmax(x, 0)?;
        project(g, s, 3)
    });
}

#[test]
fn softmax_large_inputs_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let x = random_tensor(&mut rng, &[4, 16], -1e3, 1e3);
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.softmax(v, 1).unwrap();
        for row in g.value(s).data().chunks(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn sigmoid_sort_concat_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item().unwrap(), 0.5);

    let a = g.constant(Tensor::from_slice(&[0.1, 0.7, 0.2]));
    let s = g.sort_descending(a).unwrap();
    assert_eq!(g.value(s).data(), &[0.7, 0.2, 0.1]);

    let p = g.constant(Tensor::from_slice(&[1.0, 2.0]));
    let q = g.constant(Tensor::from_slice(&[3.0, 4.0, 5.0]));
    let c = g.concat(&[p, q], 0).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn sort_is_detached() {
    let mut g = Graph::new();
    let a = g.param(Tensor::from_slice(&[0.3, 0.9, 0.1]));
    let s = g.sort_descending(a).unwrap();
    let r = g.sum(s, None).unwrap();
    g.backward(r).unwrap();
    assert!(g.grad(a).is_none());
}

#[test]
fn sort_branch_contributes_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_slice(&[0.2, 0.9, 0.4]));
    let s = g.sort_descending(x).unwrap();
    let both = g.concat(&[x, s], 0).unwrap();
    let w = g.constant(Tensor::from_slice(&[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]));
    let p = g.mul(both, w).unwrap();
    let r = g.sum(p, None).unwrap();
    g.backward(r).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn concat_off_axis_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 3]));
    assert!(matches!(
        g.concat(&[a, b], 1),
        Err(AutodiffError::ShapeMismatch { .. })
    ));
    assert!(g.concat(&[a, b], 0).is_ok());
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");

    let c = g.constant(Tensor::zeros(&[4, 5]));
    assert!(g.matmul(a, c).is_err());
}

#[test]
fn log_clamps_and_rejects_negative() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_slice(&[0.0, 1.0]));
    let l = g.log(a).unwrap();
    assert_eq!(g.value(l).data()[0], 1e-12f64.ln());
    let b = g.constant(Tensor::from_slice(&[-0.5]));
    assert!(matches!(g.log(b), Err(AutodiffError::NegativeLog(_))));
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[3]));
    let b = g.exp(a).unwrap();
    assert!(matches!(g.backward(b), Err(AutodiffError::NotScalar(_))));
}

#[test]
fn sum_of_param_gives_ones_and_accumulates() {
    let mut g = Graph::new();
    let p = g.param(Tensor::from_slice(&[0.3, -1.0, 2.0, 5.0]));
    let s = g.sum(p, None).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(p).unwrap().data(), &[1.0; 4]);
    g.backward(s).unwrap();
    assert_eq!(g.grad(p).unwrap().data(), &[2.0; 4]);
    g.zero_grad();
    assert!(g.grad(p).is_none());
}

#[test]
fn grad_check_trivial_functions() {
    let x = Tensor::from_slice(&[0.5, -1.5, 2.0]);
    let err = grad_check(
        |g, v| {
            let sq = g.mul(v, v)?;
            g.sum(sq, None)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-7, "{err:e}");

    let err = grad_check(|g, _| Ok(g.constant(Tensor::scalar(3.0))), &x, 1e-5).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn shared_subexpressions_accumulate() {
    // y = sum(e ⊙ e + e) with e = exp(x): every path through e contributes.
    check_points("shared", &[5], -1.0, 1.0, |g, x| {
        let e = g.exp(x)?;
        let ee = g.mul(e, e)?;
        let s = g.add(ee, e)?;
        let t = g.mul(s, x)?;
        g.sum(t, None)
    });
}

#[test]
fn elementwise_ops_pass_grad_check() {
    check_points("add_broadcast", &[3, 4], -1.0, 1.0, |g, x| {
        let row = g.sum(x, Some(0))?;
        let y = g.add(x, row)?;
        project(g, y, 1)
    });
    check_points("sub", &[6], -1.0, 1.0, |g, x| {
        let e = g.exp(x)?;
        let y = g.sub(e, x)?;
        project(g, y, 2)
    });
    check_points("mul", &[2, 3], -1.0, 1.0, |g, x| {
        let t = g.tanh(x)?;
        let y = g.mul(x, t)?;
        project(g, y, 3)
    });
    check_points("div", &[7], 0.5, 2.0, |g, x| {
        let e = g.exp(x)?;
        let y = g.div(e, x)?;
        project(g, y, 4)
    });
    check_points("neg_scale_add_scalar", &[5], -1.0, 1.0, |g, x| {
        let a = g.neg(x)?;
        let b = g.scale(a, 2.5)?;
        let c = g.add_scalar(b, 0.3)?;
        let d = g.mul(c, x)?;
        project(g, d, 5)
    });
    check_points("log", &[6], 0.1, 3.0, |g, x| {
        let y = g.log(x)?;
        project(g, y, 6)
    });
    check_points("exp", &[6], -2.0, 2.0, |g, x| {
        let y = g.exp(x)?;
        project(g, y, 7)
    });
    check_points("sigmoid", &[6], -4.0, 4.0, |g, x| {
        let y = g.sigmoid(x)?;
        project(g, y, 8)
    });
    check_points("tanh", &[6], -2.0, 2.0, |g, x| {
        let y = g.tanh(x)?;
        project(g, y, 9)
    });
    check_points("gelu", &[6], -3.0, 3.0, |g, x| {
        let y = g.gelu(x)?;
        project(g, y, 10)
    });
    check_points("sqrt", &[6], 0.2, 4.0, |g, x| {
        let y = g.sqrt(x)?;
        project(g, y, 11)
    });
    check_points("abs", &[6], 0.1, 1.0, |g, x| {
        let shifted = g.add_scalar(x, -0.55)?;
        let y = g.abs(shifted)?;
        project(g, y, 12)
    });
    check_points("minimum", &[8], -1.0, 1.0, |g, x| {
        let t = g.tanh(x)?;
        let s = g.scale(x, 0.5)?;
        let y = g.minimum(t, s)?;
        project(g, y, 13)
    });
}

#[test]
fn structural_ops_pass_grad_check() {
    check_points("matmul", &[4, 3], -1.0, 1.0, |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = g.constant(random_tensor(&mut rng, &[3, 5], -1.0, 1.0));
        let y = g.matmul(x, w)?;
        let w2 = y_t_helper(g, 5)?;
        let z = g.matmul(y, w2)?;
        project(g, z, 14)
    });
    check_points("matmul_rhs", &[3, 2], -1.0, 1.0, |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(98);
        let a = g.constant(random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0));
        let y = g.matmul(a, x)?;
        project(g, y, 15)
    });
    check_points("bmm", &[2, 3, 3], -1.0, 1.0, |g, x| {
        let y = g.matmul(x, x)?;
        project(g, y, 16)
    });
    check_points("sum_axis", &[2, 3, 4], -1.0, 1.0, |g, x| {
        let e = g.exp(x)?;
        let y = g.sum(e, Some(1))?;
        project(g, y, 17)
    });
    check_points("softmax_axis0", &[4, 3], -2.0, 2.0, |g, x| {
        let y = g.softmax(x, 0)?;
        project(g, y, 18)
    });
    check_points("log_softmax", &[3, 5], -2.0, 2.0, |g, x| {
        let y = g.log_softmax(x, 1)?;
        project(g, y, 19)
    });
    check_points("concat", &[2, 3], -1.0, 1.0, |g, x| {
        let e = g.exp(x)?;
        let y = g.concat(&[x, e, x], 1)?;
        project(g, y, 20)
    });
    check_points("reshape", &[2, 6], -1.0, 1.0, |g, x| {
        let r = g.reshape(x, &[3, 4])?;
        let y = g.softmax(r, 1)?;
        project(g, y, 22)
    });
    check_points("embedding", &[5, 3], -1.0, 1.0, |g, x| {
        let e = g.embedding(x, &[0, 4, 4, 2])?;
        let y = g.tanh(e)?;
        project(g, y, 23)
    });
    check_points("gather_select", &[4, 5], -1.0, 1.0, |g, x| {
        let rows = g.select_rows(x, &[3, 0, 3])?;
        let y = g.gather_last(rows, &[1, 4, 0])?;
        let c = g.column(x, 2)?;
        let both = g.concat(&[y, c], 0)?;
        project(g, both, 24)
    });
    check_points("broadcast_last", &[3], -1.0, 1.0, |g, x| {
        let b = g.broadcast_last(x, 4)?;
        let y = g.exp(b)?;
        project(g, y, 25)
    });
    check_points("mean", &[7], -1.0, 1.0, |g, x| {
        let sq = g.square(x)?;
        g.mean(sq)
    });
}

fn y_t_helper(g: &mut Graph, n: usize) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    Ok(g.constant(random_tensor(&mut rng, &[n, 2], -1.0, 1.0)))
}

#[test]
fn layer_norm_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let gamma = random_tensor(&mut rng, &[6], 0.5, 1.5);
    let beta = random_tensor(&mut rng, &[6], -0.5, 0.5);
    let x0 = random_tensor(&mut rng, &[3, 6], -1.0, 1.0);
    {
        let (gamma, beta) = (gamma.clone(), beta.clone());
        check_points("layer_norm_x", &[3, 6], -2.0, 2.0, move |g, x| {
            let gm = g.constant(gamma.clone());
            let bt = g.constant(beta.clone());
            let y = g.layer_norm(x, gm, bt, 1e-5)?;
            project(g, y, 26)
        });
    }
    {
        let x0 = x0.clone();
        check_points("layer_norm_gamma", &[6], 0.5, 1.5, move |g, gm| {
            let x = g.constant(x0.clone());
            let bt = g.constant(beta.clone());
            let y = g.layer_norm(x, gm, bt, 1e-5)?;
            project(g, y, 27)
        });
    }
    check_points("layer_norm_beta", &[6], -1.0, 1.0, move |g, bt| {
        let x = g.constant(x0.clone());
        let gm = g.constant(gamma.clone());
        let y = g.layer_norm(x, gm, bt, 1e-5)?;
        project(g, y, 28)
    });
}

#[test]
fn attention_pass_grad_check() {
    // two sequences of length 3, width 4, two heads; x feeds q, k and v
    check_points("attention", &[6, 4], -1.0, 1.0, |g, x| {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let wq = g.constant(random_tensor(&mut rng, &[4, 4], -1.0, 1.0));
        let wk = g.constant(random_tensor(&mut rng, &[4, 4], -1.0, 1.0));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let y = g.causal_attention(q, k, x, 2, 3, 2)?;
        project(g, y, 29)
    });
}

#[test]
fn attention_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let x = random_tensor(&mut rng, &[4, 4], -1.0, 1.0);
    let mut x2 = x.clone();
    for c in 0..4 {
        x2.data_mut()[3 * 4 + c] += 1.0;
    }
    let run = |t: Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t);
        let y = g.causal_attention(v, v, v, 1, 4, 2).unwrap();
        g.value(y).data().to_vec()
    };
    let (a, b) = (run(x), run(x2));
    assert_eq!(a[..12], b[..12]);
    assert_ne!(a[12..], b[12..]);
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::from_slice(&[1.0, 2.0]));
    let p = g.param(Tensor::from_slice(&[3.0, 4.0]));
    let m = g.mul(c, p).unwrap();
    let s = g.sum(m, None).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap().data(), &[1.0, 2.0]);
}

proptest! {
    #[test]
    fn softmax_rows_on_simplex(values in proptest::collection::vec(-50.0f64..50.0, 1..32)) {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_slice(&values));
        let s = g.softmax(v, 0).unwrap();
        let d = g.value(s).data();
        prop_assert!(d.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sort_output_non_increasing(values in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
        let mut g = Graph::new();
        let v = g.constant(Tensor::from_slice(&values));
        let s = g.sort_descending(v).unwrap();
        let d = g.value(s).data();
        prop_assert!(d.windows(2).all(|w| w[0] >= w[1]));
    }
}
