use super::*;
use crate::numerics::gradcheck::relative_error;

fn scalar_param(v: f64) -> (ParamSet, ParamId) {
    let mut ps = ParamSet::new();
    let id = ps.add("x", Tensor::scalar(v));
    (ps, id)
}

#[test]
fn identity_gradient() {
    let (mut ps, id) = scalar_param(5.0);
    let loss = eval_with_grad(&mut ps, |t, p| Ok(t.param(p, id))).unwrap();
    assert_eq!(loss, 5.0);
    assert_eq!(ps.get(id).grad.data(), &[1.0]);
}

#[test]
fn square_gradient() {
    let (mut ps, id) = scalar_param(3.0);
    let loss = eval_with_grad(&mut ps, |t, p| {
        let x = t.param(p, id);
        Ok(t.mul(x, x))
    })
    .unwrap();
    assert_eq!(loss, 9.0);
    assert_eq!(ps.get(id).grad.data(), &[6.0]);
}

#[test]
fn gradients_are_zeroed_between_calls() {
    let (mut ps, id) = scalar_param(2.0);
    for _ in 0..3 {
        eval_with_grad(&mut ps, |t, p| {
            let x = t.param(p, id);
            Ok(t.square(x))
        })
        .unwrap();
        assert_eq!(ps.get(id).grad.data(), &[4.0]);
    }
}

#[test]
fn non_finite_forward_names_the_primitive() {
    let (mut ps, id) = scalar_param(1e300);
    let err = eval_with_grad(&mut ps, |t, p| {
        let x = t.param(p, id);
        Ok(t.square(x))
    })
    .unwrap_err();
    assert!(matches!(err, Error::NonFinite(ref op) if op == "square"), "{err}");
}

fn two_layer_net(rng: &mut RngStream) -> (ParamSet, Linear, Linear, Tensor, Tensor) {
    let mut ps = ParamSet::new();
    let l1 = Linear::new(&mut ps, "l1", 4, 5, rng);
    let l2 = Linear::new(&mut ps, "l2", 5, 2, rng);
    for p in ps.iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.1 * rng.gaussian();
        }
    }
    let x = rng.sample_gaussian(&[3, 4]);
    let y = rng.sample_gaussian(&[3, 2]);
    (ps, l1, l2, x, y)
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let mut rng = RngStream::new(11);
    let (mut ps, l1, l2, x, y) = two_layer_net(&mut rng);
    assert_eq!(ps.num_scalars(), 37);
    let report = check_gradients(
        &mut ps,
        |t, p| {
            let xi = t.constant(x.clone());
            let yi = t.constant(y.clone());
            let h = l1.forward(t, p, xi);
            let h = t.tanh(h);
            let o = l2.forward(t, p, h);
            let d = t.l2_distance(o, yi);
            Ok(t.mean(d))
        },
        1e-5,
        usize::MAX,
    )
    .unwrap();
    assert_eq!(report.entries_checked, 37);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

/// Central-difference check of a single-input primitive on random inputs.
fn check_unary(name: &str, op: impl Fn(&mut Tape, Var) -> Var, rng: &mut RngStream, shape: &[usize]) -> f64 {
    let mut ps = ParamSet::new();
    let id = ps.add("x", rng.sample_gaussian(shape));
    let w = rng.sample_gaussian(shape);
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let report = check_gradients(
        &mut ps,
        |t, p| {
            let x = t.param(p, id);
            let y = op(t, x);
            // random linear functional so every output entry matters
            let out_shape = t.shape(y).to_vec();
            let n: usize = out_shape.iter().product();
            let wv = if n == rows * cols {
                t.constant(w.clone().reshape(&out_shape).unwrap())
            } else {
                let data: Vec<f64> = w.data().iter().cycle().take(n).copied().collect();
                t.constant(Tensor::new(out_shape, data).unwrap())
            };
            let z = t.mul(y, wv);
            Ok(t.sum(z))
        },
        1e-5,
        usize::MAX,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
    report.max_rel_error
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = RngStream::new(2024);
    for _ in 0..100 {
        check_unary("tanh", |t, x| t.tanh(x), &mut rng, &[2, 3]);
        check_unary("silu", |t, x| t.silu(x), &mut rng, &[2, 3]);
        check_unary("sigmoid", |t, x| t.sigmoid(x), &mut rng, &[2, 3]);
        check_unary("softplus", |t, x| t.softplus(x), &mut rng, &[2, 3]);
        check_unary("square", |t, x| t.square(x), &mut rng, &[2, 3]);
        check_unary("scale", |t, x| t.scale(x, -1.7), &mut rng, &[2, 3]);
        check_unary("add_scalar", |t, x| t.add_scalar(x, 0.3), &mut rng, &[2, 3]);
        check_unary("softmax", |t, x| t.softmax_rows(x), &mut rng, &[2, 3]);
        check_unary("log_softmax", |t, x| t.log_softmax_rows(x), &mut rng, &[2, 3]);
        check_unary("mean", |t, x| t.mean(x), &mut rng, &[2, 3]);
        check_unary("sum_rows", |t, x| t.sum_rows(x), &mut rng, &[2, 3]);
        check_unary("slice", |t, x| t.slice_cols(x, 1, 2), &mut rng, &[2, 3]);
        check_unary("gather", |t, x| t.gather_rows(x, &[1, 0, 1, 1]), &mut rng, &[2, 3]);
        check_unary("reshape", |t, x| t.reshape(x, &[3, 2]), &mut rng, &[2, 3]);
        check_unary(
            "concat",
            |t, x| {
                let y = t.tanh(x);
                t.concat_cols(&[x, y, x])
            },
            &mut rng,
            &[2, 3],
        );
        check_unary(
            "mul",
            |t, x| {
                let y = t.sigmoid(x);
                t.mul(x, y)
            },
            &mut rng,
            &[2, 3],
        );
        check_unary(
            "sub",
            |t, x| {
                let y = t.square(x);
                t.sub(y, x)
            },
            &mut rng,
            &[2, 3],
        );
        check_unary(
            "matmul",
            |t, x| {
                let y = t.reshape(x, &[3, 2]);
                let y = t.tanh(y);
                t.matmul(x, y)
            },
            &mut rng,
            &[2, 3],
        );
        check_unary(
            "matmul_nt",
            |t, x| {
                let y = t.sigmoid(x);
                t.matmul_nt(x, y)
            },
            &mut rng,
            &[2, 3],
        );
        check_unary(
            "add_row",
            |t, x| {
                let r = t.slice_cols(x, 0, 3);
                let r = t.gather_rows(r, &[0]);
                let r = t.reshape(r, &[3]);
                t.add_row(x, r)
            },
            &mut rng,
            &[2, 3],
        );
    }
}

#[test]
fn abs_and_relu_match_away_from_kinks() {
    let mut rng = RngStream::new(7);
    for _ in 0..100 {
        let mut ps = ParamSet::new();
        // keep inputs away from 0 where the derivative jumps
        let data: Vec<f64> = (0..6)
            .map(|_| {
                let v = rng.gaussian();
                v.signum() * (v.abs() + 0.01)
            })
            .collect();
        let id = ps.add("x", Tensor::new(vec![2, 3], data).unwrap());
        let report = check_gradients(
            &mut ps,
            |t, p| {
                let x = t.param(p, id);
                let a = t.abs(x);
                let r = t.relu(x);
                let s = t.add(a, r);
                let s = t.mul(s, x);
                Ok(t.sum(s))
            },
            1e-6,
            usize::MAX,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn softmax_rows_sum_to_one_and_stay_positive() {
    let mut rng = RngStream::new(3);
    let mut t = Tape::new();
    let mut x = rng.sample_gaussian(&[50, 7]);
    x.data_mut().iter_mut().for_each(|v| *v *= 20.0);
    let x = t.constant(x);
    let y = t.softmax_rows(x);
    for r in 0..50 {
        let row = t.value(y).row(r);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn forward_is_pure() {
    let mut rng = RngStream::new(11);
    let (ps, l1, l2, x, _) = two_layer_net(&mut rng);
    let run = || {
        eval(&ps, |t, p| {
            let xi = t.constant(x.clone());
            let h = l1.forward(t, p, xi);
            let h = t.silu(h);
            let o = l2.forward(t, p, h);
            Ok(t.sum(o))
        })
        .unwrap()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    assert!(relative_error(1e-12, 0.0) < 1e-5);
}

#[test]
fn adam_descends_a_quadratic() {
    let (mut ps, id) = scalar_param(4.0);
    let mut opt = Adam::new(
        AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
        &ps,
    );
    for _ in 0..300 {
        eval_with_grad(&mut ps, |t, p| {
            let x = t.param(p, id);
            Ok(t.square(x))
        })
        .unwrap();
        opt.step(&mut ps);
    }
    assert!(ps.get(id).value.data()[0].abs() < 1e-2);
}
