use super::rng::Rng;
use super::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn p(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::param(shape, v.to_vec()).unwrap()
}

fn random_param(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = numel(shape);
    Tensor::param(shape, (0..n).map(|_| rng.uniform(-1.5, 1.5)).collect()).unwrap()
}

/// Central differences of `f` w.r.t. every element of `x`, evaluated by
/// perturbing the stored values in place.
fn numeric_grad(x: &Tensor, f: &dyn Fn() -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..x.numel())
        .map(|i| {
            let orig = x.value()[i];
            x.value_mut()[i] = orig + h;
            let up = f();
            x.value_mut()[i] = orig - h;
            let down = f();
            x.value_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn assert_grad_close(analytic: &[f64], numeric: &[f64], what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1e-6);
        let rel = (a - n).abs() / denom;
        assert!(rel < 1e-4, "{what}[{i}]: analytic {a} vs numeric {n} (rel {rel})");
    }
}

/// Checks d(sum(w ∘ f(inputs)))/d(inputs) against finite differences, with a
/// fixed random weighting `w` so every output element matters.
fn check_op(name: &str, inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> Tensor, seed: u64) {
    let out = f(inputs);
    let mut wr = Rng::new(seed ^ 0xABCD);
    let w = Tensor::new(out.shape(), (0..out.numel()).map(|_| wr.uniform(-1.0, 1.0)).collect()).unwrap();
    for x in inputs {
        x.zero_grad();
    }
    f(inputs).mul(&w).unwrap().sum().backward().unwrap();
    for (k, x) in inputs.iter().enumerate() {
        if !x.requires_grad() {
            continue;
        }
        let analytic = x.grad().unwrap();
        let numeric = numeric_grad(x, &|| no_grad(|| f(inputs).mul(&w).unwrap().sum().item()));
        assert_grad_close(&analytic, &numeric, &format!("{name} input {k}"));
    }
}

#[test]
fn matmul_hand_example() {
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let b = t(&[2, 1], &[1.0, 1.0]);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.to_vec(), vec![3.0, 7.0]);
}

#[test]
fn shape_errors_name_both_shapes() {
    let a = t(&[2, 3], &[0.0; 6]);
    let b = t(&[2, 3], &[0.0; 6]);
    let err = a.matmul(&b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Dimension { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] }
    );
    let msg = t(&[2, 3], &[0.0; 6]).add(&t(&[4], &[0.0; 4])).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
}

#[test]
fn domain_errors() {
    assert!(matches!(t(&[2], &[1.0, 0.0]).log(), Err(TensorError::Domain { op: "log", .. })));
    assert!(matches!(t(&[1], &[-1.0]).sqrt(), Err(TensorError::Domain { op: "sqrt", .. })));
    assert_eq!(t(&[1], &[0.0]).sqrt().unwrap().to_vec(), vec![0.0]);
}

#[test]
fn activation_symmetry_points() {
    assert_eq!(Tensor::scalar(0.0).sigmoid().item(), 0.5);
    assert_eq!(Tensor::scalar(0.0).tanh().item(), 0.0);
    assert_eq!(t(&[2], &[-1.0, 2.0]).relu().to_vec(), vec![0.0, 2.0]);
}

#[test]
fn row_broadcast_add() {
    let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let b = t(&[3], &[10.0, 20.0, 30.0]);
    assert_eq!(a.add(&b).unwrap().to_vec(), vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let col = t(&[2, 1], &[1.0, 2.0]);
    assert_eq!(a.mul(&col).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 8.0, 10.0, 12.0]);
}

#[test]
fn dropout_eval_is_identity_and_train_scales() {
    let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
    let mut rng = Rng::new(0);
    let y = x.dropout(0.1, false, &mut rng).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());

    let big = Tensor::full(&[20_000], 1.0);
    let d = big.dropout(0.25, true, &mut rng).unwrap().to_vec();
    let zeros = d.iter().filter(|&&v| v == 0.0).count() as f64 / 20_000.0;
    assert!((zeros - 0.25).abs() < 0.02, "zero fraction {zeros}");
    assert!(d.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
    assert!(x.dropout(1.0, true, &mut rng).is_err());
}

#[test]
fn cosine_examples() {
    let a = t(&[2], &[1.0, 0.0]);
    assert!((cosine_similarity(&a, &a).unwrap().item() - 1.0).abs() < 1e-7);
    let b = t(&[2], &[0.0, 1.0]);
    assert_eq!(cosine_similarity(&a, &b).unwrap().item(), 0.0);
    let c = t(&[2], &[1.0, 2.0]);
    let d = t(&[2], &[2.0, 4.0]);
    assert!((cosine_similarity(&c, &d).unwrap().item() - 1.0).abs() < 1e-6);
    let z = t(&[2], &[0.0, 0.0]);
    assert_eq!(cosine_similarity(&z, &z).unwrap().item(), 0.0);
}

#[test]
fn grad_reverse_forward_and_backward() {
    let x = p(&[3], &[1.0, 2.0, 3.0]);
    let y = x.grad_reverse(0.1);
    assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0]);
    y.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![-0.1, -0.1, -0.1]);

    let x0 = p(&[3], &[1.0, 2.0, 3.0]);
    x0.grad_reverse(0.0).sum().backward().unwrap();
    assert!(x0.grad().unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_examples() {
    let x = p(&[2], &[1.0, 2.0]);
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);

    let x = p(&[4], &[0.3, -1.0, 2.0, 5.0]);
    x.sum().grad_reverse(1.0).backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![-1.0; 4]);
}

#[test]
fn backward_matmul_mean_matches_finite_differences() {
    let mut rng = Rng::new(11);
    let w = random_param(&mut rng, &[3, 4]);
    let x = Tensor::new(&[4, 2], (0..8).map(|_| rng.normal()).collect()).unwrap();
    w.matmul(&x).unwrap().mean().backward().unwrap();
    let numeric = numeric_grad(&w, &|| no_grad(|| w.matmul(&x).unwrap().mean().item()));
    for (a, n) in w.grad().unwrap().iter().zip(&numeric) {
        assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-12) < 1e-5);
    }
}

#[test]
fn backward_rejects_non_scalar_and_detached() {
    let x = p(&[2], &[1.0, 2.0]);
    assert!(matches!(x.square().backward(), Err(TensorError::NonScalarRoot(_))));
    assert!(Tensor::scalar(1.0).backward().is_err());
}

#[test]
fn constants_never_accumulate_grad() {
    let c = t(&[2], &[1.0, 2.0]);
    let x = p(&[2], &[3.0, 4.0]);
    let y = x.mul(&c).unwrap().sum();
    y.backward().unwrap();
    assert!(c.grad().is_none());
    assert!(!c.requires_grad());
    assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
}

#[test]
fn no_grad_records_nothing() {
    let x = p(&[2], &[1.0, 2.0]);
    let y = no_grad(|| x.square().sum());
    assert!(!y.requires_grad());
    assert!(y.is_leaf());
}

#[test]
fn shared_subexpression_visited_once() {
    // y = s + s with s = sum(x): d/dx = 2 regardless of traversal order
    let x = p(&[3], &[1.0, 2.0, 3.0]);
    let s = x.sum();
    s.add(&s).unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
}

#[test]
fn every_reachable_leaf_gets_grad() {
    let a = p(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let b = p(&[2], &[0.5, -0.5]);
    let unused = p(&[2], &[1.0, 1.0]);
    a.add(&b).unwrap().tanh().sum().backward().unwrap();
    assert!(a.grad().is_some() && b.grad().is_some());
    assert!(unused.grad().is_none());
}

#[test]
fn trace_reads_reports_inputs() {
    let a = p(&[2], &[1.0, 2.0]);
    let b = p(&[2], &[1.0, 2.0]);
    let (_, seen) = trace_reads(|| a.square().sum());
    assert!(seen.contains(&a.id()));
    assert!(!seen.contains(&b.id()));
}

#[test]
fn gradient_check_every_op() {
    for seed in 0..20u64 {
        let mut rng = Rng::new(seed);
        let a23 = random_param(&mut rng, &[2, 3]);
        let b23 = random_param(&mut rng, &[2, 3]);
        let b34 = random_param(&mut rng, &[3, 4]);
        let row = random_param(&mut rng, &[3]);
        let col = random_param(&mut rng, &[2, 1]);
        let pos = Tensor::param(&[2, 3], (0..6).map(|_| rng.uniform(0.2, 2.0)).collect()).unwrap();
        let away = Tensor::param(
            &[2, 3],
            (0..6)
                .map(|_| {
                    let m = rng.uniform(0.01, 1.5);
                    if rng.next_f64() < 0.5 { -m } else { m }
                })
                .collect(),
        )
        .unwrap();
        let x3 = random_param(&mut rng, &[2, 4, 3]);
        let v = random_param(&mut rng, &[4, 5]);
        let w = random_param(&mut rng, &[3, 5]);

        check_op("matmul", &[a23.clone(), b34.clone()], &|i| i[0].matmul(&i[1]).unwrap(), seed);
        check_op("add", &[a23.clone(), b23.clone()], &|i| i[0].add(&i[1]).unwrap(), seed);
        check_op("add_row", &[a23.clone(), row.clone()], &|i| i[0].add(&i[1]).unwrap(), seed);
        check_op("sub_row", &[a23.clone(), row.clone()], &|i| i[0].sub(&i[1]).unwrap(), seed);
        check_op("mul", &[a23.clone(), b23.clone()], &|i| i[0].mul(&i[1]).unwrap(), seed);
        check_op("mul_col", &[a23.clone(), col.clone()], &|i| i[0].mul(&i[1]).unwrap(), seed);
        check_op("scale", &[a23.clone()], &|i| i[0].scale(-2.5), seed);
        check_op("concat0", &[a23.clone(), b23.clone()], &|i| i[0].concat(&i[1], 0).unwrap(), seed);
        check_op("concat1", &[a23.clone(), col.clone()], &|i| i[0].concat(&i[1], 1).unwrap(), seed);
        check_op("tanh", &[a23.clone()], &|i| i[0].tanh(), seed);
        check_op("sigmoid", &[a23.clone()], &|i| i[0].sigmoid(), seed);
        check_op("relu", &[away.clone()], &|i| i[0].relu(), seed);
        check_op("exp", &[a23.clone()], &|i| i[0].exp(), seed);
        check_op("log", &[pos.clone()], &|i| i[0].log().unwrap(), seed);
        check_op("square", &[a23.clone()], &|i| i[0].square(), seed);
        check_op("sqrt", &[pos.clone()], &|i| i[0].sqrt().unwrap(), seed);
        check_op("sum", &[a23.clone()], &|i| i[0].sum(), seed);
        check_op("sum_axis0", &[x3.clone()], &|i| i[0].sum_axis(0).unwrap(), seed);
        check_op("sum_axis1", &[x3.clone()], &|i| i[0].sum_axis(1).unwrap(), seed);
        check_op("mean", &[a23.clone()], &|i| i[0].mean(), seed);
        check_op("slice", &[x3.clone()], &|i| i[0].slice(1, 1..3).unwrap(), seed);
        check_op("reshape", &[x3.clone()], &|i| i[0].reshape(&[8, 3]).unwrap(), seed);
        check_op("gather", &[a23.clone()], &|i| i[0].gather(&[5, 0, 0, 3]).unwrap(), seed);
        check_op("cosine_matrix", &[v.clone(), w.clone()], &|i| i[0].cosine_matrix(&i[1]).unwrap(), seed);
        check_op("cosine_self", &[v.clone()], &|i| i[0].cosine_matrix(&i[0]).unwrap(), seed);
        check_op(
            "dropout",
            &[a23.clone()],
            &|i| i[0].dropout(0.3, true, &mut Rng::new(seed)).unwrap(),
            seed,
        );
    }
}

mod props {
    use super::super::optim::clip_global_norm_raw;
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn grl_forward_bitwise_and_backward_negated(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..16),
            lambda in 0.0f64..5.0,
        ) {
            let x = Tensor::param(&[xs.len()], xs.clone()).unwrap();
            let y = x.grad_reverse(lambda);
            prop_assert_eq!(y.to_vec(), xs.clone());
            let up: Vec<f64> = xs.iter().map(|v| v.sin()).collect();
            let w = Tensor::new(&[xs.len()], up.clone()).unwrap();
            y.mul(&w).unwrap().sum().backward().unwrap();
            let g = x.grad().unwrap();
            for (gi, ui) in g.iter().zip(&up) {
                prop_assert_eq!(*gi, -lambda * ui);
            }
        }

        #[test]
        fn clipping_bounds_norm_and_keeps_direction(
            a in proptest::collection::vec(-100f64..100.0, 1..10),
            b in proptest::collection::vec(-100f64..100.0, 1..10),
            max_norm in 0.01f64..10.0,
        ) {
            let before: Vec<f64> = a.iter().chain(&b).copied().collect();
            let (mut a2, mut b2) = (a.clone(), b.clone());
            let norm = clip_global_norm_raw(&mut [a2.as_mut_slice(), b2.as_mut_slice()], max_norm);
            let after: Vec<f64> = a2.iter().chain(&b2).copied().collect();
            let post = after.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(post <= max_norm + 1e-9);
            if norm > max_norm {
                let dot: f64 = before.iter().zip(&after).map(|(x, y)| x * y).sum();
                prop_assert!(dot / (norm * post) > 1.0 - 1e-9);
            } else {
                prop_assert_eq!(after, before);
            }
        }

        #[test]
        fn scheduler_lr_non_increasing(metrics in proptest::collection::vec(0.0f64..10.0, 1..200)) {
            let mut s = super::super::optim::PlateauScheduler::new(1e-3, 0.5, 3);
            let mut last = s.lr();
            for m in metrics {
                s.step(m);
                prop_assert!(s.lr() <= last);
                last = s.lr();
            }
        }
    }
}
