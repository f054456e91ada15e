use super::*;
use crate::error::Error;
use crate::tensor::Tensor;

#[test]
fn square_forward_and_backward() {
    let mut g = Graph::new();
    let x = g.input("x", Tensor::scalar(3.0), true).unwrap();
    let y = g.square(x).unwrap();
    assert_eq!(g.value(y).item(), Some(9.0));
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.by_name("x").unwrap().item(), Some(6.0));
}

#[test]
fn sum_forward_and_backward() {
    let mut g = Graph::new();
    let x = g.input("x", Tensor::vector(vec![1., 2., 3.]), true).unwrap();
    let y = g.sum(x).unwrap();
    assert_eq!(g.value(y).item(), Some(6.0));
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1., 1., 1.]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.input("x", Tensor::vector(vec![0.; 4]), false).unwrap();
    let y = g.softmax(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.25; 4]);
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot() {
    let mut g = Graph::new();
    let x = g
        .input("logits", Tensor::new(vec![1, 4], vec![0.; 4]).unwrap(), true)
        .unwrap();
    let loss = g.cross_entropy(x, &[0]).unwrap();
    let grads = g.backward(loss).unwrap();
    let got = grads.get(x).unwrap().data();
    let want = [-0.75, 0.25, 0.25, 0.25];
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let err = check_gradient(
        |g, v| g.cross_entropy(v, &[0]),
        &Tensor::new(vec![1, 4], vec![0.; 4]).unwrap(),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn fan_out_accumulates() {
    // y = sum(x + x) vs y = sum(2x)
    let x0 = Tensor::vector(vec![0.3, -1.2, 2.0]);
    let mut g1 = Graph::new();
    let x = g1.input("x", x0.clone(), true).unwrap();
    let s = g1.add(x, x).unwrap();
    let y1 = g1.sum(s).unwrap();
    let a = g1.backward(y1).unwrap().get(x).unwrap().clone();

    let mut g2 = Graph::new();
    let x = g2.input("x", x0, true).unwrap();
    let s = g2.scale(x, 2.0).unwrap();
    let y2 = g2.sum(s).unwrap();
    let b = g2.backward(y2).unwrap().get(x).unwrap().clone();
    assert_eq!(a, b);
    assert_eq!(a.data(), &[2., 2., 2.]);
}

#[test]
fn backward_rejects_non_scalar_and_unknown_nodes() {
    let mut g = Graph::new();
    let x = g.input("x", Tensor::vector(vec![1., 2.]), true).unwrap();
    assert!(matches!(g.backward(x), Err(Error::NonScalarOutput { .. })));

    let mut other = Graph::new();
    let a = other.input("a", Tensor::scalar(1.0), true).unwrap();
    let b = other.square(a).unwrap();
    let empty = Graph::new();
    assert!(matches!(empty.backward(b), Err(Error::BackwardBeforeForward(1))));
}

#[test]
fn non_finite_results_report_the_node() {
    let mut g = Graph::new();
    let x = g.input("x", Tensor::vector(vec![-1.0]), false).unwrap();
    let err = g.log(x).unwrap_err();
    assert!(matches!(err, Error::NonFinite { node: 1, op: "log" }), "{err}");

    let mut g = Graph::new().with_finite_check(false);
    let x = g.input("x", Tensor::vector(vec![-1.0]), false).unwrap();
    let y = g.log(x).unwrap();
    assert!(g.value(y).data()[0].is_nan());
}

#[test]
fn shape_mismatches_are_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(vec![2, 3])).unwrap();
    assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
    let c = g.constant(Tensor::zeros(vec![3, 2])).unwrap();
    assert!(matches!(g.add(a, c), Err(Error::Shape { .. })));
    let bias = g.constant(Tensor::zeros(vec![2])).unwrap();
    assert!(matches!(g.bias_add(a, bias), Err(Error::Shape { .. })));
}

#[test]
fn scalar_broadcast_gradients_sum() {
    let mut g = Graph::new();
    let s = g.input("s", Tensor::scalar(2.0), true).unwrap();
    let x = g.constant(Tensor::vector(vec![1., 2., 3.])).unwrap();
    let y = g.mul(s, x).unwrap();
    let z = g.sum(y).unwrap();
    assert_eq!(g.value(z).item(), Some(12.0));
    let grads = g.backward(z).unwrap();
    assert_eq!(grads.get(s).unwrap().item(), Some(6.0));
}

#[test]
fn unreached_leaves_get_zero_gradient() {
    let mut g = Graph::new();
    let a = g.input("a", Tensor::scalar(1.0), true).unwrap();
    let b = g.input("b", Tensor::vector(vec![1., 1.]), true).unwrap();
    let y = g.square(a).unwrap();
    let named = g.backward(y).unwrap().into_named();
    assert_eq!(named["b"].data(), &[0., 0.]);
    assert_eq!(named["a"].item(), Some(2.0));
    let _ = b;
}

#[test]
fn forward_is_bit_identical_on_repeat() {
    let run = || {
        let mut g = Graph::new();
        let x = g
            .input("x", Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.9, 1.3, -2.2, 0.05]).unwrap(), false)
            .unwrap();
        let w = g
            .constant(Tensor::new(vec![3, 2], vec![0.3, -0.7, 1.1, 0.2, -0.5, 0.8]).unwrap())
            .unwrap();
        let h = g.matmul(x, w).unwrap();
        let s = g.softmax(h).unwrap();
        g.value(s).clone()
    };
    let a = run();
    let b = run();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn gradcheck_square_is_tight() {
    let err = check_gradient(|g, x| g.square(x), &Tensor::scalar(3.0), 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gradcheck_rejects_bad_step_and_nondeterminism() {
    assert!(check_gradient(|g, x| g.square(x), &Tensor::scalar(1.0), 0.0).is_err());
    let counter = std::cell::Cell::new(0.0);
    let res = check_gradient(
        |g, x| {
            counter.set(counter.get() + 1.0);
            let y = g.add_scalar(x, counter.get())?;
            g.sum(y)
        },
        &Tensor::scalar(1.0),
        1e-5,
    );
    assert!(matches!(res, Err(Error::NonDeterministic)));
}

#[test]
fn global_avg_pool_and_reshape() {
    let mut g = Graph::new();
    let x = g
        .input("x", Tensor::new(vec![1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap(), true)
        .unwrap();
    let p = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(p).data(), &[1.5, 5.5]);
    let r = g.reshape(p, vec![2]).unwrap();
    let s = g.sum(r).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.25; 8]);
}
