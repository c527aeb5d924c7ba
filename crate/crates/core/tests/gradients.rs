mod common;

use common::{random, suites};
use proptest::prelude::*;
use state_vad::autodiff::{conv, Graph};

#[test]
fn every_op_matches_finite_differences() {
    for (name, err) in suites::op_gradient_errors() {
        assert!(err < 1e-4, "{name}: max relative error {err:.3e}");
    }
}

#[test]
fn model_input_gradient() {
    let err = suites::model_input_gradient_error();
    assert!(err < 1e-3, "input gradient relative error {err:.3e}");
}

#[test]
fn model_parameter_gradients() {
    let err = suites::model_param_gradient_error();
    assert!(err < 1e-3, "parameter gradient relative error {err:.3e}");
}

#[test]
fn transposed_conv_is_conv_adjoint() {
    // <conv(x), y> == <x, conv_t(y)> for matching geometry
    for (stride, pad, k) in [(1, 1, 3), (2, 0, 2), (2, 1, 3)] {
        let x = random(&[2, 3, 8, 8], 30, -1.0, 1.0);
        let kernel = random(&[4, 3, k, k], 31, -1.0, 1.0);
        let cx = conv::conv2d(&x, &kernel, None, stride, pad).unwrap();
        let y = random(cx.shape(), 32, -1.0, 1.0);
        let ty = conv::conv_transpose2d(&y, &kernel, None, stride, pad).unwrap();
        if ty.shape() != x.shape() {
            continue;
        }
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1.0), "stride {stride} pad {pad}");

        // and equals the conv input-gradient from the tape
        let g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let out = xv.conv2d(g.constant(kernel.clone()), None, stride, pad).unwrap();
        let loss = out.mul(g.constant(y.clone())).unwrap().sum();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(xv).unwrap().max_abs_diff(&ty) < 1e-6);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let x = random(&[3, 5, 4], 40, -30.0, 30.0);
    let y = state_vad::autodiff::layout::softmax(&x, 1).unwrap();
    for o in 0..3 {
        for i in 0..4 {
            let s: f64 = (0..5).map(|j| y.at(&[o, j, i])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let x1 = random(&[1, 2, 5, 5], seed, -1.0, 1.0);
        let x2 = random(&[1, 2, 5, 5], seed + 1, -1.0, 1.0);
        let k = random(&[3, 2, 3, 3], seed + 2, -1.0, 1.0);
        let mix = x1.zip_map(&x2, |p, q| a * p + b * q).unwrap();
        let lhs = conv::conv2d(&mix, &k, None, 1, 1).unwrap();
        let c1 = conv::conv2d(&x1, &k, None, 1, 1).unwrap();
        let c2 = conv::conv2d(&x2, &k, None, 1, 1).unwrap();
        let rhs = c1.zip_map(&c2, |p, q| a * p + b * q).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn softmax_is_shift_invariant(seed in 0u64..1000, c in -50.0f64..50.0) {
        let x = random(&[2, 6], seed, -5.0, 5.0);
        let y = state_vad::autodiff::layout::softmax(&x, 1).unwrap();
        let ys = state_vad::autodiff::layout::softmax(&x.map(|v| v + c), 1).unwrap();
        prop_assert!(y.max_abs_diff(&ys) < 1e-12);
        prop_assert!(y.data().iter().all(|&p| p > 0.0 && p <= 1.0));
    }
}
