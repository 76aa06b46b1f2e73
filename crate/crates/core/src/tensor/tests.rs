use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::gradsuite::{check_primitive, primitive_suite, SuiteOptions, PRIMITIVES};
use crate::tensor::gradcheck::{grad_check, DEFAULT_REL_TOL};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_returns_input() {
    let mut tape = Tape::<f64>::new();
    let x = t(&[3, 2], &[1.0, -2.0, 3.5, 4.0, 0.25, 6.0]);
    let i = tape.constant(Tensor::eye(3));
    let xv = tape.constant(x.clone());
    let y = tape.matmul(i, xv).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn softmax_of_uniform_logits() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[4]));
    let y = tape.softmax(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25; 4]);
}

#[test]
fn relu_and_sigmoid_definitions() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::new(&[3], vec![-1.5, 0.0, 2.0]).unwrap());
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    let z = tape.constant(Tensor::scalar(0.0));
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.value(s).item(), 0.5);
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(t(&[3], &[1.0, 2.0, 3.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq, None).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    assert_eq!(grads.get(loss).unwrap().item(), 1.0);
}

#[test]
fn backward_of_mean_is_uniform() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::from_fn(&[5], |i| i as f64));
    let loss = tape.mean(x, None).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 0.2));
}

#[test]
fn backward_of_relu_uses_zero_subgradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(t(&[2], &[-1.0, 2.0]));
    let r = tape.relu(x).unwrap();
    let loss = tape.sum(r, None).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_nodes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(Error::LossNotScalar(_))));
    assert!(matches!(tape.backward(NodeId(99)), Err(Error::UnknownNode(99))));
}

#[test]
fn shape_mismatch_reports_kind_and_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::ShapeMismatch { kind, shapes }) => {
            assert_eq!(kind, "matmul");
            assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn non_finite_output_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[1.0, -1.0]));
    assert_eq!(tape.log(x), Err(Error::NonFinite { kind: "log" }));
}

#[test]
fn constants_do_not_record() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    tape.add(a, b).unwrap();
    assert_eq!(tape.recorded(), 0);
    let v = tape.variable(Tensor::zeros(&[2]));
    tape.add(a, v).unwrap();
    assert_eq!(tape.recorded(), 1);
    for (_, inputs, out) in tape.entries() {
        assert!(inputs.iter().all(|i| i < &out));
    }
}

#[test]
fn repeated_use_sums_contributions() {
    let mut tape = Tape::<f64>::new();
    let x = tape.variable(Tensor::scalar(3.0));
    let y = tape.add(x, x).unwrap();
    let z = tape.mul(y, x).unwrap();
    let grads = tape.backward(z).unwrap();
    // z = 2x², dz/dx = 4x
    assert_eq!(grads.get(x).unwrap().item(), 12.0);
}

#[test]
fn grad_check_sum_of_squares_is_exact() {
    for seed in 0..5 {
        let r = grad_check(
            "x²",
            &[&[4, 3]],
            |tape, ids| {
                let sq = tape.mul(ids[0], ids[0])?;
                tape.sum(sq, None)
            },
            seed,
            DEFAULT_REL_TOL,
        )
        .unwrap();
        assert!(r.max_rel_err() < 1e-8, "{}", r.max_rel_err());
    }
}

#[test]
fn every_primitive_passes_finite_differences() {
    let entries = primitive_suite(&SuiteOptions::default()).unwrap();
    assert_eq!(entries.len(), PRIMITIVES.len());
    for e in &entries {
        assert!(e.seeds >= 20);
        assert!(e.passed(), "{} max rel err {}", e.name, e.max_rel_err);
    }
}

#[test]
fn injected_relu_fault_is_caught() {
    let failing: Vec<bool> = (0..5)
        .map(|s| !check_primitive("relu", s, Some("relu")).unwrap().passed())
        .collect();
    assert!(failing.iter().any(|&f| f));
}

#[test]
fn replay_is_bitwise() {
    let mut tape = Tape::<f32>::new();
    let x = tape.variable(Tensor::from_fn(&[4, 8], |i| (i as f32 * 0.37).sin()));
    let w = tape.variable(Tensor::from_fn(&[8, 8], |i| (i as f32 * 0.11).cos()));
    let b = tape.variable(Tensor::zeros(&[8]));
    let h = tape.linear(x, w, b).unwrap();
    let h = tape.layer_norm(h, None).unwrap();
    let h = tape.gelu(h).unwrap();
    let a = tape.attention(h, h, h, 2).unwrap();
    let s = tape.softmax(a).unwrap();
    tape.sum(s, None).unwrap();
    assert!(tape.replay_matches().unwrap());
}

#[test]
fn conv_padding_and_dilation_shapes() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[2, 8, 8]));
    let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    let y = tape.conv2d(x, w, None, 1, 3, 3).unwrap();
    assert_eq!(tape.value(y).shape(), &[4, 8, 8]);
    let y = tape.conv2d(x, w, None, 2, 1, 1).unwrap();
    assert_eq!(tape.value(y).shape(), &[4, 4, 4]);
}

#[test]
fn bilinear_resize_preserves_constants() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1, 3, 5], 0.7));
    let y = tape.resize(x, 9, 4).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
}

proptest! {
    #[test]
    fn l2_normalize_has_unit_norm(data in proptest::collection::vec(-10.0f32..10.0, 1..32)) {
        let norm: f32 = data.iter().map(|v| v * v).sum::<f32>().sqrt();
        prop_assume!(norm >= 1e-6);
        let n = data.len();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(&[n], data).unwrap());
        let y = tape.l2_normalize(x, 0).unwrap();
        let out: f32 = tape.value(y).data().iter().map(|v| v * v).sum::<f32>().sqrt();
        prop_assert!(out <= 1.0 + 1e-6 && out >= 1.0 - 1e-5, "{}", out);
    }
}
