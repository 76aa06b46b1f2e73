use proptest::prelude::*;
use stlm_core::losses::*;
use stlm_core::train::LossBundle;
use stlm_core::{Tape, Tensor};

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn eval(f: impl FnOnce(&mut Tape<f64>) -> stlm_core::NodeId) -> f64 {
    let mut tape = Tape::new();
    let id = f(&mut tape);
    tape.value(id).item()
}

fn features(n: usize, d: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
    Tensor::from_fn(&[n, d], f)
}

#[test]
fn cosine_distill_examples() {
    let a = features(4, 3, |i| (i as f64 * 0.7).sin() + 1.5);
    let neg = a.map(|v| -v);
    let same = eval(|tp| {
        let (x, y, u, v) = (tp.constant(a.clone()), tp.constant(a.clone()), tp.constant(a.clone()), tp.constant(a.clone()));
        cosine_distill(tp, &[x, u], &[y, v]).unwrap()
    });
    assert!(same.abs() < 1e-6);
    let opposite = eval(|tp| {
        let (x, y, u, v) = (tp.constant(a.clone()), tp.constant(neg.clone()), tp.constant(a.clone()), tp.constant(neg.clone()));
        cosine_distill(tp, &[x, u], &[y, v]).unwrap()
    });
    assert!((opposite - 4.0).abs() < 1e-6);
    // Per-row orthogonal: e1 vs e2.
    let e1 = features(5, 2, |i| if i % 2 == 0 { 1.0 } else { 0.0 });
    let e2 = features(5, 2, |i| if i % 2 == 1 { 1.0 } else { 0.0 });
    let ortho = eval(|tp| {
        let (x, y, u, v) = (tp.constant(e1.clone()), tp.constant(e2.clone()), tp.constant(e1.clone()), tp.constant(e2.clone()));
        cosine_distill(tp, &[x, u], &[y, v]).unwrap()
    });
    assert!((ortho - 2.0).abs() < 1e-12);
}

#[test]
fn cosine_distill_rejects_mismatched_inputs() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 3]));
    assert!(cosine_distill(&mut tape, &[a], &[b]).is_err());
    assert!(cosine_distill(&mut tape, &[a], &[]).is_err());
}

#[test]
fn focal_examples() {
    let mask = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let exact = eval(|tp| {
        let (m, o) = (tp.constant(mask.clone()), tp.constant(mask.clone()));
        focal(tp, m, o, 4.0).unwrap()
    });
    assert!(exact.abs() < 1e-6);
    let half = eval(|tp| {
        let m = tp.constant(mask.clone());
        let o = tp.constant(Tensor::full(&[2, 2], 0.5));
        focal(tp, m, o, 4.0).unwrap()
    });
    assert!((half - 0.043321).abs() < 1e-6, "{half}");
    // γ = 0 is the mean binary cross-entropy of p.
    let pred = t(&[2, 2], vec![0.9, 0.2, 0.4, 0.7]);
    let bce: f64 = [0.9f64, 0.8, 0.6, 0.7].iter().map(|p| -(p + FOCAL_EPS).ln()).sum::<f64>() / 4.0;
    let g0 = eval(|tp| {
        let (m, o) = (tp.constant(mask.clone()), tp.constant(pred.clone()));
        focal(tp, m, o, 0.0).unwrap()
    });
    assert!((g0 - bce).abs() < 1e-12);
}

#[test]
fn l1_examples() {
    let mask = t(&[2, 3], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    let l = |pred: Tensor<f64>| {
        eval(|tp| {
            let (m, o) = (tp.constant(mask.clone()), tp.constant(pred));
            l1(tp, m, o).unwrap()
        })
    };
    assert_eq!(l(mask.clone()), 0.0);
    assert!((l(mask.map(|v| (v - 0.25).abs())) - 0.25).abs() < 1e-12);
    assert!((l(Tensor::zeros(&[2, 3])) - 0.5).abs() < 1e-12);
}

#[test]
fn total_is_plain_sum() {
    let b = LossBundle::from_parts(0.1, 0.2, 0.3, 0.4);
    assert!((b.l_total - 1.0).abs() < 1e-15);
    assert_eq!(LossBundle::from_parts(0.0, 0.0, 0.0, 0.0).l_total, 0.0);
    let v = eval(|tp| {
        let parts: Vec<_> = [0.1, 0.2, 0.3, 0.4].iter().map(|&x| tp.scalar(x)).collect();
        sum_all(tp, &parts).unwrap()
    });
    assert!((v - 1.0).abs() < 1e-15);
}

#[test]
fn logit_distill_examples() {
    let teacher = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let same = eval(|tp| {
        let (a, b) = (tp.constant(teacher.clone()), tp.constant(teacher.clone()));
        logit_distill(tp, a, b, 4.0).unwrap()
    });
    assert!(same.abs() < 1e-6);
    let v = eval(|tp| {
        let a = tp.constant(Tensor::full(&[3, 3], 1.0));
        let b = tp.constant(Tensor::full(&[3, 3], 0.5));
        logit_distill(tp, a, b, 4.0).unwrap()
    });
    assert!((v - 0.543321).abs() < 1e-6, "{v}");
}

proptest! {
    #[test]
    fn losses_nonnegative_and_permutation_invariant(
        vals in prop::collection::vec((0.01f64..0.99, any::<bool>()), 1..40),
        rot in 0usize..40,
    ) {
        let n = vals.len();
        let pred: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let mask: Vec<f64> = vals.iter().map(|v| v.1 as u8 as f64).collect();
        let r = rot % n;
        let rotate = |v: &[f64]| { let mut w = v.to_vec(); w.rotate_left(r); w };
        let run = |p: Vec<f64>, m: Vec<f64>| eval(|tp| {
            let (m, o) = (tp.constant(t(&[n], m.clone())), tp.constant(t(&[n], p.clone())));
            let f = focal(tp, m, o, 4.0).unwrap();
            let l = l1(tp, m, o).unwrap();
            let fv = tp.value(f).item();
            assert!(fv >= 0.0 && tp.value(l).item() >= 0.0);
            tp.add(f, l).unwrap()
        });
        let a = run(pred.clone(), mask.clone());
        let b = run(rotate(&pred), rotate(&mask));
        prop_assert!(a.is_finite() && a >= 0.0);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cosine_distill_symmetric_and_scale_invariant(
        data in prop::collection::vec(0.1f64..2.0, 24),
        other in prop::collection::vec(-2.0f64..2.0, 24),
        alpha in 0.1f64..10.0,
    ) {
        let a = t(&[6, 4], data.clone());
        let b = t(&[6, 4], other.iter().map(|v| if v.abs() < 0.1 { 0.5 } else { *v }).collect());
        let d = |x: &Tensor<f64>, y: &Tensor<f64>| eval(|tp| {
            let (i, j) = (tp.constant(x.clone()), tp.constant(y.clone()));
            cosine_distill(tp, &[i], &[j]).unwrap()
        });
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
        prop_assert!(d(&a, &a.map(|v| v * alpha)).abs() < 1e-6);
        let v = d(&a, &b);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&v));
    }
}
