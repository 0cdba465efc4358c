mod common;

use cdforge_core::autograd::{Graph, Tape};
use cdforge_core::gradcheck::relative_error;
use cdforge_core::ops;
use cdforge_core::{Network, RngState, Shape, Tensor};
use common::{oracle, random_tensor};
use proptest::prelude::*;

fn random_shape(rng: &mut RngState, even: bool) -> Shape {
    let side = |rng: &mut RngState| {
        let v = 1 + rng.below(9);
        if even {
            2 * v
        } else {
            v
        }
    };
    Shape::new(1 + rng.below(2), 1 + rng.below(4), side(rng), side(rng))
}

#[test]
fn conv2d_matches_reference() {
    let mut rng = RngState::new(100);
    for _ in 0..20 {
        let s = random_shape(&mut rng, false);
        let cout = 1 + rng.below(5);
        let x = random_tensor(s, &mut rng);
        let w = random_tensor(Shape::new(cout, s.c, 3, 3), &mut rng);
        let b = random_tensor(Shape::new(1, cout, 1, 1), &mut rng);
        let got = ops::conv2d(&x, &w, &b).unwrap();
        assert!(got.max_abs_diff(&oracle::conv2d(&x, &w, &b)) < 1e-5);
    }
}

#[test]
fn transpose_conv2_matches_reference() {
    let mut rng = RngState::new(101);
    for _ in 0..20 {
        let s = random_shape(&mut rng, false);
        let cout = 1 + rng.below(5);
        let x = random_tensor(s, &mut rng);
        let w = random_tensor(Shape::new(s.c, cout, 3, 3), &mut rng);
        let b = random_tensor(Shape::new(1, cout, 1, 1), &mut rng);
        let got = ops::transpose_conv2(&x, &w, &b).unwrap();
        assert!(got.max_abs_diff(&oracle::transpose_conv2(&x, &w, &b)) < 1e-5);
    }
}

#[test]
fn max_pool2_matches_window_scan() {
    let mut rng = RngState::new(102);
    let x = random_tensor(Shape::new(1, 3, 8, 8), &mut rng);
    let (y, _) = ops::max_pool2(&x).unwrap();
    assert_eq!(y.data(), oracle::max_pool2(&x).data());
}

#[test]
fn zero_input_transpose_is_zero() {
    let w = random_tensor(Shape::new(2, 3, 3, 3), &mut RngState::new(1));
    let y = ops::transpose_conv2(
        &Tensor::zeros(Shape::new(1, 2, 4, 4)),
        &w,
        &Tensor::zeros(Shape::new(1, 3, 1, 1)),
    )
    .unwrap();
    assert_eq!(y.shape(), Shape::new(1, 3, 8, 8));
    assert!(y.data().iter().all(|&v| v == 0.0));
}

/// Central differences of `Σ r·f(x)` against the tape's input gradient.
fn input_gradient_check(
    x: Tensor,
    f: &dyn Fn(&mut Tape, cdforge_core::autograd::Var) -> cdforge_core::autograd::Var,
) -> f64 {
    let mut rng = RngState::new(55);
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let y = f(&mut tape, v);
    let r = random_tensor(tape.value(&y).shape(), &mut rng);
    let grads = tape.backward_with(y, r.clone()).unwrap();
    let g = grads.wrt(v).unwrap().clone();
    let project = |x: &Tensor| {
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let y = f(&mut t, v);
        t.value(&y)
            .data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum::<f64>()
    };
    let eps = 1e-2f32;
    let mut worst = 0.0f64;
    let mut xs = x;
    for i in 0..xs.len() {
        let o = xs.data()[i];
        xs.data_mut()[i] = o + eps;
        let plus = project(&xs);
        xs.data_mut()[i] = o - eps;
        let minus = project(&xs);
        xs.data_mut()[i] = o;
        let numeric = (plus - minus) / (2.0 * eps as f64);
        worst = worst.max(relative_error(g.data()[i] as f64, numeric, 1e-3));
    }
    worst
}

#[test]
fn conv2d_input_gradient_matches_differences() {
    let mut rng = RngState::new(7);
    let x = random_tensor(Shape::new(2, 4, 8, 8), &mut rng);
    let w = random_tensor(Shape::new(3, 4, 3, 3), &mut rng);
    let b = random_tensor(Shape::new(1, 3, 1, 1), &mut rng);
    let worst = input_gradient_check(x, &|t, v| {
        let w = t.input(w.clone());
        let b = t.input(b.clone());
        t.conv2d(&v, &w, &b).unwrap()
    });
    assert!(worst < 1e-2, "worst relative error {worst}");
}

#[test]
fn transpose_conv2_input_gradient_matches_differences() {
    let mut rng = RngState::new(8);
    let x = random_tensor(Shape::new(1, 3, 4, 5), &mut rng);
    let w = random_tensor(Shape::new(3, 2, 3, 3), &mut rng);
    let b = random_tensor(Shape::new(1, 2, 1, 1), &mut rng);
    let worst = input_gradient_check(x, &|t, v| {
        let w = t.input(w.clone());
        let b = t.input(b.clone());
        t.transpose_conv2(&v, &w, &b).unwrap()
    });
    assert!(worst < 1e-2, "worst relative error {worst}");
}

#[test]
fn concat_gradient_splits_exactly() {
    let mut rng = RngState::new(9);
    let a = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
    let b = random_tensor(Shape::new(1, 3, 4, 4), &mut rng);
    let mut t = Tape::new();
    let (va, vb) = (t.leaf(a), t.leaf(b));
    let y = t.concat(&va, &vb).unwrap();
    let seed = random_tensor(t.value(&y).shape(), &mut rng);
    let g = t.backward_with(y, seed.clone()).unwrap();
    assert_eq!(g.wrt(va).unwrap().data(), &seed.data()[..32]);
    assert_eq!(g.wrt(vb).unwrap().data(), &seed.data()[32..]);
    let worst = input_gradient_check(random_tensor(Shape::new(1, 2, 4, 4), &mut rng), &|t, v| {
        let other = t.input(Tensor::full(Shape::new(1, 3, 4, 4), 0.5));
        t.concat(&v, &other).unwrap()
    });
    assert!(worst < 1e-2, "worst relative error {worst}");
}

#[test]
fn concat_with_empty_channels_is_identity() {
    let a = random_tensor(Shape::new(1, 2, 3, 3), &mut RngState::new(3));
    let empty = Tensor::zeros(Shape::new(1, 0, 3, 3));
    assert_eq!(ops::concat_channels(&a, &empty).unwrap(), a);
}

#[test]
fn train_mode_batch_norm_hits_requested_moments() {
    let mut rng = RngState::new(10);
    let s = Shape::new(4, 8, 16, 16);
    let x = Tensor::from_fn(s, |_| rng.uniform_range(-3.0, 5.0));
    let gamma = Tensor::from_fn(Shape::new(1, 8, 1, 1), |c| 0.5 + c as f32 * 0.25);
    let beta = Tensor::from_fn(Shape::new(1, 8, 1, 1), |c| c as f32 - 3.0);
    let (y, _, _) = ops::batch_norm_train(&x, &gamma, &beta).unwrap();
    for c in 0..8 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| {
                y.item(n)[c * 256..(c + 1) * 256]
                    .iter()
                    .map(|&v| v as f64)
                    .collect::<Vec<_>>()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let g = gamma.data()[c] as f64;
        assert!((mean - beta.data()[c] as f64).abs() < 1e-4, "channel {c} mean {mean}");
        assert!((var - g * g).abs() < 1e-4, "channel {c} var {var} vs {}", g * g);
    }
}

#[test]
fn dropout_is_identity_in_eval_mode() {
    let mut rng = RngState::new(4);
    let blocks = [cdforge_core::arch::Block { convs: 1, width: 2 }; 4];
    let net = Network::with_blocks(cdforge_core::ArchitectureKind::FcEf, 1, &blocks, 0.5, &mut rng).unwrap();
    let x = random_tensor(Shape::new(1, 1, 16, 16), &mut rng);
    let a = net.predict_logits(&x, &x).unwrap();
    let b = net.predict_logits(&x, &x).unwrap();
    assert_eq!(a.data(), b.data());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
        let mut rng = RngState::new(seed);
        let logits = Tensor::from_fn(Shape::new(2, 2, h, w), |_| rng.uniform_range(-30.0, 30.0));
        let p = ops::softmax2(&logits).unwrap();
        for n in 0..2 {
            let item = p.item(n);
            let (p0, p1) = item.split_at(h * w);
            for (a, b) in p0.iter().zip(p1) {
                prop_assert!((a + b - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_masks_and_weights(seed in any::<u64>()) {
        let a = ops::dropout_mask(500, 0.3, &mut RngState::new(seed)).unwrap();
        let b = ops::dropout_mask(500, 0.3, &mut RngState::new(seed)).unwrap();
        prop_assert_eq!(a, b);
        let blocks = [cdforge_core::arch::Block { convs: 1, width: 3 }; 4];
        let n1 = Network::with_blocks(cdforge_core::ArchitectureKind::FcSiamDiff, 2, &blocks, 0.2, &mut RngState::new(seed)).unwrap();
        let n2 = Network::with_blocks(cdforge_core::ArchitectureKind::FcSiamDiff, 2, &blocks, 0.2, &mut RngState::new(seed)).unwrap();
        for ((_, p), (_, q)) in n1.params().iter().zip(n2.params().iter()) {
            prop_assert_eq!(p.value.data(), q.value.data());
        }
    }

    #[test]
    fn abs_diff_is_symmetric(seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let a = random_tensor(Shape::new(1, 2, 3, 3), &mut rng);
        let b = random_tensor(Shape::new(1, 2, 3, 3), &mut rng);
        prop_assert_eq!(ops::abs_diff(&a, &b).unwrap(), ops::abs_diff(&b, &a).unwrap());
    }

    #[test]
    fn relu_backward_masks_by_output(seed in any::<u64>()) {
        let mut rng = RngState::new(seed);
        let x = random_tensor(Shape::new(1, 1, 4, 4), &mut rng);
        let y = ops::relu(&x);
        let dy = Tensor::full(x.shape(), 1.0);
        let dx = ops::relu_backward(&dy, &y);
        for (&g, &v) in dx.data().iter().zip(x.data()) {
            prop_assert_eq!(g, if v > 0.0 { 1.0 } else { 0.0 });
        }
    }
}
