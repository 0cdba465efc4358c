use cdforge_core::arch::{ArchitectureKind, Block, Mode, Network};
use cdforge_core::autograd::{Fault, Graph, Tape};
use cdforge_core::gradcheck::{check_ops, relative_error, GradCheckConfig};
use cdforge_core::{RngState, Shape, Tensor};

#[test]
fn every_op_passes() {
    let cfg = GradCheckConfig::default();
    let reports = check_ops(&cfg, None).unwrap();
    assert!(reports.len() >= 9);
    for r in &reports {
        assert_eq!(r.checked, cfg.samples);
        assert!(
            r.ok(),
            "{} passed {}/{} (max {:.3e})",
            r.name,
            r.passed,
            r.checked,
            r.max_rel_error
        );
    }
}

#[test]
fn corrupted_conv_backward_is_caught() {
    let reports = check_ops(&GradCheckConfig::default(), Some(Fault::ConvBackward)).unwrap();
    let conv = reports.iter().find(|r| r.name == "conv2d").unwrap();
    assert!(!conv.ok());
    assert!(conv.max_rel_error > 0.1);
}

#[test]
fn relative_error_uses_the_floor() {
    assert_eq!(relative_error(2.0, 1.0, 1e-3), 0.5);
    assert_eq!(relative_error(0.0, 0.0, 1e-3), 0.0);
    assert!((relative_error(1e-6, -1e-6, 1e-3) - 2e-3).abs() < 1e-12);
}

fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Whole-network backpropagation on a narrow network, compared as a vector
/// over sampled input and parameter coordinates.
fn network_vector_error(kind: ArchitectureKind, fault: Option<Fault>) -> f64 {
    let mut rng = RngState::new(31);
    let blocks = [Block { convs: 2, width: 2 }; 4];
    let mut net = Network::with_blocks(kind, 2, &blocks, 0.2, &mut rng).unwrap();
    let shape = Shape::new(1, 2, 32, 32);
    let mut imgs = [
        Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0)),
        Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0)),
    ];
    let drop = rng.fork(1);
    let eval = |net: &Network, imgs: &[Tensor; 2]| {
        let mut t = Tape::new();
        let tr = net
            .forward(&mut t, &imgs[0], &imgs[1], Mode::Train, &mut drop.clone())
            .unwrap();
        t.value(&tr.logits).clone()
    };
    let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let v = [tape.leaf(imgs[0].clone()), tape.leaf(imgs[1].clone())];
    let tr = net
        .forward_graph(&mut tape, v[0], v[1], Mode::Train, &mut drop.clone())
        .unwrap();
    let r = Tensor::from_fn(tape.value(&tr.logits).shape(), |_| rng.uniform_range(-1.0, 1.0));
    let grads = tape.backward_with(tr.logits, r.clone()).unwrap();
    let ids: Vec<_> = net.params().ids().collect();
    // Small enough to cross few ReLU and pooling kinks; the narrow network
    // keeps single-precision roundoff below the step.
    let eps = 1e-3f32;
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for i in 0..120 {
        let (analytic, numeric) = if i % 2 == 0 {
            let (w, k) = (rng.below(2), rng.below(shape.len()));
            let a = grads.wrt(v[w]).map_or(0.0, |g| g.data()[k] as f64);
            let o = imgs[w].data()[k];
            imgs[w].data_mut()[k] = o + eps;
            let p = project(&eval(&net, &imgs), &r);
            imgs[w].data_mut()[k] = o - eps;
            let m = project(&eval(&net, &imgs), &r);
            imgs[w].data_mut()[k] = o;
            (a, (p - m) / (2.0 * eps as f64))
        } else {
            let id = ids[rng.below(ids.len())];
            let k = rng.below(net.params().get(id).len());
            let a = grads.param(id).map_or(0.0, |g| g.data()[k] as f64);
            let o = net.params().get(id).data()[k];
            net.params_mut().get_mut(id).data_mut()[k] = o + eps;
            let p = project(&eval(&net, &imgs), &r);
            net.params_mut().get_mut(id).data_mut()[k] = o - eps;
            let m = project(&eval(&net, &imgs), &r);
            net.params_mut().get_mut(id).data_mut()[k] = o;
            (a, (p - m) / (2.0 * eps as f64))
        };
        diff += (analytic - numeric).powi(2);
        norm += numeric.powi(2);
    }
    (diff / norm).sqrt()
}

#[test]
fn narrow_networks_backpropagate_correctly() {
    for kind in ArchitectureKind::ALL {
        let err = network_vector_error(kind, None);
        println!("{kind}: vector relative error {err:.3e}");
        assert!(err < 5e-2, "{kind}: {err}");
    }
}

#[test]
fn narrow_network_check_sees_a_corrupted_conv() {
    let err = network_vector_error(ArchitectureKind::FcEf, Some(Fault::ConvBackward));
    assert!(err > 0.2, "{err}");
}
