mod common;

use std::sync::Arc;

use cdforge_core::arch::{Block, Mode, Network, DEFAULT_BLOCKS};
use cdforge_core::autograd::{Eval, Graph, Norm, Tape};
use cdforge_core::ops::BatchStats;
use cdforge_core::train::{AdamConfig, Batch, Trainer};
use cdforge_core::{ArchitectureKind, ParamId, ParamStore, RngState, Shape, Tensor};
use common::random_tensor;
use proptest::prelude::*;

const TINY: [Block; 4] = [Block { convs: 1, width: 4 }; 4];

fn build(kind: ArchitectureKind, bands: usize) -> Network {
    Network::build(kind, bands, &mut RngState::new(1)).unwrap()
}

#[test]
fn early_fusion_on_thirteen_bands_takes_twenty_six() {
    assert_eq!(build(ArchitectureKind::FcEf, 13).first_conv_in_channels(), 26);
    assert_eq!(build(ArchitectureKind::FcSiamDiff, 13).first_conv_in_channels(), 13);
}

#[test]
fn concatenation_decoder_is_larger() {
    let conc = build(ArchitectureKind::FcSiamConc, 3);
    let diff = build(ArchitectureKind::FcSiamDiff, 3);
    assert!(conc.parameter_count() > diff.parameter_count());
    for k in 0..4 {
        assert_eq!(
            conc.decoder_conv_inputs(k)[0],
            diff.decoder_conv_inputs(k)[0] + DEFAULT_BLOCKS[k].width
        );
    }
}

#[test]
fn shared_encoder_counts_once() {
    // Siamese stream on 2 bands vs early fusion on 1+1 bands: same first conv
    let conc = build(ArchitectureKind::FcSiamConc, 2);
    let ef = build(ArchitectureKind::FcEf, 1);
    assert_eq!(conc.encoder_parameter_count(), ef.encoder_parameter_count());
    let diff = build(ArchitectureKind::FcSiamDiff, 3);
    let names: Vec<_> = diff.params().iter().map(|(_, p)| p.name.clone()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(names.len(), unique.len());
}

#[test]
fn count_unchanged_by_forward_and_training() {
    let mut rng = RngState::new(2);
    let net = Network::with_blocks(ArchitectureKind::FcSiamDiff, 2, &TINY, 0.2, &mut rng).unwrap();
    let before = (net.parameter_count(), net.params().len());
    let shape = Shape::new(2, 2, 32, 32);
    let batch = Batch {
        img1: random_tensor(shape, &mut rng),
        img2: random_tensor(shape, &mut rng),
        labels: (0..2 * 32 * 32).map(|i| (i % 7 == 0) as u8).collect(),
    };
    net.predict_logits(&batch.img1, &batch.img2).unwrap();
    let mut trainer = Trainer::new(net, AdamConfig::default(), [1.0, 3.0], rng.fork(1)).unwrap();
    for _ in 0..3 {
        trainer.step(&batch).unwrap();
    }
    let net = trainer.network();
    assert_eq!((net.parameter_count(), net.params().len()), before);
}

#[test]
fn logits_keep_input_size() {
    let mut rng = RngState::new(3);
    for kind in ArchitectureKind::ALL {
        let net = build(kind, 3);
        let x = random_tensor(Shape::new(1, 3, 96, 96), &mut rng);
        let y = random_tensor(Shape::new(1, 3, 96, 96), &mut rng);
        assert_eq!(net.predict_logits(&x, &y).unwrap().shape(), Shape::new(1, 2, 96, 96));
    }
}

#[test]
fn difference_network_ignores_input_order() {
    let mut rng = RngState::new(4);
    let net = Network::with_blocks(ArchitectureKind::FcSiamDiff, 3, &TINY, 0.2, &mut rng).unwrap();
    let a = random_tensor(Shape::new(1, 3, 48, 32), &mut rng);
    let b = random_tensor(Shape::new(1, 3, 48, 32), &mut rng);
    let ab = net.predict_logits(&a, &b).unwrap();
    let ba = net.predict_logits(&b, &a).unwrap();
    assert!(ab.max_abs_diff(&ba) < 1e-5);
}

/// Eval graph that hands a perturbed copy of one parameter to a single use,
/// as if the two Siamese streams held separate copies.
struct Duplicated {
    target: ParamId,
    index: usize,
    /// Offset for the first and second use of `target`.
    delta: [f32; 2],
    uses: usize,
}

impl Graph for Duplicated {
    type Value = Arc<Tensor>;

    fn input(&mut self, t: Tensor) -> Arc<Tensor> {
        Eval.input(t)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Arc<Tensor> {
        let mut t = store.get(id).clone();
        if id == self.target {
            t.data_mut()[self.index] += self.delta[self.uses.min(1)];
            self.uses += 1;
        }
        Arc::new(t)
    }

    fn value<'a>(&'a self, v: &'a Arc<Tensor>) -> &'a Tensor {
        v
    }

    fn conv2d(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: &Arc<Tensor>) -> cdforge_core::Result<Arc<Tensor>> {
        Eval.conv2d(x, w, b)
    }

    fn transpose_conv2(
        &mut self,
        x: &Arc<Tensor>,
        w: &Arc<Tensor>,
        b: &Arc<Tensor>,
    ) -> cdforge_core::Result<Arc<Tensor>> {
        Eval.transpose_conv2(x, w, b)
    }

    fn max_pool2(&mut self, x: &Arc<Tensor>) -> cdforge_core::Result<Arc<Tensor>> {
        Eval.max_pool2(x)
    }

    fn relu(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Eval.relu(x)
    }

    fn batch_norm(
        &mut self,
        x: &Arc<Tensor>,
        gamma: &Arc<Tensor>,
        beta: &Arc<Tensor>,
        norm: Norm<'_>,
    ) -> cdforge_core::Result<(Arc<Tensor>, Option<BatchStats>)> {
        Eval.batch_norm(x, gamma, beta, norm)
    }

    fn dropout(&mut self, x: &Arc<Tensor>, p: f32, rng: &mut RngState) -> cdforge_core::Result<Arc<Tensor>> {
        Eval.dropout(x, p, rng)
    }

    fn concat(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> cdforge_core::Result<Arc<Tensor>> {
        Eval.concat(a, b)
    }

    fn abs_diff(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> cdforge_core::Result<Arc<Tensor>> {
        Eval.abs_diff(a, b)
    }
}

#[test]
fn shared_gradient_is_sum_of_stream_gradients() {
    let mut rng = RngState::new(5);
    for kind in [ArchitectureKind::FcSiamConc, ArchitectureKind::FcSiamDiff] {
        let net = Network::with_blocks(kind, 2, &TINY, 0.0, &mut rng).unwrap();
        let shape = Shape::new(1, 2, 16, 16);
        let (a, b) = (random_tensor(shape, &mut rng), random_tensor(shape, &mut rng));
        let mut tape = Tape::new();
        let trace = net
            .forward(&mut tape, &a, &b, Mode::Eval, &mut RngState::new(0))
            .unwrap();
        let r = random_tensor(tape.value(&trace.logits).shape(), &mut rng);
        let grads = tape.backward_with(trace.logits, r.clone()).unwrap();

        for name in ["enc1.conv1.weight", "enc2.conv1.weight", "enc4.conv1.bn.gamma"] {
            let id = net.params().find(name).unwrap();
            let index = rng.below(net.params().get(id).len());
            let analytic = grads.param(id).unwrap().data()[index] as f64;
            let eps = 1e-3f32;
            let stream = |which: usize| {
                let f = |sign: f32| {
                    let mut delta = [0.0; 2];
                    delta[which] = sign * eps;
                    let mut g = Duplicated {
                        target: id,
                        index,
                        delta,
                        uses: 0,
                    };
                    let trace = net.forward(&mut g, &a, &b, Mode::Eval, &mut RngState::new(0)).unwrap();
                    assert_eq!(g.uses, 2, "{name} should be used once per stream");
                    trace
                        .logits
                        .data()
                        .iter()
                        .zip(r.data())
                        .map(|(&y, &w)| y as f64 * w as f64)
                        .sum::<f64>()
                };
                (f(1.0) - f(-1.0)) / (2.0 * eps as f64)
            };
            let (first, second) = (stream(0), stream(1));
            let err = (first + second - analytic).abs() / analytic.abs().max(1e-2);
            assert!(
                err < 2e-2,
                "{kind} {name}: streams {first} + {second} vs analytic {analytic}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn any_multiple_of_sixteen_keeps_size(h in 1usize..5, w in 1usize..5, k in 0usize..3) {
        let kind = ArchitectureKind::ALL[k];
        let mut rng = RngState::new(h as u64 * 31 + w as u64);
        let net = Network::with_blocks(kind, 1, &TINY, 0.2, &mut rng).unwrap();
        let shape = Shape::new(1, 1, 16 * h, 16 * w);
        let x = random_tensor(shape, &mut rng);
        let y = random_tensor(shape, &mut rng);
        prop_assert_eq!(net.predict_logits(&x, &y).unwrap().shape(), Shape::new(1, 2, 16 * h, 16 * w));
    }
}
