use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::kind::ArchitectureKind;
use super::layers::{Conv, ConvBn, Up, HEAD_GAIN};
use crate::autograd::{Eval, Graph};
use crate::error::{Error, Result};
use crate::ops::{check_dropout_rate, BatchStats, RunningStats};
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Number of down/up-sampling stages.
pub const STAGES: usize = 4;
/// Input height and width must be multiples of this.
pub const SIZE_MULTIPLE: usize = 1 << STAGES;
pub const DEFAULT_DROPOUT: f32 = 0.2;

/// One encoder stage: `convs` convolutions producing `width` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub convs: usize,
    pub width: usize,
}

pub const DEFAULT_BLOCKS: [Block; STAGES] = [
    Block { convs: 2, width: 16 },
    Block { convs: 2, width: 32 },
    Block { convs: 3, width: 64 },
    Block { convs: 3, width: 128 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of one forward pass.
#[derive(Debug)]
pub struct ForwardTrace<V> {
    /// Fused skip tensors fed to the decoder, finest stage first.
    pub skips: Vec<V>,
    /// Fused bottleneck fed to the first upsampling layer.
    pub bottleneck: V,
    /// `(N, 2, H, W)` class scores: channel 0 no change, channel 1 change.
    pub logits: V,
    /// Batch statistics gathered in training mode, by running-stat index.
    pub batch_stats: Vec<(usize, BatchStats)>,
}

/// A built change-detection network: architecture description, parameters
/// and batch-norm running statistics.
#[derive(Debug)]
pub struct Network {
    kind: ArchitectureKind,
    in_channels: usize,
    blocks: Vec<Block>,
    dropout: f32,
    params: ParamStore,
    running: Vec<(String, RunningStats)>,
    encoder: Vec<Vec<ConvBn>>,
    ups: Vec<Up>,
    decoder: Vec<Vec<ConvBn>>,
    head: Conv,
    forward_calls: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            kind: self.kind,
            in_channels: self.in_channels,
            blocks: self.blocks.clone(),
            dropout: self.dropout,
            params: self.params.clone(),
            running: self.running.clone(),
            encoder: self.encoder.clone(),
            ups: self.ups.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
            forward_calls: AtomicU64::new(0),
        }
    }
}

impl Network {
    /// Builds `kind` with the default block table and dropout rate.
    pub fn build(kind: ArchitectureKind, in_channels_per_image: usize, rng: &mut RngState) -> Result<Self> {
        Self::with_blocks(kind, in_channels_per_image, &DEFAULT_BLOCKS, DEFAULT_DROPOUT, rng)
    }

    pub fn with_blocks(
        kind: ArchitectureKind,
        in_channels_per_image: usize,
        blocks: &[Block],
        dropout: f32,
        rng: &mut RngState,
    ) -> Result<Self> {
        if in_channels_per_image < 1 {
            return Err(Error::Config("in_channels_per_image must be at least 1".into()));
        }
        if blocks.len() != STAGES {
            return Err(Error::Config(format!(
                "block table needs exactly {STAGES} stages, got {}",
                blocks.len()
            )));
        }
        if blocks.iter().any(|b| b.convs == 0 || b.width == 0) {
            return Err(Error::Config(format!("empty block in {blocks:?}")));
        }
        check_dropout_rate(dropout)?;

        let mut params = ParamStore::new();
        let mut running = Vec::new();
        let stream_in = match kind {
            ArchitectureKind::FcEf => 2 * in_channels_per_image,
            _ => in_channels_per_image,
        };

        // One encoder; Siamese kinds run it on each image with the same ids.
        let mut encoder = Vec::with_capacity(STAGES);
        let mut cin = stream_in;
        for (k, b) in blocks.iter().enumerate() {
            let stage = (0..b.convs)
                .map(|j| {
                    let from = if j == 0 { cin } else { b.width };
                    ConvBn::new(
                        &mut params,
                        &mut running,
                        &format!("enc{}.conv{}", k + 1, j + 1),
                        from,
                        b.width,
                        rng,
                    )
                })
                .collect();
            encoder.push(stage);
            cin = b.width;
        }

        let factor = kind.skip_factor();
        let mut ups = Vec::with_capacity(STAGES);
        let mut decoder = Vec::with_capacity(STAGES);
        let mut incoming = factor * blocks[STAGES - 1].width;
        for k in (0..STAGES).rev() {
            let width = blocks[k].width;
            ups.push(Up::new(&mut params, &format!("up{}", k + 1), incoming, width, rng));
            let mut from = width + factor * width;
            // The finest stage ends in the classifier instead of a ConvBn.
            let (n, last_out) = if k == 0 {
                (blocks[0].convs - 1, width)
            } else {
                (blocks[k].convs, blocks[k - 1].width)
            };
            let stage = (0..n)
                .map(|j| {
                    let to = if j + 1 == n { last_out } else { width };
                    let layer = ConvBn::new(
                        &mut params,
                        &mut running,
                        &format!("dec{}.conv{}", k + 1, j + 1),
                        from,
                        to,
                        rng,
                    );
                    from = to;
                    layer
                })
                .collect();
            decoder.push(stage);
            incoming = from;
        }
        ups.reverse();
        decoder.reverse();
        let head = Conv::new(&mut params, "head", incoming, 2, HEAD_GAIN, rng);

        Ok(Network {
            kind,
            in_channels: in_channels_per_image,
            blocks: blocks.to_vec(),
            dropout,
            params,
            running,
            encoder,
            ups,
            decoder,
            head,
            forward_calls: AtomicU64::new(0),
        })
    }

    pub fn kind(&self) -> ArchitectureKind {
        self.kind
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dropout(&self) -> f32 {
        self.dropout
    }

    pub fn set_dropout(&mut self, p: f32) -> Result<()> {
        check_dropout_rate(p)?;
        self.dropout = p;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Named batch-norm running statistics.
    pub fn running_stats(&self) -> &[(String, RunningStats)] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [(String, RunningStats)] {
        &mut self.running
    }

    /// Input channels of the first encoder convolution.
    pub fn first_conv_in_channels(&self) -> usize {
        self.encoder[0][0].conv.cin
    }

    /// Input channels of every convolution in decoder stage `stage`
    /// (0 = finest), the classifier included for stage 0.
    pub fn decoder_conv_inputs(&self, stage: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.decoder[stage].iter().map(|l| l.conv.cin).collect();
        if stage == 0 {
            v.push(self.head.cin);
        }
        v
    }

    /// Trainable scalars, counting shared tensors once.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Trainable scalars in the encoder alone.
    pub fn encoder_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, p)| p.name.starts_with("enc"))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    /// Number of forward passes run since the network was built or cloned.
    pub fn forward_calls(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Upper bound, in input pixels, on how far from an output pixel an
    /// input can influence it.
    pub fn receptive_radius(&self) -> usize {
        let mut r = 0;
        for (k, b) in self.blocks.iter().enumerate() {
            let scale = 1 << k;
            // encoder convs, pooling, upsampling, decoder convs
            r += b.convs * scale + scale + 2 * scale + b.convs * scale;
        }
        r
    }

    /// Applies batch statistics collected by a training-mode forward pass.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (i, s) in stats {
            self.running[*i].1.update(s);
        }
    }

    /// Replaces every running statistic with the plain average of batch
    /// statistics over `batches`, measured in training mode with dropout
    /// switched off. Parameters are untouched.
    pub fn recalibrate_running_stats<'a, I>(&mut self, batches: I) -> Result<usize>
    where
        I: IntoIterator<Item = (&'a Tensor, &'a Tensor)>,
    {
        let p = self.dropout;
        self.dropout = 0.0;
        let mut sums: Vec<(Vec<f64>, Vec<f64>, usize)> = self
            .running
            .iter()
            .map(|(_, r)| (vec![0.0; r.channels()], vec![0.0; r.channels()], 0))
            .collect();
        let mut rng = RngState::new(0);
        let mut seen = 0;
        let result = batches.into_iter().try_for_each(|(a, b)| {
            let trace = self.forward(&mut Eval, a, b, Mode::Train, &mut rng)?;
            for (i, s) in &trace.batch_stats {
                let (mean, var, n) = &mut sums[*i];
                mean.iter_mut().zip(&s.mean).for_each(|(acc, &v)| *acc += v as f64);
                var.iter_mut()
                    .zip(&s.unbiased_var)
                    .for_each(|(acc, &v)| *acc += v as f64);
                *n += 1;
            }
            seen += 1;
            Ok(())
        });
        self.dropout = p;
        result?;
        for ((_, r), (mean, var, n)) in self.running.iter_mut().zip(sums) {
            if n > 0 {
                r.mean = mean.iter().map(|v| (v / n as f64) as f32).collect();
                r.var = var.iter().map(|v| (v / n as f64) as f32).collect();
            }
        }
        Ok(seen)
    }

    fn check_inputs(&self, a: &Tensor, b: &Tensor) -> Result<()> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa != sb {
            return Err(Error::Shape(format!("image shapes differ: {sa} vs {sb}")));
        }
        if sa.c != self.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} channels per image, got {}",
                self.in_channels, sa.c
            )));
        }
        if sa.h % SIZE_MULTIPLE != 0 || sa.w % SIZE_MULTIPLE != 0 || sa.h == 0 || sa.w == 0 {
            return Err(Error::Shape(format!(
                "height and width must be positive multiples of {SIZE_MULTIPLE}, got {}x{}",
                sa.h, sa.w
            )));
        }
        Ok(())
    }

    fn encode<G: Graph>(
        &self,
        g: &mut G,
        x: G::Value,
        mode: Mode,
        rng: &mut RngState,
        stats: &mut Vec<(usize, BatchStats)>,
    ) -> Result<(Vec<G::Value>, G::Value)> {
        let train = mode == Mode::Train;
        let mut skips = Vec::with_capacity(STAGES);
        let mut x = x;
        for (k, stage) in self.encoder.iter().enumerate() {
            if k > 0 {
                x = g.max_pool2(&x)?;
            }
            for layer in stage {
                x = layer.apply(g, &self.params, &self.running, &x, train, stats)?;
            }
            if train {
                x = g.dropout(&x, self.dropout, rng)?;
            }
            skips.push(x.clone());
        }
        let bottleneck = g.max_pool2(&x)?;
        Ok((skips, bottleneck))
    }

    /// Runs the network on values already placed on `g`.
    pub fn forward_graph<G: Graph>(
        &self,
        g: &mut G,
        img1: G::Value,
        img2: G::Value,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<ForwardTrace<G::Value>> {
        self.check_inputs(g.value(&img1), g.value(&img2))?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let train = mode == Mode::Train;
        let mut stats = Vec::new();

        let (skips, bottleneck) = match self.kind {
            ArchitectureKind::FcEf => {
                let x = g.concat(&img1, &img2)?;
                self.encode(g, x, mode, rng, &mut stats)?
            }
            ArchitectureKind::FcSiamConc | ArchitectureKind::FcSiamDiff => {
                let (s1, b1) = self.encode(g, img1, mode, rng, &mut stats)?;
                let (s2, b2) = self.encode(g, img2, mode, rng, &mut stats)?;
                let diff = self.kind == ArchitectureKind::FcSiamDiff;
                let mut fuse = |a: &G::Value, b: &G::Value| if diff { g.abs_diff(a, b) } else { g.concat(a, b) };
                let skips = s1
                    .iter()
                    .zip(&s2)
                    .map(|(a, b)| fuse(a, b))
                    .collect::<Result<Vec<_>>>()?;
                (skips, fuse(&b1, &b2)?)
            }
        };

        let mut x = bottleneck.clone();
        for k in (0..STAGES).rev() {
            x = self.ups[k].apply(g, &self.params, &x)?;
            x = g.concat(&x, &skips[k])?;
            for layer in &self.decoder[k] {
                x = layer.apply(g, &self.params, &self.running, &x, train, &mut stats)?;
            }
            if train && !self.decoder[k].is_empty() {
                x = g.dropout(&x, self.dropout, rng)?;
            }
        }
        let logits = self.head.apply(g, &self.params, &x)?;
        Ok(ForwardTrace {
            skips,
            bottleneck,
            logits,
            batch_stats: stats,
        })
    }

    /// Convenience forward on tensors.
    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        img1: &Tensor,
        img2: &Tensor,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<ForwardTrace<G::Value>> {
        let a = g.input(img1.clone());
        let b = g.input(img2.clone());
        self.forward_graph(g, a, b, mode, rng)
    }

    /// Eval-mode logits without recording a tape.
    pub fn predict_logits(&self, img1: &Tensor, img2: &Tensor) -> Result<Tensor> {
        let mut g = Eval;
        // Eval mode draws no random numbers.
        let mut rng = RngState::new(0);
        let trace = self.forward(&mut g, img1, img2, Mode::Eval, &mut rng)?;
        drop(trace.skips);
        drop(trace.bottleneck);
        Ok(std::sync::Arc::try_unwrap(trace.logits).unwrap_or_else(|a| (*a).clone()))
    }
}
