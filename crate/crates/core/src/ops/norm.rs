//! Per-channel batch normalization.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Running mean and (unbiased) variance tracked across training batches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving update with [`BN_MOMENTUM`].
    pub fn update(&mut self, batch: &BatchStats) {
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * batch.mean[c];
            self.var[c] = (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * batch.unbiased_var[c];
        }
    }
}

/// Statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub unbiased_var: Vec<f32>,
}

/// Values saved by the training-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnSaved {
    pub xhat: Tensor,
    pub inv_std: Vec<f32>,
}

fn check_affine(x: Shape, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.len() != x.c || beta.len() != x.c {
        return Err(Error::Shape(format!(
            "batch norm over {} channels got {} scales and {} shifts",
            x.c,
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

fn channel_slices(s: Shape, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..s.n).map(move |n| {
        let start = (n * s.c + c) * s.plane();
        start..start + s.plane()
    })
}

/// Training mode: normalize with the batch's own statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, BnSaved, BatchStats)> {
    let s = x.shape();
    check_affine(s, gamma, beta)?;
    let count = s.n * s.plane();
    if count < 2 {
        return Err(Error::Shape(format!(
            "training-mode batch norm needs more than one value per channel, got {s}"
        )));
    }
    x.ensure_finite("batch_norm")?;
    let mut y = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut inv_std = vec![0.0; s.c];
    let mut stats = BatchStats {
        mean: vec![0.0; s.c],
        unbiased_var: vec![0.0; s.c],
    };
    let src = x.data();
    for c in 0..s.c {
        let sum: f64 = channel_slices(s, c)
            .flat_map(|r| src[r].iter())
            .map(|&v| v as f64)
            .sum();
        let mean = sum / count as f64;
        let sq: f64 = channel_slices(s, c)
            .flat_map(|r| src[r].iter())
            .map(|&v| (v as f64 - mean).powi(2))
            .sum();
        let var = sq / count as f64;
        let istd = 1.0 / (var + BN_EPS as f64).sqrt();
        inv_std[c] = istd as f32;
        stats.mean[c] = mean as f32;
        stats.unbiased_var[c] = (sq / (count - 1) as f64) as f32;
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for r in channel_slices(s, c) {
            for i in r {
                let h = ((src[i] as f64 - mean) * istd) as f32;
                xhat.data_mut()[i] = h;
                y.data_mut()[i] = g * h + b;
            }
        }
    }
    Ok((y, BnSaved { xhat, inv_std }, stats))
}

/// Returns `(dx, dgamma, dbeta)` for the training-mode forward.
pub fn batch_norm_train_backward(dy: &Tensor, saved: &BnSaved, gamma: &Tensor) -> (Tensor, Tensor, Tensor) {
    let s = dy.shape();
    let count = (s.n * s.plane()) as f64;
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];
    let (g, h) = (dy.data(), saved.xhat.data());
    for c in 0..s.c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_h = 0.0f64;
        for r in channel_slices(s, c) {
            for i in r {
                sum_dy += g[i] as f64;
                sum_dy_h += (g[i] * h[i]) as f64;
            }
        }
        dgamma[c] = sum_dy_h as f32;
        dbeta[c] = sum_dy as f32;
        let scale = gamma.data()[c] as f64 * saved.inv_std[c] as f64;
        let (mean_dy, mean_dy_h) = (sum_dy / count, sum_dy_h / count);
        for r in channel_slices(s, c) {
            for i in r {
                dx.data_mut()[i] = (scale * (g[i] as f64 - mean_dy - h[i] as f64 * mean_dy_h)) as f32;
            }
        }
    }
    let p = Shape::new(1, s.c, 1, 1);
    (
        dx,
        Tensor::from_vec(p, dgamma).expect("gamma shape"),
        Tensor::from_vec(p, dbeta).expect("beta shape"),
    )
}

/// Per-channel `(scale, shift)` that eval mode applies as `scale·x + shift`.
pub fn eval_affine(gamma: &Tensor, beta: &Tensor, running: &RunningStats) -> (Vec<f32>, Vec<f32>) {
    (0..running.channels())
        .map(|c| {
            let scale = gamma.data()[c] / (running.var[c] + BN_EPS).sqrt();
            (scale, beta.data()[c] - running.mean[c] * scale)
        })
        .unzip()
}

/// Eval mode: normalize with running statistics.
pub fn batch_norm_eval(x: &Tensor, gamma: &Tensor, beta: &Tensor, running: &RunningStats) -> Result<Tensor> {
    let s = x.shape();
    check_affine(s, gamma, beta)?;
    if running.channels() != s.c {
        return Err(Error::Shape(format!(
            "running statistics cover {} channels, input has {}",
            running.channels(),
            s.c
        )));
    }
    x.ensure_finite("batch_norm")?;
    let (scale, shift) = eval_affine(gamma, beta, running);
    let mut y = x.clone();
    for (i, plane) in y.data_mut().chunks_mut(s.plane()).enumerate() {
        let c = i % s.c;
        plane.iter_mut().for_each(|v| *v = scale[c] * *v + shift[c]);
    }
    Ok(y)
}
