use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Per-pixel two-class softmax of `(N, 2, H, W)` logits.
pub fn softmax2(logits: &Tensor) -> Result<Tensor> {
    let s = logits.shape();
    if s.c != 2 {
        return Err(Error::Shape(format!("expected 2 class channels, got {s}")));
    }
    let plane = s.plane();
    let mut probs = Tensor::zeros(s);
    for n in 0..s.n {
        let l = logits.item(n);
        let p = &mut probs.data_mut()[n * 2 * plane..(n + 1) * 2 * plane];
        for i in 0..plane {
            let (a, b) = (l[i], l[plane + i]);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let z = ea + eb;
            p[i] = ea / z;
            p[plane + i] = eb / z;
        }
    }
    Ok(probs)
}

fn check_loss_inputs(logits: Shape, labels: &[u8], weights: [f32; 2]) -> Result<()> {
    if logits.c != 2 {
        return Err(Error::Shape(format!("expected 2 class channels, got {logits}")));
    }
    let pixels = logits.n * logits.plane();
    if labels.len() != pixels {
        return Err(Error::Shape(format!("{} labels for {pixels} pixels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label value {bad} is not 0 or 1")));
    }
    if !weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
        return Err(Error::Config(format!(
            "class weights must be positive, got {weights:?}"
        )));
    }
    Ok(())
}

/// Mean over pixels of `w[y] · −log softmax(logits)[y]`. `labels` is one
/// entry per pixel in `(N, H, W)` order. Returns the loss and the class
/// probabilities needed for the gradient.
pub fn weighted_logloss(logits: &Tensor, labels: &[u8], weights: [f32; 2]) -> Result<(f32, Tensor)> {
    let s = logits.shape();
    check_loss_inputs(s, labels, weights)?;
    logits.ensure_finite("weighted_logloss")?;
    let plane = s.plane();
    let mut total = 0.0f64;
    for n in 0..s.n {
        let l = logits.item(n);
        for i in 0..plane {
            let y = labels[n * plane + i] as usize;
            let (a, b) = (l[i] as f64, l[plane + i] as f64);
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            let target = if y == 0 { a } else { b };
            total += weights[y] as f64 * (lse - target);
        }
    }
    let loss = (total / (s.n * plane) as f64) as f32;
    Ok((loss, softmax2(logits)?))
}

/// Gradient of [`weighted_logloss`] with respect to the logits, scaled by
/// the upstream gradient `dloss`.
pub fn weighted_logloss_backward(probs: &Tensor, labels: &[u8], weights: [f32; 2], dloss: f32) -> Tensor {
    let s = probs.shape();
    let plane = s.plane();
    let norm = dloss / (s.n * plane) as f32;
    let mut d = probs.clone();
    for n in 0..s.n {
        let g = &mut d.data_mut()[n * 2 * plane..(n + 1) * 2 * plane];
        for i in 0..plane {
            let y = labels[n * plane + i] as usize;
            let scale = weights[y] * norm;
            g[i] = scale * (g[i] - if y == 0 { 1.0 } else { 0.0 });
            g[plane + i] = scale * (g[plane + i] - if y == 1 { 1.0 } else { 0.0 });
        }
    }
    d
}
