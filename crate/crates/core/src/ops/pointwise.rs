use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient passes where the forward output was positive.
pub fn relu_backward(dy: &Tensor, y: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &o)| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
    dx
}

pub fn check_dropout_rate(p: f32) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 − p)`.
pub fn dropout_mask(len: usize, p: f32, rng: &mut RngState) -> Result<Vec<f32>> {
    check_dropout_rate(p)?;
    let keep = 1.0 / (1.0 - p);
    Ok((0..len).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect())
}

pub fn apply_mask(x: &Tensor, mask: &[f32]) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    y
}

/// Channel-wise concatenation; `a` occupies the leading channels.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::Shape(format!("cannot concatenate {sa} and {sb}")));
    }
    let s = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(s.len());
    for n in 0..sa.n {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::from_vec(s, data)
}

/// Splits a concatenated gradient back into its two parts.
pub fn split_channels(dy: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let s = dy.shape();
    let cb = s.c - ca;
    let (la, lb) = (ca * s.plane(), cb * s.plane());
    let mut a = Vec::with_capacity(s.n * la);
    let mut b = Vec::with_capacity(s.n * lb);
    for n in 0..s.n {
        let item = dy.item(n);
        a.extend_from_slice(&item[..la]);
        b.extend_from_slice(&item[la..]);
    }
    (
        Tensor::from_vec(Shape::new(s.n, ca, s.h, s.w), a).expect("split shape"),
        Tensor::from_vec(Shape::new(s.n, cb, s.h, s.w), b).expect("split shape"),
    )
}

/// Elementwise `|a − b|`.
pub fn abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("abs_diff of {} and {}", a.shape(), b.shape())));
    }
    let mut y = a.clone();
    y.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(v, w)| *v = (*v - w).abs());
    Ok(y)
}

/// Gradient with respect to `a`; the gradient for `b` is its negation.
/// The subgradient at `a == b` is zero.
pub fn abs_diff_backward(dy: &Tensor, a: &Tensor, b: &Tensor) -> Tensor {
    let mut da = dy.clone();
    for ((g, &x), &y) in da.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *g = if x > y {
            *g
        } else if x < y {
            -*g
        } else {
            0.0
        };
    }
    da
}
