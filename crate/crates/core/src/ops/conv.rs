//! Same-padded convolution and ×2 transposed convolution, lowered to GEMM
//! over row bands of the image.

use rayon::prelude::*;

use super::gemm::{gemm, Mat, MatMut};
use super::im2col::{bands, Windows};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Column-buffer budget per band, in floats.
const BAND_BUDGET: usize = 1 << 20;

/// Stride and padding of the upsampling transposed convolution.
pub const UP_STRIDE: usize = 2;
pub const UP_PAD: usize = 1;

fn check_bias(bias: &Tensor, channels: usize) -> Result<()> {
    if bias.len() != channels {
        return Err(Error::Shape(format!(
            "bias has {} values, expected {channels}",
            bias.len()
        )));
    }
    Ok(())
}

fn conv_windows(x: Shape, kernel: usize) -> Windows {
    Windows {
        channels: x.c,
        height: x.h,
        width: x.w,
        kernel,
        stride: 1,
        pad: kernel / 2,
        out_width: x.w,
    }
}

fn check_conv(x: Shape, weight: Shape, bias: &Tensor) -> Result<usize> {
    if weight.h != weight.w || weight.h.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "convolution kernel must be square and odd, got {weight}"
        )));
    }
    if x.c != weight.c {
        return Err(Error::Shape(format!(
            "input has {} channels but kernel expects {}",
            x.c, weight.c
        )));
    }
    if x.h == 0 || x.w == 0 {
        return Err(Error::Shape(format!("empty spatial extent {x}")));
    }
    check_bias(bias, weight.n)?;
    Ok(weight.h)
}

/// Stride-1 convolution with "same" zero padding (`kernel / 2`).
/// `weight` is `(Cout, Cin, k, k)`, `bias` holds `Cout` values.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let k = check_conv(xs, weight.shape(), bias)?;
    x.ensure_finite("conv2d")?;
    let cout = weight.shape().n;
    let win = conv_windows(xs, k);
    let plane = xs.plane();
    let mut out = Tensor::zeros(Shape::new(xs.n, cout, xs.h, xs.w));
    let wmat = Mat::row_major(weight.data(), cout, win.rows());
    out.data_mut()
        .par_chunks_mut(cout * plane)
        .enumerate()
        .for_each(|(n, out_n)| {
            let x_n = x.item(n);
            let mut col = Vec::new();
            for (y0, band) in bands(xs.h, win.rows() * xs.w, BAND_BUDGET) {
                let cols = band * xs.w;
                col.resize(win.rows() * cols, 0.0);
                win.gather(x_n, y0, band, &mut col);
                let dst = MatMut {
                    data: &mut out_n[y0 * xs.w..],
                    rows: cout,
                    cols,
                    row_stride: plane,
                    col_stride: 1,
                };
                gemm(wmat, Mat::row_major(&col, win.rows(), cols), 0.0, dst);
            }
            for (o, &b) in out_n.chunks_mut(plane).zip(bias.data()) {
                o.iter_mut().for_each(|v| *v += b);
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let xs = x.shape();
    let k = weight.shape().h;
    let cout = weight.shape().n;
    let win = conv_windows(xs, k);
    let plane = xs.plane();
    let krows = win.rows();
    let mut dx = Tensor::zeros(xs);
    let partials: Vec<(Vec<f32>, Vec<f32>)> = dx
        .data_mut()
        .par_chunks_mut(xs.item())
        .enumerate()
        .map(|(n, dx_n)| {
            let x_n = x.item(n);
            let dy_n = dy.item(n);
            let mut dw = vec![0.0f32; cout * krows];
            let mut col = Vec::new();
            let mut dcol = Vec::new();
            for (y0, band) in bands(xs.h, krows * xs.w, BAND_BUDGET) {
                let cols = band * xs.w;
                col.resize(krows * cols, 0.0);
                dcol.resize(krows * cols, 0.0);
                win.gather(x_n, y0, band, &mut col);
                let dy_band = Mat {
                    data: &dy_n[y0 * xs.w..],
                    rows: cout,
                    cols,
                    row_stride: plane,
                    col_stride: 1,
                };
                gemm(
                    dy_band,
                    Mat::transposed(&col, krows, cols),
                    1.0,
                    MatMut::row_major(&mut dw, cout, krows),
                );
                gemm(
                    Mat::transposed(weight.data(), cout, krows),
                    dy_band,
                    0.0,
                    MatMut::row_major(&mut dcol, krows, cols),
                );
                win.scatter_add(&dcol, y0, band, dx_n);
            }
            let db = dy_n.chunks(plane).map(|p| p.iter().sum::<f32>()).collect();
            (dw, db)
        })
        .collect();
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![0.0f32; cout];
    for (pw, pb) in partials {
        dw.data_mut().iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
    }
    let db = Tensor::from_vec(Shape::new(1, cout, 1, 1), db).expect("bias shape");
    (dx, dw, db)
}

fn up_windows(out: Shape, in_w: usize, kernel: usize) -> Windows {
    Windows {
        channels: out.c,
        height: out.h,
        width: out.w,
        kernel,
        stride: UP_STRIDE,
        pad: UP_PAD,
        out_width: in_w,
    }
}

fn check_up(x: Shape, weight: Shape, bias: &Tensor) -> Result<()> {
    if weight.h != 3 || weight.w != 3 {
        return Err(Error::Shape(format!(
            "transposed convolution expects a 3x3 kernel, got {weight}"
        )));
    }
    if x.c != weight.n {
        return Err(Error::Shape(format!(
            "input has {} channels but transposed kernel expects {}",
            x.c, weight.n
        )));
    }
    check_bias(bias, weight.c)
}

/// Transposed convolution with kernel 3, stride 2, padding 1 and output
/// adjustment 1, so the output is exactly twice the input size.
/// `weight` is `(Cin, Cout, 3, 3)`.
pub fn transpose_conv2(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    check_up(xs, weight.shape(), bias)?;
    x.ensure_finite("transpose_conv2")?;
    let cin = xs.c;
    let cout = weight.shape().c;
    let os = Shape::new(xs.n, cout, 2 * xs.h, 2 * xs.w);
    let win = up_windows(os, xs.w, 3);
    let krows = win.rows();
    let mut out = Tensor::zeros(os);
    out.data_mut()
        .par_chunks_mut(os.item())
        .enumerate()
        .for_each(|(n, out_n)| {
            let x_n = x.item(n);
            let mut col = Vec::new();
            for (y0, band) in bands(xs.h, krows * xs.w, BAND_BUDGET) {
                let cols = band * xs.w;
                col.resize(krows * cols, 0.0);
                let x_band = Mat {
                    data: &x_n[y0 * xs.w..],
                    rows: cin,
                    cols,
                    row_stride: xs.plane(),
                    col_stride: 1,
                };
                gemm(
                    Mat::transposed(weight.data(), cin, krows),
                    x_band,
                    0.0,
                    MatMut::row_major(&mut col, krows, cols),
                );
                win.scatter_add(&col, y0, band, out_n);
            }
            for (o, &b) in out_n.chunks_mut(os.plane()).zip(bias.data()) {
                o.iter_mut().for_each(|v| *v += b);
            }
        });
    Ok(out)
}

/// Gradients of [`transpose_conv2`] with respect to input, weight and bias.
pub fn transpose_conv2_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let xs = x.shape();
    let cin = xs.c;
    let os = dy.shape();
    let cout = os.c;
    let win = up_windows(os, xs.w, 3);
    let krows = win.rows();
    let mut dx = Tensor::zeros(xs);
    let partials: Vec<(Vec<f32>, Vec<f32>)> = dx
        .data_mut()
        .par_chunks_mut(xs.item())
        .enumerate()
        .map(|(n, dx_n)| {
            let x_n = x.item(n);
            let dy_n = dy.item(n);
            let mut dw = vec![0.0f32; cin * krows];
            let mut dcol = Vec::new();
            for (y0, band) in bands(xs.h, krows * xs.w, BAND_BUDGET) {
                let cols = band * xs.w;
                dcol.resize(krows * cols, 0.0);
                win.gather(dy_n, y0, band, &mut dcol);
                let dx_band = MatMut {
                    data: &mut dx_n[y0 * xs.w..],
                    rows: cin,
                    cols,
                    row_stride: xs.plane(),
                    col_stride: 1,
                };
                gemm(
                    Mat::row_major(weight.data(), cin, krows),
                    Mat::row_major(&dcol, krows, cols),
                    0.0,
                    dx_band,
                );
                let x_band = Mat {
                    data: &x_n[y0 * xs.w..],
                    rows: cin,
                    cols,
                    row_stride: xs.plane(),
                    col_stride: 1,
                };
                gemm(
                    x_band,
                    Mat::transposed(&dcol, krows, cols),
                    1.0,
                    MatMut::row_major(&mut dw, cin, krows),
                );
            }
            let db = dy_n.chunks(os.plane()).map(|p| p.iter().sum::<f32>()).collect();
            (dw, db)
        })
        .collect();
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![0.0f32; cout];
    for (pw, pb) in partials {
        dw.data_mut().iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
    }
    let db = Tensor::from_vec(Shape::new(1, cout, 1, 1), db).expect("bias shape");
    (dx, dw, db)
}
