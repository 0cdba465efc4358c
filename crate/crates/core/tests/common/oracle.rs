//! Direct nested-loop references for the convolution and pooling kernels.

use cdforge_core::{Shape, Tensor};

/// 3×3, stride 1, zero padding 1. `w` is `(Cout, Cin, 3, 3)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let s = x.shape();
    let cout = w.shape().n;
    let mut y = Tensor::zeros(Shape::new(s.n, cout, s.h, s.w));
    for n in 0..s.n {
        for co in 0..cout {
            for oy in 0..s.h {
                for ox in 0..s.w {
                    let mut acc = b.data()[co] as f64;
                    for ci in 0..s.c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                acc += x.at(n, ci, iy as usize, ix as usize) as f64 * w.at(co, ci, ky, kx) as f64;
                            }
                        }
                    }
                    let i = y.index(n, co, oy, ox);
                    y.data_mut()[i] = acc as f32;
                }
            }
        }
    }
    y
}

/// Kernel 3, stride 2, padding 1, one extra output row/column. `w` is
/// `(Cin, Cout, 3, 3)`; every input pixel scatters its weighted kernel.
pub fn transpose_conv2(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let s = x.shape();
    let cout = w.shape().c;
    let (oh, ow) = (2 * s.h, 2 * s.w);
    let mut acc = vec![0.0f64; s.n * cout * oh * ow];
    for n in 0..s.n {
        for ci in 0..s.c {
            for iy in 0..s.h {
                for ix in 0..s.w {
                    let v = x.at(n, ci, iy, ix) as f64;
                    for co in 0..cout {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let oy = (2 * iy + ky) as isize - 1;
                                let ox = (2 * ix + kx) as isize - 1;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                acc[((n * cout + co) * oh + oy as usize) * ow + ox as usize] +=
                                    v * w.at(ci, co, ky, kx) as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    let shape = Shape::new(s.n, cout, oh, ow);
    Tensor::from_fn(shape, |i| (acc[i] + b.data()[(i / (oh * ow)) % cout] as f64) as f32)
}

/// Brute-force scan of every 2×2 window.
pub fn max_pool2(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut y = Tensor::zeros(Shape::new(s.n, s.c, s.h / 2, s.w / 2));
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..s.h / 2 {
                for ox in 0..s.w / 2 {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.at(n, c, 2 * oy + dy, 2 * ox + dx));
                        }
                    }
                    let i = y.index(n, c, oy, ox);
                    y.data_mut()[i] = m;
                }
            }
        }
    }
    y
}
