use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output cell, the flat input offset of the selected element. Ties go to
/// the first element in row-major scan order.
pub fn max_pool2(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::Shape(format!("max_pool2 needs even height and width, got {s}")));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(os.len());
    let mut argmax = Vec::with_capacity(os.len());
    let src = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..os.h {
            let r0 = base + 2 * oy * s.w;
            let r1 = r0 + s.w;
            for ox in 0..os.w {
                let cands = [r0 + 2 * ox, r0 + 2 * ox + 1, r1 + 2 * ox, r1 + 2 * ox + 1];
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if src[c] > src[best] {
                        best = c;
                    }
                }
                out.push(src[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, argmax))
}

pub fn max_pool2_backward(dy: &Tensor, argmax: &[u32], input: Shape) -> Tensor {
    let mut dx = Tensor::zeros(input);
    let d = dx.data_mut();
    for (&g, &i) in dy.data().iter().zip(argmax) {
        d[i as usize] += g;
    }
    dx
}
