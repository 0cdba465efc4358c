//! Window gathering for convolutions over one batch item.

/// Geometry of a square-kernel window sweep over a `(channels, height, width)`
/// stack. The window for output cell `(oy, ox)` starts at
/// `(oy·stride − pad, ox·stride − pad)` in the source; reads outside the
/// source are zero.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Windows {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_width: usize,
}

impl Windows {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Output columns `ox` whose tap `kx` lands inside the source.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        let limit = self.width + self.pad;
        let hi = if limit > kx {
            ((limit - kx - 1) / self.stride + 1).min(self.out_width)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    #[inline]
    fn source_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        (iy < self.height).then_some(iy)
    }

    /// Fills `col` (`rows() × band·out_width`, row-major) with the windows of
    /// output rows `oy0..oy0 + band`.
    pub fn gather(&self, src: &[f32], oy0: usize, band: usize, col: &mut [f32]) {
        let cols = band * self.out_width;
        debug_assert_eq!(col.len(), self.rows() * cols);
        let plane = self.height * self.width;
        let k = self.kernel;
        for c in 0..self.channels {
            let src_c = &src[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let dst_r = &mut col[r * cols..(r + 1) * cols];
                    let (lo, hi) = self.valid_cols(kx);
                    for b in 0..band {
                        let dst = &mut dst_r[b * self.out_width..(b + 1) * self.out_width];
                        let Some(iy) = self.source_row(oy0 + b, ky) else {
                            dst.fill(0.0);
                            continue;
                        };
                        let row = &src_c[iy * self.width..(iy + 1) * self.width];
                        dst[..lo].fill(0.0);
                        dst[hi..].fill(0.0);
                        if hi > lo {
                            let x0 = lo * self.stride + kx - self.pad;
                            if self.stride == 1 {
                                dst[lo..hi].copy_from_slice(&row[x0..x0 + (hi - lo)]);
                            } else {
                                for (i, d) in dst[lo..hi].iter_mut().enumerate() {
                                    *d = row[x0 + i * self.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Windows::gather`]: adds every column entry back onto the
    /// source cell it was read from.
    pub fn scatter_add(&self, col: &[f32], oy0: usize, band: usize, dst: &mut [f32]) {
        let cols = band * self.out_width;
        debug_assert_eq!(col.len(), self.rows() * cols);
        let plane = self.height * self.width;
        let k = self.kernel;
        for c in 0..self.channels {
            let dst_c = &mut dst[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let src_r = &col[r * cols..(r + 1) * cols];
                    let (lo, hi) = self.valid_cols(kx);
                    if hi <= lo {
                        continue;
                    }
                    for b in 0..band {
                        let Some(iy) = self.source_row(oy0 + b, ky) else {
                            continue;
                        };
                        let src = &src_r[b * self.out_width + lo..b * self.out_width + hi];
                        let row = &mut dst_c[iy * self.width..(iy + 1) * self.width];
                        let x0 = lo * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            for (d, s) in row[x0..x0 + (hi - lo)].iter_mut().zip(src) {
                                *d += s;
                            }
                        } else {
                            for (i, s) in src.iter().enumerate() {
                                row[x0 + i * self.stride] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Splits `rows` output rows into bands whose column buffer stays near
/// `budget` floats.
pub(crate) fn bands(rows: usize, floats_per_row: usize, budget: usize) -> impl Iterator<Item = (usize, usize)> {
    let per_band = (budget / floats_per_row.max(1)).clamp(1, rows.max(1));
    (0..rows).step_by(per_band).map(move |y0| (y0, per_band.min(rows - y0)))
}
