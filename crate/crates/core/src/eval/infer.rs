//! Dense inference over whole images of any size.

use std::path::Path;

use image::GrayImage;

use crate::arch::{Network, SIZE_MULTIPLE};
use crate::data::{RasterImage, SamplePair};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Binary prediction per pixel (1 = change) and the change probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    height: usize,
    width: usize,
    pred: Vec<u8>,
    prob: Option<Vec<f32>>,
}

impl ChangeMap {
    /// Thresholds `(1, 2, H, W)` logits; a tie goes to "no change".
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let s = logits.shape();
        if s.n != 1 || s.c != 2 {
            return Err(Error::Shape(format!("expected (1, 2, H, W) logits, got {s}")));
        }
        let (l0, l1) = logits.data().split_at(s.plane());
        let pred = l0.iter().zip(l1).map(|(a, b)| u8::from(b > a)).collect();
        let prob = l0.iter().zip(l1).map(|(&a, &b)| 1.0 / (1.0 + (a - b).exp())).collect();
        Ok(ChangeMap {
            height: s.h,
            width: s.w,
            pred,
            prob: Some(prob),
        })
    }

    pub fn from_pred(height: usize, width: usize, pred: Vec<u8>) -> Result<Self> {
        if pred.len() != height * width || pred.iter().any(|&v| v > 1) {
            return Err(Error::Shape(format!(
                "expected {height}x{width} binary values, got {} values",
                pred.len()
            )));
        }
        Ok(ChangeMap {
            height,
            width,
            pred,
            prob: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pred(&self) -> &[u8] {
        &self.pred
    }

    pub fn prob(&self) -> Option<&[f32]> {
        self.prob.as_deref()
    }

    pub fn changed_pixels(&self) -> u64 {
        self.pred.iter().map(|&v| v as u64).sum()
    }

    /// Black for no change, white for change.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([self.pred[y as usize * self.width + x as usize] * 255])
        });
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Change probability scaled to 0..=255.
    pub fn save_probability_png(&self, path: &Path) -> Result<()> {
        let prob = self
            .prob
            .as_ref()
            .ok_or_else(|| Error::Data("change map carries no probabilities".into()))?;
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([(prob[y as usize * self.width + x as usize] * 255.0).round() as u8])
        });
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Tiled inference: the padded image is cut into `size × size` cores, each
/// run with up to `margin` pixels of real context on every side and only
/// the core kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub size: usize,
    pub margin: usize,
}

impl TileConfig {
    pub fn new(size: usize, margin: usize) -> Result<Self> {
        if size == 0 || !size.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!(
                "tile size {size} must be a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        if !margin.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!(
                "tile margin {margin} must be a multiple of {SIZE_MULTIPLE}"
            )));
        }
        Ok(TileConfig { size, margin })
    }

    /// Tiles of `size` with enough margin that the result matches untiled
    /// inference.
    pub fn exact(net: &Network, size: usize) -> Result<Self> {
        Self::new(size, exact_margin(net))
    }
}

/// The receptive radius of `net` rounded up to the pooling grid.
pub fn exact_margin(net: &Network) -> usize {
    net.receptive_radius().div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE
}

pub fn padded_len(n: usize) -> usize {
    n.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE
}

/// Mirror index without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// `(1, C, H', W')` tensor with the bottom and right edges reflect-padded
/// up to multiples of 16.
pub fn reflect_pad(img: &RasterImage) -> Tensor {
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (padded_len(h), padded_len(w));
    let shape = Shape::new(1, img.bands(), ph, pw);
    let mut data = Vec::with_capacity(shape.len());
    for b in 0..img.bands() {
        let band = img.band(b);
        for y in 0..ph {
            let row = &band[reflect(y, h) * w..][..w];
            data.extend((0..pw).map(|x| row[reflect(x, w)]));
        }
    }
    Tensor::from_vec(shape, data).expect("padded shape")
}

fn window(t: &Tensor, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(Shape::new(1, s.c, h, w), |i| {
        let (c, rest) = (i / (h * w), i % (h * w));
        t.data()[(c * s.h + y0 + rest / w) * s.w + x0 + rest % w]
    })
}

/// Eval-mode logits for a padded image pair, optionally tiled.
fn padded_logits(net: &Network, a: &Tensor, b: &Tensor, tile: Option<TileConfig>) -> Result<Tensor> {
    let Some(tile) = tile else {
        return net.predict_logits(a, b);
    };
    let s = a.shape();
    let mut out = Tensor::zeros(Shape::new(1, 2, s.h, s.w));
    for cy in (0..s.h).step_by(tile.size) {
        for cx in (0..s.w).step_by(tile.size) {
            let (ch, cw) = (tile.size.min(s.h - cy), tile.size.min(s.w - cx));
            let (wy, wx) = (cy.saturating_sub(tile.margin), cx.saturating_sub(tile.margin));
            let wh = (cy + ch + tile.margin).min(s.h) - wy;
            let ww = (cx + cw + tile.margin).min(s.w) - wx;
            let logits = net.predict_logits(&window(a, wy, wx, wh, ww), &window(b, wy, wx, wh, ww))?;
            for c in 0..2 {
                for y in 0..ch {
                    let src = &logits.data()[(c * wh + cy - wy + y) * ww + cx - wx..][..cw];
                    let dst = (c * s.h + cy + y) * s.w + cx;
                    out.data_mut()[dst..dst + cw].copy_from_slice(src);
                }
            }
        }
    }
    Ok(out)
}

fn crop_logits(t: &Tensor, h: usize, w: usize) -> Tensor {
    if t.shape().h == h && t.shape().w == w {
        return t.clone();
    }
    window(t, 0, 0, h, w)
}

/// Runs `net` once over the whole pair (or once per tile) and returns
/// logits with the input's spatial size.
pub fn infer_logits(net: &Network, img1: &RasterImage, img2: &RasterImage, tile: Option<TileConfig>) -> Result<Tensor> {
    if img1.bands() != net.in_channels() || img2.bands() != net.in_channels() {
        return Err(Error::Shape(format!(
            "network expects {} bands per image, got {} and {}",
            net.in_channels(),
            img1.bands(),
            img2.bands()
        )));
    }
    if (img1.height(), img1.width()) != (img2.height(), img2.width()) {
        return Err(Error::Shape(format!(
            "image sizes differ: {}x{} vs {}x{}",
            img1.width(),
            img1.height(),
            img2.width(),
            img2.height()
        )));
    }
    let logits = padded_logits(net, &reflect_pad(img1), &reflect_pad(img2), tile)?;
    Ok(crop_logits(&logits, img1.height(), img1.width()))
}

pub fn infer_full(
    net: &Network,
    img1: &RasterImage,
    img2: &RasterImage,
    tile: Option<TileConfig>,
) -> Result<ChangeMap> {
    ChangeMap::from_logits(&infer_logits(net, img1, img2, tile)?)
}

pub fn infer_pair(net: &Network, pair: &SamplePair, tile: Option<TileConfig>) -> Result<ChangeMap> {
    infer_full(net, &pair.img1, &pair.img2, tile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{ArchitectureKind, Block};
    use crate::rng::RngState;

    fn small_net(kind: ArchitectureKind, bands: usize) -> Network {
        let blocks = [Block { convs: 1, width: 4 }; 4];
        Network::with_blocks(kind, bands, &blocks, 0.2, &mut RngState::new(3)).unwrap()
    }

    fn raster(bands: usize, h: usize, w: usize, seed: u64) -> RasterImage {
        let mut rng = RngState::new(seed);
        RasterImage::new(
            bands,
            h,
            w,
            (0..bands * h * w).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (0..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, [0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn padding_mirrors_bottom_right() {
        let img = RasterImage::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = reflect_pad(&img);
        assert_eq!(t.shape(), Shape::new(1, 1, 16, 16));
        assert_eq!(&t.data()[..5], &[1.0, 2.0, 3.0, 2.0, 1.0]);
        // row 2 mirrors row 0
        assert_eq!(&t.data()[32..35], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn ties_go_to_no_change() {
        let logits = Tensor::zeros(Shape::new(1, 2, 3, 4));
        let map = ChangeMap::from_logits(&logits).unwrap();
        assert!(map.pred().iter().all(|&v| v == 0));
        assert!(map.prob().unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn output_matches_input_size() {
        let net = small_net(ArchitectureKind::FcSiamDiff, 2);
        let map = infer_full(&net, &raster(2, 37, 21, 1), &raster(2, 37, 21, 2), None).unwrap();
        assert_eq!((map.height(), map.width()), (37, 21));
        assert_eq!(net.forward_calls(), 1);
    }

    #[test]
    fn band_mismatch_is_shape_error() {
        let net = small_net(ArchitectureKind::FcEf, 3);
        let err = infer_full(&net, &raster(2, 16, 16, 1), &raster(2, 16, 16, 2), None).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn tile_must_align() {
        assert!(matches!(TileConfig::new(100, 32), Err(Error::Config(_))));
        assert!(matches!(TileConfig::new(96, 20), Err(Error::Config(_))));
        assert!(TileConfig::new(96, 32).is_ok());
    }

    #[test]
    fn padding_divisible_input_is_a_no_op() {
        let net = small_net(ArchitectureKind::FcEf, 1);
        let (a, b) = (raster(1, 32, 48, 5), raster(1, 32, 48, 6));
        let direct = net.predict_logits(&a.to_tensor(), &b.to_tensor()).unwrap();
        let padded = infer_logits(&net, &a, &b, None).unwrap();
        assert_eq!(direct.data(), padded.data());
    }

    #[test]
    fn exact_tiling_matches_untiled() {
        let net = small_net(ArchitectureKind::FcSiamConc, 1);
        let (a, b) = (raster(1, 150, 90, 7), raster(1, 150, 90, 8));
        let whole = infer_logits(&net, &a, &b, None).unwrap();
        let tiled = infer_logits(&net, &a, &b, Some(TileConfig::exact(&net, 32).unwrap())).unwrap();
        assert!(whole.max_abs_diff(&tiled) < 1e-5);
    }
}
