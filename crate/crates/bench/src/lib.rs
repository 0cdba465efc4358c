//! Fixtures shared by the benchmarks.

use cdforge_core::data::RasterImage;
use cdforge_core::{RngState, Shape, Tensor};

pub fn uniform_tensor(shape: Shape, seed: u64) -> Tensor {
    let mut rng = RngState::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

/// Two noise rasters of the same size.
pub fn noise_pair(bands: usize, height: usize, width: usize, seed: u64) -> (RasterImage, RasterImage) {
    let mut rng = RngState::new(seed);
    let mut image = || {
        let values = (0..bands * height * width).map(|_| rng.normal()).collect();
        RasterImage::new(bands, height, width, values).expect("consistent dimensions")
    };
    (image(), image())
}
