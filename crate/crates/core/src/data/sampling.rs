//! Random training patches.

use super::augment::DihedralTransform;
use super::pair::SamplePair;
use super::raster::RasterImage;
use crate::arch::SIZE_MULTIPLE;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const DEFAULT_PATCH_SIZE: usize = 96;
/// Patches drawn per epoch for every patch-sized area of a training image.
pub const PATCHES_PER_AREA: usize = 4;

/// Aligned square crops of both images (band-major) and the label.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Index of the source pair in the slice given to [`sample_patches`].
    pub pair: usize,
    pub y: usize,
    pub x: usize,
    pub size: usize,
    pub bands: usize,
    pub img1: Vec<f32>,
    pub img2: Vec<f32>,
    pub label: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchCount {
    /// The same number of patches from every pair.
    PerPair(usize),
    /// `⌈area / patch area⌉ · PATCHES_PER_AREA` per pair.
    Auto,
}

pub fn patches_per_epoch(height: usize, width: usize, patch_size: usize) -> usize {
    (height * width).div_ceil(patch_size * patch_size) * PATCHES_PER_AREA
}

fn crop_planes(img: &RasterImage, y: usize, x: usize, size: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(img.bands() * size * size);
    for b in 0..img.bands() {
        let band = img.band(b);
        for row in y..y + size {
            let start = row * img.width() + x;
            out.extend_from_slice(&band[start..start + size]);
        }
    }
    out
}

/// Draws patches with uniformly random top-left corners, pair by pair.
/// Pairs smaller than the patch are skipped with a warning.
pub fn sample_patches(
    pairs: &[SamplePair],
    patch_size: usize,
    count: PatchCount,
    rng: &mut RngState,
) -> Result<Vec<Patch>> {
    if patch_size == 0 || !patch_size.is_multiple_of(SIZE_MULTIPLE) {
        return Err(Error::Config(format!(
            "patch size {patch_size} must be a positive multiple of {SIZE_MULTIPLE}"
        )));
    }
    let mut out = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let (h, w) = (pair.height(), pair.width());
        if h < patch_size || w < patch_size {
            log::warn!(
                "pair {} ({w}x{h}) is smaller than the {patch_size}px patch; skipped",
                pair.name
            );
            continue;
        }
        let n = match count {
            PatchCount::PerPair(n) => n,
            PatchCount::Auto => patches_per_epoch(h, w, patch_size),
        };
        for _ in 0..n {
            let y = rng.below(h - patch_size + 1);
            let x = rng.below(w - patch_size + 1);
            let label = (y..y + patch_size)
                .flat_map(|row| pair.label.data()[row * w + x..row * w + x + patch_size].iter().copied())
                .collect();
            out.push(Patch {
                pair: i,
                y,
                x,
                size: patch_size,
                bands: pair.bands(),
                img1: crop_planes(&pair.img1, y, x, patch_size),
                img2: crop_planes(&pair.img2, y, x, patch_size),
                label,
            });
        }
    }
    Ok(out)
}

/// Applies one symmetry to both images and the label of a patch; the band
/// axis is untouched.
pub fn apply_dihedral(t: DihedralTransform, patch: &Patch) -> Result<Patch> {
    let n = patch.size;
    if patch.label.len() != n * n {
        return Err(Error::Shape(format!(
            "patch label has {} values, not a {n}x{n} square",
            patch.label.len()
        )));
    }
    Ok(Patch {
        img1: t.apply_planes(&patch.img1, n)?,
        img2: t.apply_planes(&patch.img2, n)?,
        label: t.apply_planes(&patch.label, n)?,
        ..patch.clone()
    })
}
