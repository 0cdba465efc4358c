use crate::data::{apply_dihedral, DihedralTransform, Patch, SamplePair};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

/// Stacked image pairs with their labels, ready for a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub img1: Tensor,
    pub img2: Tensor,
    /// `N·H·W` labels in image order.
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn from_patches(patches: &[Patch]) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::Data("cannot build a batch from zero patches".into()))?;
        let (size, bands) = (first.size, first.bands);
        if patches.iter().any(|p| p.size != size || p.bands != bands) {
            return Err(Error::Shape(
                "patches in one batch must share size and band count".into(),
            ));
        }
        let shape = Shape::new(patches.len(), bands, size, size);
        let cat = |f: fn(&Patch) -> &[f32]| patches.iter().flat_map(|p| f(p).iter().copied()).collect::<Vec<_>>();
        Ok(Batch {
            img1: Tensor::from_vec(shape, cat(|p| &p.img1))?,
            img2: Tensor::from_vec(shape, cat(|p| &p.img2))?,
            labels: patches.iter().flat_map(|p| p.label.iter().copied()).collect(),
        })
    }

    /// A whole pair as a batch of one.
    pub fn from_pair(pair: &SamplePair) -> Self {
        Batch {
            img1: pair.img1.to_tensor(),
            img2: pair.img2.to_tensor(),
            labels: pair.label.data().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.img1.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Applies an independently drawn symmetry to every patch.
pub fn augment(patches: &[Patch], rng: &mut RngState) -> Result<Vec<Patch>> {
    patches
        .iter()
        .map(|p| apply_dihedral(DihedralTransform::new(rng.below(8) as u8)?, p))
        .collect()
}
