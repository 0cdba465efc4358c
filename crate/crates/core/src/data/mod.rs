//! Dataset ingestion, normalization, patch sampling and augmentation.

mod augment;
mod manifest;
mod pair;
mod raster;
mod sampling;
mod stats;

pub use augment::DihedralTransform;
pub use manifest::{Crop, DatasetManifest, PairEntry};
pub use pair::{SamplePair, Split};
pub use raster::{LabelMap, RasterImage, HEADER_EXTENSION, RAW_EXTENSION};
pub use sampling::{
    apply_dihedral, patches_per_epoch, sample_patches, Patch, PatchCount, DEFAULT_PATCH_SIZE, PATCHES_PER_AREA,
};
pub use stats::{class_weights_from_counts, compute_class_weights, normalize, NormStats, STD_FLOOR};
