use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use crate::arch::{ArchitectureKind, DEFAULT_DROPOUT, SIZE_MULTIPLE};
use crate::data::{PatchCount, DEFAULT_PATCH_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ArchitectureKind,
    pub seed: u64,
    pub learning_rate: f32,
    pub epochs: usize,
    /// Patches per step.
    pub batch_size: usize,
    pub dropout: f32,
    pub weight_decay: f32,
    pub threads: usize,
    pub manifest: PathBuf,
    pub patch_size: usize,
    /// Patches per training pair each epoch; `None` scales with image area.
    pub patches_per_pair: Option<usize>,
    pub out_dir: PathBuf,
    /// Command line that produced this run, echoed into the run log.
    #[serde(default)]
    pub argv: Vec<String>,
}

impl TrainConfig {
    pub fn new(kind: ArchitectureKind, manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            kind,
            seed: 0,
            learning_rate: adam.learning_rate,
            epochs: 100,
            batch_size: 32,
            dropout: DEFAULT_DROPOUT,
            weight_decay: adam.weight_decay,
            threads: 1,
            manifest: manifest.into(),
            patch_size: DEFAULT_PATCH_SIZE,
            patches_per_pair: None,
            out_dir: out_dir.into(),
            argv: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.threads < 1 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!(
                "patch size {} must be a positive multiple of {SIZE_MULTIPLE}",
                self.patch_size
            )));
        }
        if self.patches_per_pair == Some(0) {
            return Err(Error::Config("patches per pair must be at least 1".into()));
        }
        crate::ops::check_dropout_rate(self.dropout)?;
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn patch_count(&self) -> PatchCount {
        self.patches_per_pair.map_or(PatchCount::Auto, PatchCount::PerPair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::new(ArchitectureKind::FcEf, "m.json", "out");
        c.validate().unwrap();
        assert_eq!(
            (c.learning_rate, c.epochs, c.batch_size, c.dropout),
            (1e-3, 100, 32, 0.2)
        );
        assert_eq!(c.weight_decay, 1e-4);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let base = TrainConfig::new(ArchitectureKind::FcEf, "m.json", "out");
        let cases = [
            TrainConfig {
                learning_rate: 0.0,
                ..base.clone()
            },
            TrainConfig {
                epochs: 0,
                ..base.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..base.clone()
            },
            TrainConfig {
                patch_size: 90,
                ..base.clone()
            },
            TrainConfig {
                dropout: 1.0,
                ..base.clone()
            },
            TrainConfig {
                threads: 0,
                ..base.clone()
            },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }
}
