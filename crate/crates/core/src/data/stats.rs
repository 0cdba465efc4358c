use serde::{Deserialize, Serialize};

use super::pair::SamplePair;
use super::raster::RasterImage;
use crate::error::{Error, Result};

/// Floor applied to per-band standard deviations.
pub const STD_FLOOR: f32 = 1e-6;

/// Per-band z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    /// Statistics over both images of every given pair.
    pub fn compute(pairs: &[SamplePair]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::Data("cannot compute normalization over zero pairs".into()))?;
        let bands = first.bands();
        let mut sum = vec![0.0f64; bands];
        let mut sq = vec![0.0f64; bands];
        let mut count = 0u64;
        for p in pairs {
            if p.bands() != bands {
                return Err(Error::Data(format!(
                    "pair {} has {} bands, expected {bands}",
                    p.name,
                    p.bands()
                )));
            }
            for img in [&p.img1, &p.img2] {
                for b in 0..bands {
                    for &v in img.band(b) {
                        sum[b] += v as f64;
                        sq[b] += (v as f64) * (v as f64);
                    }
                }
                count += (img.height() * img.width()) as u64;
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / n - m * m).max(0.0).sqrt() as f32).max(STD_FLOOR))
            .collect();
        Ok(NormStats {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    /// `(x − mean) / std` per band, in place.
    pub fn apply(&self, pair: &mut SamplePair) -> Result<()> {
        if pair.bands() != self.bands() {
            return Err(Error::Data(format!(
                "pair {} has {} bands, statistics cover {}",
                pair.name,
                pair.bands(),
                self.bands()
            )));
        }
        self.apply_image(&mut pair.img1)?;
        self.apply_image(&mut pair.img2)
    }

    pub fn apply_image(&self, img: &mut RasterImage) -> Result<()> {
        if img.bands() != self.bands() {
            return Err(Error::Data(format!(
                "{} has {} bands, statistics cover {}",
                img.source().display(),
                img.bands(),
                self.bands()
            )));
        }
        let plane = img.height() * img.width();
        for (b, band) in img.values_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[b], self.std[b].max(STD_FLOOR));
            band.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(())
    }
}

/// Returns a copy of `pair` normalized with `stats`.
pub fn normalize(pair: &SamplePair, stats: &NormStats) -> Result<SamplePair> {
    let mut out = pair.clone();
    stats.apply(&mut out)?;
    Ok(out)
}

/// Class weights inversely proportional to pixel frequency:
/// `w_c = N_total / (2 · N_c)`, indexed `[no change, change]`.
pub fn compute_class_weights(pairs: &[SamplePair]) -> Result<[f32; 2]> {
    let (mut zeros, mut ones) = (0u64, 0u64);
    for p in pairs {
        zeros += p.label.count(0);
        ones += p.label.count(1);
    }
    class_weights_from_counts(zeros, ones)
}

pub fn class_weights_from_counts(no_change: u64, change: u64) -> Result<[f32; 2]> {
    if no_change == 0 || change == 0 {
        return Err(Error::Data(format!(
            "both classes must be present in the training labels (no change: {no_change}, change: {change})"
        )));
    }
    let total = (no_change + change) as f64;
    Ok([
        (total / (2.0 * no_change as f64)) as f32,
        (total / (2.0 * change as f64)) as f32,
    ])
}
