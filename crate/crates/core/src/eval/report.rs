//! Per-image and pooled evaluation over a dataset split.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::infer::{infer_pair, TileConfig};
use super::metrics::{accumulate, ConfusionCounts, Metrics};
use crate::arch::Network;
use crate::data::{DatasetManifest, NormStats, SamplePair, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

impl ImageReport {
    pub fn new(name: impl Into<String>, counts: ConfusionCounts) -> Self {
        ImageReport {
            name: name.into(),
            metrics: counts.metrics(),
            counts,
        }
    }
}

/// Pooled metrics come from summed counts, not from averaging per-image
/// metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub dataset: String,
    pub split: Split,
    pub images: Vec<ImageReport>,
    pub pooled: ImageReport,
}

impl SplitReport {
    pub fn from_images(dataset: impl Into<String>, split: Split, images: Vec<ImageReport>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data(format!("{split} split is empty")));
        }
        let mut total = ConfusionCounts::default();
        for r in &images {
            total.add(&r.counts);
        }
        Ok(SplitReport {
            dataset: dataset.into(),
            split,
            images,
            pooled: ImageReport::new("pooled", total),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned table in percent with two decimals; the pooled row is last.
    pub fn to_table(&self) -> String {
        let width = self
            .images
            .iter()
            .map(|r| r.name.len())
            .chain([self.pooled.name.len(), "image".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}",
            "image", "Prec.", "Recall", "Global", "F1"
        );
        for r in self.images.iter().chain([&self.pooled]) {
            let _ = writeln!(out, "{:<width$}  {}", r.name, percent_row(&r.metrics));
        }
        out
    }
}

/// Prec./Recall/Global/F1 in percent, two decimals.
pub fn percent_row(m: &Metrics) -> String {
    format!(
        "{:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}",
        m.precision * 100.0,
        m.recall * 100.0,
        m.global * 100.0,
        m.f1 * 100.0
    )
}

/// Evaluates already-normalized pairs.
pub fn evaluate_pairs(
    net: &Network,
    dataset: &str,
    split: Split,
    pairs: &[SamplePair],
    tile: Option<TileConfig>,
) -> Result<SplitReport> {
    let images = pairs
        .iter()
        .map(|p| {
            let map = infer_pair(net, p, tile)?;
            Ok(ImageReport::new(&p.name, accumulate(&map, &p.label)?))
        })
        .collect::<Result<Vec<_>>>()?;
    SplitReport::from_images(dataset, split, images)
}

/// Loads `split` from `manifest`, normalizes it with `norm` and evaluates.
pub fn evaluate_split(
    net: &Network,
    manifest: &DatasetManifest,
    split: Split,
    norm: Option<&NormStats>,
    tile: Option<TileConfig>,
) -> Result<SplitReport> {
    let mut pairs = manifest.load_split(split)?;
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} has an empty {split} split",
            manifest.name
        )));
    }
    if let Some(norm) = norm {
        for p in &mut pairs {
            norm.apply(p)?;
        }
    }
    evaluate_pairs(net, &manifest.name, split, &pairs, tile)
}
