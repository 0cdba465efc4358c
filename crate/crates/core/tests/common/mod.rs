#![allow(dead_code)]

pub mod oracle;

use cdforge_core::arch::{ArchitectureKind, Network};
use cdforge_core::data::{compute_class_weights, LabelMap, RasterImage, SamplePair, Split};
use cdforge_core::eval::{accumulate, infer_pair};
use cdforge_core::train::{stream, AdamConfig, Batch, Stream, Trainer};
use cdforge_core::{RngState, Shape, Tensor};

pub const OVERFIT_SIZE: usize = 64;
pub const OVERFIT_MAX_ITERATIONS: usize = 500;
pub const OVERFIT_F1: f64 = 0.99;
const CHECK_EVERY: usize = 10;

pub fn random_tensor(shape: Shape, rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

/// Noise image and a copy that differs inside a centered square; the label
/// marks the square.
pub fn synthetic_pair(size: usize, bands: usize, seed: u64) -> SamplePair {
    let mut rng = RngState::new(seed);
    let n = bands * size * size;
    let img1: Vec<f32> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let (lo, hi) = (size * 5 / 16, size * 11 / 16);
    let inside = |i: usize| {
        let (y, x) = ((i / size) % size, i % size);
        (lo..hi).contains(&y) && (lo..hi).contains(&x)
    };
    let img2: Vec<f32> = img1
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let jitter = rng.uniform_range(-0.05, 0.05);
            if inside(i) {
                rng.uniform_range(-1.0, 1.0)
            } else {
                v + jitter
            }
        })
        .collect();
    let label = (0..size * size).map(|i| inside(i) as u8).collect();
    SamplePair::new(
        "synthetic",
        RasterImage::new(bands, size, size, img1).unwrap(),
        RasterImage::new(bands, size, size, img2).unwrap(),
        LabelMap::new(size, size, label).unwrap(),
        Split::Train,
    )
    .unwrap()
}

pub struct OverfitRun {
    pub losses: Vec<f32>,
    /// Iteration at which eval-mode F1 first exceeded the target.
    pub reached_at: Option<usize>,
    pub best_f1: f64,
}

/// Trains FC-EF on one synthetic pair, checking eval-mode F1 (after
/// re-estimating batch-norm statistics) every few steps and stopping once
/// it exceeds the target.
pub fn overfit(seed: u64) -> OverfitRun {
    let pair = synthetic_pair(OVERFIT_SIZE, 3, seed);
    let net = Network::build(ArchitectureKind::FcEf, 3, &mut stream(seed, Stream::Init)).unwrap();
    let weights = compute_class_weights(std::slice::from_ref(&pair)).unwrap();
    let mut trainer = Trainer::new(net, AdamConfig::default(), weights, stream(seed, Stream::Dropout)).unwrap();
    let batch = Batch::from_pair(&pair);
    let mut best_f1 = 0.0f64;
    for it in 1..=OVERFIT_MAX_ITERATIONS {
        trainer.step(&batch).unwrap();
        if it % CHECK_EVERY == 0 {
            trainer.recalibrate(std::slice::from_ref(&batch)).unwrap();
            let map = infer_pair(trainer.network(), &pair, None).unwrap();
            let f1 = accumulate(&map, &pair.label).unwrap().metrics().f1;
            best_f1 = best_f1.max(f1);
            if f1 > OVERFIT_F1 {
                return OverfitRun {
                    losses: trainer.losses().to_vec(),
                    reached_at: Some(it),
                    best_f1,
                };
            }
        }
    }
    OverfitRun {
        losses: trainer.losses().to_vec(),
        reached_at: None,
        best_f1,
    }
}

/// Writes pairs as raw float rasters with PNG labels plus a manifest, and
/// returns the manifest path.
pub fn write_dataset(dir: &std::path::Path, pairs: &[(SamplePair, Split)]) -> std::path::PathBuf {
    let mut entries = Vec::new();
    for (i, (p, split)) in pairs.iter().enumerate() {
        let name = format!("pair{i}");
        p.img1.write_raw(&dir.join(format!("{name}_1.rawf32"))).unwrap();
        p.img2.write_raw(&dir.join(format!("{name}_2.rawf32"))).unwrap();
        p.label.save_png(&dir.join(format!("{name}_gt.png"))).unwrap();
        entries.push(serde_json::json!({
            "name": name,
            "img1": format!("{name}_1.rawf32"),
            "img2": format!("{name}_2.rawf32"),
            "label": format!("{name}_gt.png"),
            "split": split,
        }));
    }
    let manifest = serde_json::json!({
        "name": "synthetic",
        "channels": pairs[0].0.bands(),
        "pairs": entries,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}
