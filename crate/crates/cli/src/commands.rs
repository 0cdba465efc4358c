use std::fs;
use std::path::Path;
use std::time::Instant;

use cdforge_core::autograd::Fault;
use cdforge_core::data::{DatasetManifest, LabelMap, RasterImage};
use cdforge_core::eval::{
    accumulate, evaluate_split, infer_full, percent_row, render_comparison, ConfusionCounts, Metrics, TileConfig,
};
use cdforge_core::gradcheck::{check_network, check_ops, GradCheckConfig};
use cdforge_core::train::{Checkpoint, TrainConfig};
use cdforge_core::{ArchitectureKind, Error, ErrorKind, Network, Result};
use serde::Serialize;

use crate::{EvaluateArgs, FaultArg, GradcheckArgs, PredictArgs, TrainArgs};

pub const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

pub const CHANGE_MAP: &str = "change_map.png";
pub const PROBABILITY_MAP: &str = "probability.png";
pub const COMPARISON_MAP: &str = "comparison.png";
pub const METRICS: &str = "metrics.json";
pub const REPORT: &str = "report.json";

pub fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Numeric => EXIT_NUMERIC,
    }
}

fn install_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_checkpoint(path: &Path, arch: Option<crate::Arch>, channels: Option<usize>) -> Result<(Checkpoint, Network)> {
    let ckpt = Checkpoint::load(path)?;
    if let Some(kind) = arch.map(ArchitectureKind::from) {
        ckpt.expect(kind, channels)?;
    } else {
        ckpt.expect(ckpt.kind, channels)?;
    }
    let net = ckpt.to_network()?;
    Ok((ckpt, net))
}

fn tile_config(net: &Network, tile: Option<usize>) -> Result<Option<TileConfig>> {
    tile.map(|size| TileConfig::exact(net, size)).transpose()
}

pub fn train(args: TrainArgs) -> Result<u8> {
    let mut config = TrainConfig::new(args.arch.into(), args.manifest, args.out);
    config.seed = args.seed;
    config.epochs = args.epochs;
    config.batch_size = args.batch;
    config.patch_size = args.patch;
    config.learning_rate = args.lr;
    config.patches_per_pair = args.patches_per_pair;
    config.threads = args.threads.threads;
    config.argv = std::env::args().collect();
    let outcome = cdforge_core::train::train(&config)?;
    let last = outcome.records.last().expect("at least one epoch");
    println!(
        "trained {} for {} epochs; best mean loss {:.5} at epoch {}; checkpoints in {}",
        config.kind,
        last.epoch,
        outcome.best.meta.mean_loss.unwrap_or(f32::NAN),
        outcome.best.meta.epoch,
        config.out_dir.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct PredictMetrics {
    counts: ConfusionCounts,
    #[serde(flatten)]
    metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    seconds: Option<f64>,
}

pub fn predict(args: PredictArgs) -> Result<u8> {
    install_threads(args.threads.threads)?;
    let mut img1 = RasterImage::load(&args.img1)?;
    let mut img2 = RasterImage::load(&args.img2)?;
    let (ckpt, net) = load_checkpoint(&args.checkpoint, args.arch, Some(img1.bands()))?;
    let label = args.label.as_deref().map(LabelMap::load_png).transpose()?;
    if let Some(norm) = &ckpt.normalization {
        norm.apply_image(&mut img1)?;
        norm.apply_image(&mut img2)?;
    }
    let tile = tile_config(&net, args.tile)?;

    let started = Instant::now();
    let map = infer_full(&net, &img1, &img2, tile)?;
    let seconds = started.elapsed().as_secs_f64();
    if args.time {
        println!("inference: {seconds:.3} s ({}x{})", map.width(), map.height());
    }

    create_dir(&args.out)?;
    map.save_png(&args.out.join(CHANGE_MAP))?;
    map.save_probability_png(&args.out.join(PROBABILITY_MAP))?;
    println!("{} of {} pixels changed", map.changed_pixels(), map.pred().len());
    if let Some(label) = label {
        let comparison = args.out.join(COMPARISON_MAP);
        render_comparison(&map, &label)?
            .save(&comparison)
            .map_err(|source| Error::Image {
                path: comparison,
                source,
            })?;
        let counts = accumulate(&map, &label)?;
        let metrics = Metrics::from_counts(&counts);
        println!("Prec.  Recall  Global  F1");
        println!("{}", percent_row(&metrics));
        let record = PredictMetrics {
            counts,
            metrics,
            seconds: args.time.then_some(seconds),
        };
        let json = serde_json::to_string_pretty(&record).expect("metrics serialize");
        write_file(&args.out.join(METRICS), &json)?;
    }
    Ok(0)
}

pub fn evaluate(args: EvaluateArgs) -> Result<u8> {
    install_threads(args.threads.threads)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let (ckpt, net) = load_checkpoint(&args.checkpoint, args.arch, Some(manifest.channels))?;
    let tile = tile_config(&net, args.tile)?;
    let report = evaluate_split(&net, &manifest, args.split.into(), ckpt.normalization.as_ref(), tile)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join(REPORT), &report.to_json())?;
    }
    Ok(0)
}

pub fn gradcheck(args: GradcheckArgs) -> Result<u8> {
    install_threads(args.threads.threads)?;
    let cfg = GradCheckConfig {
        seed: args.seed,
        samples: args.samples,
        ..GradCheckConfig::default()
    };
    if cfg.samples == 0 {
        return Err(Error::Config("--samples must be at least 1".into()));
    }
    let fault = args.inject_fault.map(|f| match f {
        FaultArg::ConvBackward => Fault::ConvBackward,
    });
    let mut reports = check_ops(&cfg, fault)?;
    if args.networks {
        for kind in ArchitectureKind::ALL {
            reports.push(check_network(kind, &cfg, fault)?);
        }
    }
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.ok() { "ok" } else { "FAIL" };
        println!(
            "{:<22} {:>4}/{:<4} max rel. error {:.3e}  {verdict}",
            r.name, r.passed, r.checked, r.max_rel_error
        );
        failed += usize::from(!r.ok());
    }
    if failed > 0 {
        eprintln!(
            "{failed} check(s) below {:.0}% of coordinates within {:.0e}",
            cfg.pass_fraction * 100.0,
            cfg.tolerance
        );
        return Ok(EXIT_NUMERIC);
    }
    Ok(0)
}
