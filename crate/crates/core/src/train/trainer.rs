use std::fs;
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::batch::{augment, Batch};
use super::checkpoint::{Checkpoint, TrainingMeta};
use super::config::TrainConfig;
use super::log::{EpochRecord, RunLog};
use super::optim::{Adam, AdamConfig};
use crate::arch::{Mode, Network};
use crate::autograd::{Graph, Tape};
use crate::data::{compute_class_weights, sample_patches, DatasetManifest, NormStats, SamplePair, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_pairs;
use crate::rng::RngState;

pub const BEST_CHECKPOINT: &str = "best.cdf1";
pub const LAST_CHECKPOINT: &str = "last.cdf1";
pub const RUN_LOG: &str = "run_log.jsonl";
/// Batches used to re-estimate batch-norm statistics after each epoch.
pub const CALIBRATION_BATCHES: usize = 8;

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Init = 0,
    Sampling = 1,
    Dropout = 2,
}

pub fn stream(seed: u64, s: Stream) -> RngState {
    RngState::new(seed).fork(s as u64)
}

/// A network together with its optimizer state and loss history.
#[derive(Debug)]
pub struct Trainer {
    net: Network,
    optim: Adam,
    class_weights: [f32; 2],
    dropout_rng: RngState,
    losses: Vec<f32>,
    epoch: usize,
    batch_in_epoch: usize,
}

impl Trainer {
    pub fn new(net: Network, adam: AdamConfig, class_weights: [f32; 2], dropout_rng: RngState) -> Result<Self> {
        if class_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!(
                "class weights must be positive, got {class_weights:?}"
            )));
        }
        let optim = Adam::new(adam, net.params())?;
        Ok(Trainer {
            net,
            optim,
            class_weights,
            dropout_rng,
            losses: Vec::new(),
            epoch: 0,
            batch_in_epoch: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn losses(&self) -> &[f32] {
        &self.losses
    }

    /// Marks the start of an epoch; used to locate divergence.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.batch_in_epoch = 0;
    }

    /// Forward, backward and one optimizer update. Returns the batch loss
    /// measured before the update.
    pub fn step(&mut self, batch: &Batch) -> Result<f32> {
        let batch_index = self.batch_in_epoch;
        self.batch_in_epoch += 1;
        let mut tape = Tape::new();
        let trace = self
            .net
            .forward(&mut tape, &batch.img1, &batch.img2, Mode::Train, &mut self.dropout_rng)?;
        let loss_var = tape.weighted_logloss(trace.logits, &batch.labels, self.class_weights)?;
        let loss = tape.value(&loss_var).data()[0];
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: self.epoch,
                batch: batch_index,
                loss,
            });
        }
        let grads = tape.backward(loss_var)?;
        drop(tape);
        self.net.update_running_stats(&trace.batch_stats);
        self.optim.step(self.net.params_mut(), &grads)?;
        self.losses.push(loss);
        Ok(loss)
    }

    pub fn loss_digest(&self) -> String {
        loss_digest(&self.losses)
    }

    /// Re-estimates batch-norm running statistics from dropout-free
    /// forward passes; see [`Network::recalibrate_running_stats`].
    pub fn recalibrate(&mut self, batches: &[Batch]) -> Result<()> {
        self.net
            .recalibrate_running_stats(batches.iter().map(|b| (&b.img1, &b.img2)))
            .map(|_| ())
    }
}

pub fn loss_digest(losses: &[f32]) -> String {
    let mut h = Sha256::new();
    for l in losses {
        h.update(l.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// What a finished run produced.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest mean training loss.
    pub best: Checkpoint,
    pub records: Vec<EpochRecord>,
}

/// Trains on the manifest's train split, writing `best.cdf1`, `last.cdf1`
/// and `run_log.jsonl` into the output directory.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", config.threads)))?;
    pool.install(|| train_inner(config))
}

fn train_inner(config: &TrainConfig) -> Result<TrainOutcome> {
    let manifest = DatasetManifest::load(&config.manifest)?;
    let mut train_pairs = manifest.load_split(Split::Train)?;
    if train_pairs.is_empty() {
        return Err(Error::Data(format!("manifest {} has no training pairs", manifest.name)));
    }
    let mut test_pairs = manifest.load_split(Split::Test)?;
    let norm = match &manifest.normalization {
        Some(n) => n.clone(),
        None => NormStats::compute(&train_pairs)?,
    };
    for p in train_pairs.iter_mut().chain(test_pairs.iter_mut()) {
        norm.apply(p)?;
    }
    let class_weights = compute_class_weights(&train_pairs)?;
    log::info!(
        "{}: {} train / {} test pairs, class weights {class_weights:?}",
        manifest.name,
        train_pairs.len(),
        test_pairs.len()
    );

    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let mut run_log = RunLog::create(&config.out_dir.join(RUN_LOG), config)?;

    let net = Network::with_blocks(
        config.kind,
        manifest.channels,
        &crate::arch::DEFAULT_BLOCKS,
        config.dropout,
        &mut stream(config.seed, Stream::Init),
    )?;
    let mut trainer = Trainer::new(net, config.adam(), class_weights, stream(config.seed, Stream::Dropout))?;
    let mut sampling = stream(config.seed, Stream::Sampling);

    let mut best: Option<(f32, Checkpoint)> = None;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        trainer.begin_epoch(epoch);
        let mut patches = sample_patches(&train_pairs, config.patch_size, config.patch_count(), &mut sampling)?;
        if patches.is_empty() {
            return Err(Error::Data(format!(
                "no training pair is at least {0}x{0} pixels",
                config.patch_size
            )));
        }
        sampling.shuffle(&mut patches);
        let mut total = 0.0f64;
        let mut steps = 0usize;
        for chunk in patches.chunks(config.batch_size) {
            let batch = Batch::from_patches(&augment(chunk, &mut sampling)?)?;
            total += trainer.step(&batch)? as f64;
            steps += 1;
        }
        let mean_loss = (total / steps as f64) as f32;
        let calibration = patches
            .chunks(config.batch_size)
            .take(CALIBRATION_BATCHES)
            .map(Batch::from_patches)
            .collect::<Result<Vec<_>>>()?;
        trainer.recalibrate(&calibration)?;
        drop(calibration);
        let test_f1 = if test_pairs.is_empty() {
            None
        } else {
            let report = evaluate_pairs(trainer.network(), &manifest.name, Split::Test, &test_pairs, None)?;
            Some(report.pooled.metrics.f1)
        };
        let meta = TrainingMeta {
            epoch,
            loss_history_digest: trainer.loss_digest(),
            mean_loss: Some(mean_loss),
            seed: Some(config.seed),
        };
        let ckpt = Checkpoint::from_network(trainer.network(), Some(norm.clone()), meta);
        ckpt.save(&config.out_dir.join(LAST_CHECKPOINT))?;
        if best.as_ref().is_none_or(|(l, _)| mean_loss < *l) {
            ckpt.save(&config.out_dir.join(BEST_CHECKPOINT))?;
            best = Some((mean_loss, ckpt));
        }
        let record = EpochRecord {
            epoch,
            mean_loss,
            seconds: started.elapsed().as_secs_f64(),
            test_f1,
        };
        log::info!(
            "epoch {epoch}: loss {mean_loss:.5} ({steps} steps, {:.1}s){}",
            record.seconds,
            test_f1
                .map(|f| format!(", test F1 {:.2}%", f * 100.0))
                .unwrap_or_default()
        );
        run_log.append(record)?;
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch").1,
        records: run_log.records().to_vec(),
    })
}

/// Normalizes pairs with the statistics stored in a checkpoint, if any.
pub fn normalize_for(ckpt: &Checkpoint, pairs: &mut [SamplePair]) -> Result<()> {
    if let Some(norm) = &ckpt.normalization {
        for p in pairs {
            norm.apply(p)?;
        }
    }
    Ok(())
}
