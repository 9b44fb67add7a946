//! Training and evaluation loops.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::checkpoint::{self, CheckpointError};
use super::data::{dihedral, generate_dataset, Sample};
use super::io::write_atomic;
use super::optim::AdamW;
use crate::config::RunConfig;
use crate::decisions::Decisions;
use crate::error::{MemoryError, TensorError};
use crate::loss::combined_loss;
use crate::metrics::SegMetrics;
use crate::network::{argmax_labels, forward_full, Banks, MemoryTap, SimMpNet};
use crate::params::Binder;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const LOG_HEADER: &str = "epoch,loss,k,mean_dsc,mean_hd95";
pub const METRICS_HEADER: &str = "epoch,class,dsc,hd95";
pub const LOG_FILE: &str = "log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite value ({what}) at epoch {epoch}; weights norm {weights_norm:e}, last K {last_k}")]
    NonFinite {
        what: String,
        epoch: usize,
        weights_norm: f64,
        last_k: usize,
    },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("data: {0}")]
    Data(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Memory(e.into())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss of the epoch.
    pub loss: f64,
    /// Update budget in force after this epoch's loss was recorded.
    pub k: usize,
    pub mean_dsc: f64,
    pub mean_hd95: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: SimMpNet,
    pub log: Vec<EpochLog>,
    /// Held-out metrics after each epoch.
    pub metrics: Vec<SegMetrics>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.loss, e.k, e.mean_dsc, fmt_opt(e.mean_hd95));
    }
    s
}

pub fn metrics_csv(metrics: &[SegMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for (i, m) in metrics.iter().enumerate() {
        for (class, c) in m.classes.iter().enumerate() {
            let _ = writeln!(s, "{},{class},{},{}", i + 1, c.dsc, fmt_opt(c.hd95));
        }
    }
    s
}

/// Per-class table followed by a `mean` row over foreground classes.
pub fn evaluation_csv(m: &SegMetrics) -> String {
    let mut s = String::from("class,dsc,hd95\n");
    for (class, c) in m.classes.iter().enumerate() {
        let _ = writeln!(s, "{class},{},{}", c.dsc, fmt_opt(c.hd95));
    }
    let _ = writeln!(s, "mean,{},{}", m.mean_dsc(), fmt_opt(m.mean_hd95()));
    s
}

/// The train and held-out splits a run configuration describes, generated
/// from its seed at encoder-1 resolution.
pub fn make_splits(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>), TrainError> {
    let (n, t) = (&cfg.network, &cfg.train);
    let mut all = generate_dataset(t.train_samples + t.test_samples, n.res1, n.res1, n.classes, t.seed)?;
    let test = all.split_off(t.train_samples);
    Ok((all, test))
}

fn check_samples(net: &SimMpNet, samples: &[Sample]) -> Result<(), TrainError> {
    let (k, res) = (net.config.classes, net.config.res1);
    for (i, s) in samples.iter().enumerate() {
        if s.image.rank() != 3 || s.image.shape()[2] != 1 || s.height() != s.width() {
            return Err(TrainError::Data(format!("sample {i}: image must be square H×W×1")));
        }
        if s.height() != res || s.width() != res {
            return Err(TrainError::Data(format!("sample {i}: image side {} but the network expects {res}", s.height())));
        }
        if s.mask.len() != s.height() * s.width() || s.mask.iter().any(|&l| l >= k) {
            return Err(TrainError::Data(format!("sample {i}: mask must match the image and use labels below {k}")));
        }
    }
    Ok(())
}

/// Predictions on `samples` scored against their masks.
pub fn evaluate_samples(net: &SimMpNet, samples: &[Sample]) -> Result<SegMetrics, TrainError> {
    check_samples(net, samples)?;
    let res = net.config.res1;
    let preds = samples
        .iter()
        .map(|s| net.predict(&s.image).map(|l| argmax_labels(&l)))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(&[usize], &[usize])> = preds.iter().zip(samples).map(|(p, s)| (&p[..], &s.mask[..])).collect();
    Ok(SegMetrics::compute(&pairs, res, res, net.config.classes)?)
}

/// Loads a checkpoint and evaluates it on `samples`.
pub fn evaluate(checkpoint_path: &Path, samples: &[Sample]) -> Result<SegMetrics, TrainError> {
    let (_, net) = checkpoint::load(checkpoint_path)?;
    evaluate_samples(&net, samples)
}

/// Loss, gradients in parameter order and memory taps of one sample.
fn sample_step(net: &mut SimMpNet, sample: &Sample, init_seed: u64) -> Result<(f64, Vec<Tensor>, Vec<MemoryTap>), MemoryError> {
    let SimMpNet { config, params, banks } = net;
    let mut tape = Tape::new();
    let image1 = tape.constant(sample.image.clone())?;
    let image2 = if config.res2 == config.res1 {
        image1
    } else {
        let small = crate::network::resize_tensor(&sample.image, config.res2, config.res2)?;
        tape.constant(small)?
    };
    let mut binder = Binder::new(params, true);
    let mode = if config.use_memory && banks.iter().any(|b| !b.is_initialized()) {
        Banks::Init(banks, init_seed)
    } else {
        Banks::Read(banks)
    };
    let out = forward_full(config, &mut tape, &mut binder, mode, &mut Decisions::free(), image1, image2)?;
    let loss = combined_loss(&mut tape, out.logits, &sample.mask)?;
    let value = tape.value(loss).item()?;
    tape.backward(loss)?;
    Ok((value, binder.gradients(&tape), out.taps))
}

/// Groups the tapped tokens of bank `bank` by their cluster label.
fn wld_groups(taps: &[MemoryTap], bank: usize, k: usize) -> Vec<Vec<f64>> {
    let mut groups = vec![Vec::new(); k];
    for tap in taps.iter().filter(|t| t.bank == bank) {
        for (row, &l) in tap.tokens.rows().zip(&tap.labels) {
            groups[l].extend_from_slice(row);
        }
    }
    groups
}

/// Files a run writes into its output directory.
fn write_outputs(out: &Path, log: &[EpochLog], metrics: &[SegMetrics]) -> io::Result<()> {
    write_atomic(&out.join(LOG_FILE), log_csv(log).as_bytes())?;
    write_atomic(&out.join(METRICS_FILE), metrics_csv(metrics).as_bytes())
}

/// Trains a fresh network on `train_set`, scoring `test_set` after every
/// epoch. When `out` is given, the logs are rewritten after each epoch and
/// the final checkpoint is saved there. `progress` sees every log row.
pub fn train(
    cfg: &RunConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    out: Option<&Path>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    let t = &cfg.train;
    let mut net = SimMpNet::new(cfg.network.clone(), t.seed)?;
    check_samples(&net, train_set)?;
    check_samples(&net, test_set)?;
    if train_set.is_empty() {
        return Err(TrainError::Data("empty training set".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let mut opt = AdamW::new(t.lr, t.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x5eed_0f_7ea1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(t.epochs);
    let mut metrics = Vec::with_capacity(t.epochs);
    let k = cfg.network.classes;

    for epoch in 1..=t.epochs {
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(t.batch_size).collect();
        let mut batch_losses = Vec::with_capacity(batches.len());
        let mut last_taps = Vec::new();
        for (bi, batch) in batches.iter().enumerate() {
            let mut sum: Option<Vec<Tensor>> = None;
            let mut loss_sum = 0.0;
            let mut taps = Vec::new();
            for &i in batch.iter() {
                let sample = if t.augment {
                    dihedral(&train_set[i], rng.gen_range(0..8))
                } else {
                    train_set[i].clone()
                };
                let (loss, grads, sample_taps) = match sample_step(&mut net, &sample, t.seed) {
                    Ok(v) => v,
                    Err(MemoryError::Tensor(TensorError::NonFinite(op))) => {
                        return Err(abort(out, &net, epoch, format!("{op} in the forward or backward pass")));
                    }
                    Err(e) => return Err(e.into()),
                };
                if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(abort(out, &net, epoch, "loss or gradient".into()));
                }
                loss_sum += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
                if bi + 1 == batches.len() {
                    taps.extend(sample_taps);
                }
            }
            let n = batch.len() as f64;
            let mut grads = sum.expect("non-empty batch");
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v /= n);
            }
            opt.step(net.params.tensors_mut(), &grads);
            if !net.params.all_finite() {
                return Err(abort(out, &net, epoch, "weights after the optimizer step".into()));
            }
            batch_losses.push(loss_sum / n);
            last_taps = taps;
        }
        let epoch_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        let mut budget = 0;
        for bank in &mut net.banks {
            budget = bank.record_epoch_loss(epoch_loss)?;
        }
        if cfg.network.use_memory {
            for (b, bank) in net.banks.iter_mut().enumerate() {
                bank.apply_wld_update(&wld_groups(&last_taps, b, k), budget)?;
            }
        }
        let m = evaluate_samples(&net, test_set)?;
        let row = EpochLog {
            epoch,
            loss: epoch_loss,
            k: budget,
            mean_dsc: m.mean_dsc(),
            mean_hd95: m.mean_hd95(),
        };
        progress(&row);
        log.push(row);
        metrics.push(m);
        if let Some(dir) = out {
            write_outputs(dir, &log, &metrics)?;
        }
    }
    if let Some(dir) = out {
        checkpoint::save(&dir.join(CHECKPOINT_FILE), cfg, &net)?;
    }
    Ok(TrainOutcome { net, log, metrics })
}

/// Builds the non-finite abort error and, when possible, writes it to the
/// output directory as well.
fn abort(out: Option<&Path>, net: &SimMpNet, epoch: usize, what: String) -> TrainError {
    let err = TrainError::NonFinite {
        what,
        epoch,
        weights_norm: net.params.norm(),
        last_k: net.banks.first().map_or(0, |b| b.k_current()),
    };
    if let Some(dir) = out {
        let _ = write_atomic(&dir.join(DIAGNOSTICS_FILE), format!("{err}\n").as_bytes());
    }
    err
}
