//! Minibatched training: each batch runs the inference forward pass, the
//! hand-rolled backward pass, and one Adam update. Per-epoch mean loss (and
//! optional clustering metrics) are recorded as history.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::grad::{adam_step, backward, AdamState, AttentionGrad};
use crate::metrics;
use crate::model::{Dataset, MixtureModel};
use crate::objective::{cluster_dataset, forward_sample, resolve_steps, SampleForward};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub attention: AttentionGrad,
    /// Evaluate NMI/ARI/ACC against labels every this many epochs; 0 turns
    /// the (full-forward-pass) evaluation off.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            lr: 0.001,
            seed: 0,
            shuffle: true,
            attention: AttentionGrad::Full,
            eval_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MixtureModel,
    pub history: Vec<EpochStats>,
    /// Set when training stopped early on a numeric failure; `model` is the
    /// last state that produced finite losses.
    pub diverged: Option<String>,
}

/// Trains for `cfg.epochs` passes over `data`. On numeric divergence the
/// last good model is returned with `diverged` set instead of an error, so
/// callers can still checkpoint it.
pub fn train(data: &Dataset, model: &MixtureModel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    model.ensure_valid()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if data.dim() != model.hyper.data_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset dimension {} but model expects {}",
            data.dim(),
            model.hyper.data_dim
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate {} must be finite and >= 0",
            cfg.lr
        )));
    }

    let n = data.len();
    let mut current = model.clone();
    let mut adam = AdamState::new(model, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut diverged = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let steps = resolve_steps(&current);
            let forwards: Result<Vec<SampleForward>> = batch
                .par_iter()
                .map(|&i| forward_sample(data.get(i), &current, &steps))
                .collect();
            let forwards = match forwards {
                Ok(f) => f,
                Err(e) if e.is_numeric() => {
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let batch_sum: f64 = forwards.iter().map(|f| f.loss()).sum();
            if !batch_sum.is_finite() {
                diverged = Some(format!("epoch {epoch}: non-finite batch loss"));
                break 'epochs;
            }
            loss_sum += batch_sum;
            let grads = backward(data, batch, &current, &forwards, &steps, cfg.attention)?;
            match adam_step(&current, &grads, &mut adam) {
                Ok(next) => current = next,
                Err(e) if e.is_numeric() => {
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let mut stats = EpochStats {
            epoch,
            mean_loss: loss_sum / n as f64,
            nmi: None,
            ari: None,
            acc: None,
        };
        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 {
            if let Some(truth) = data.labels() {
                let report = cluster_dataset(data, &current)?;
                let pred = report.hard_labels();
                stats.nmi = Some(metrics::nmi(&pred, truth)?);
                stats.ari = Some(metrics::ari(&pred, truth)?);
                stats.acc = Some(metrics::acc(&pred, truth)?);
            }
        }
        history.push(stats);
    }

    Ok(TrainOutcome { model: current, history, diverged })
}

/// Writes history as CSV with empty cells for epochs without metrics.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,loss,nmi,ari,acc\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch,
            row.mean_loss,
            fmt(row.nmi),
            fmt(row.ari),
            fmt(row.acc)
        ));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
