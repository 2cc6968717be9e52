//! Plain SGD with a step-halving schedule, global-norm clipping and per-epoch
//! checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{batchify, EncodedExample};
use crate::model::{checkpoint, ModelError, P2CModel, Pass};
use crate::numerics::ParamStore;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch} outside 1..={epochs}")]
    EpochRange { epoch: usize, epochs: usize },
    #[error("non-finite gradient in {param}")]
    NonFinite { param: String },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Step {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub halve_after_epoch: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 13,
            lr0: 1.0,
            halve_after_epoch: 9,
            batch_size: 64,
            dropout: 0.3,
            seed: 1,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    /// Same schedule as the default, sized for corpora of a few hundred examples.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 4,
            grad_clip: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail("lr0 must be positive");
        }
        if self.halve_after_epoch > self.epochs {
            return fail("halve_after_epoch must not exceed epochs");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(TrainError::EpochRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    let halvings = epoch.saturating_sub(cfg.halve_after_epoch);
    Ok(cfg.lr0 * 0.5f64.powi(halvings as i32))
}

/// `p ← p − lr · g` using the gradients held in the store, after scaling them so their
/// global L2 norm is at most `grad_clip`. Returns the pre-clip norm. Nothing is
/// updated if any gradient is non-finite.
pub fn sgd_step(params: &mut ParamStore, lr: f64, grad_clip: f64) -> Result<f64, TrainError> {
    if !(lr >= 0.0) {
        return Err(TrainError::Config(format!("learning rate {lr} must be non-negative")));
    }
    let mut sq = 0.0;
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(TrainError::NonFinite { param: p.name.clone() });
        }
        sq += p.grad.data().iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    let scale = if norm > grad_clip { grad_clip / norm } else { 1.0 };
    let step = lr * scale;
    for p in params.iter_mut() {
        let grad = p.grad.data().to_vec();
        for (w, g) in p.value.data_mut().iter_mut().zip(grad) {
            *w -= step * g;
        }
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-token training loss over the epoch.
    pub loss: f64,
}

impl EpochReport {
    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{:.6}", self.epoch, self.lr, self.loss)
    }
}

/// Where a run writes `epoch-NN.p2c` checkpoints, `model.p2c` (the latest) and
/// `metrics.tsv`.
#[derive(Clone, Debug)]
pub struct OutputDir(pub PathBuf);

impl OutputDir {
    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.0.join(format!("epoch-{epoch:02}.p2c"))
    }

    pub fn latest(&self) -> PathBuf {
        self.0.join("model.p2c")
    }

    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.tsv")
    }
}

fn run_batch(model: &mut P2CModel, batch: &crate::corpus::Batch, dropout: f64, seed: u64, lr: f64, clip: f64) -> Result<f64, TrainError> {
    model.params.zero_grads();
    let mut pass = Pass::train(dropout, seed);
    let loss = model.forward_loss(&mut pass, batch)?;
    let value = pass.graph.value(loss).data()[0];
    pass.graph.backward(loss).map_err(ModelError::from)?;
    pass.graph.accumulate_param_grads(&mut model.params);
    sgd_step(&mut model.params, lr, clip)?;
    Ok(value)
}

/// Trains in place and returns one report per epoch.
///
/// Batch order and dropout masks derive from `cfg.seed` only, so two runs with the
/// same inputs produce the same history. On error the model is restored to its state
/// after the last completed epoch, whose checkpoint (if any) is still on disk.
pub fn train(
    model: &mut P2CModel,
    data: &[EncodedExample],
    cfg: &TrainConfig,
    out: Option<&OutputDir>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if let Some(out) = out {
        fs::create_dir_all(&out.0)?;
        fs::write(out.metrics(), "")?;
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut log = String::new();
    for epoch in 1..=cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        let good = model.params.clone();
        let batches = batchify(data, cfg.batch_size, seeds.gen());
        let mut total = 0.0;
        let mut tokens = 0;
        for (b, batch) in batches.iter().enumerate() {
            let n = batch.target_tokens();
            match run_batch(model, batch, cfg.dropout, seeds.gen(), lr, cfg.grad_clip) {
                Ok(loss) => {
                    total += loss * n as f64;
                    tokens += n;
                }
                Err(e) => {
                    model.params = good;
                    return Err(TrainError::Step {
                        epoch,
                        batch: b + 1,
                        source: Box::new(e),
                    });
                }
            }
        }
        let report = EpochReport {
            epoch,
            lr,
            loss: total / tokens as f64,
        };
        if let Some(out) = out {
            checkpoint::save(model, &out.epoch_checkpoint(epoch))?;
            checkpoint::save(model, &out.latest())?;
            writeln!(log, "{}", report.log_line()).unwrap();
            fs::write(out.metrics(), &log)?;
        }
        on_epoch(&report);
        history.push(report);
    }
    Ok(history)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochReport>, TrainError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let parse = || -> Option<EpochReport> {
                Some(EpochReport {
                    epoch: f.first()?.parse().ok()?,
                    lr: f.get(1)?.parse().ok()?,
                    loss: f.get(2)?.parse().ok()?,
                })
            };
            parse().ok_or_else(|| TrainError::Config(format!("bad metrics line {l:?}")))
        })
        .collect()
}
