//! Mini-batch SGD training with plateau learning-rate reduction.

mod optim;
mod scheduler;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use did_tensor::Tape;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{sgd_step, OptimizerState};
pub use scheduler::SchedulerState;

use crate::error::{DidError, Result};
use crate::features::FeatureMatrix;
use crate::kv::Pairs;
use crate::models::{save_checkpoint, Classifier};
use crate::rng::{derive_rng, DidRng};

/// One labelled utterance, already prepared for the network's input.
#[derive(Clone, Debug)]
pub struct Example {
    pub utt_id: String,
    pub feats: FeatureMatrix,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub patience: usize,
    pub threshold: f64,
    pub reduction_factor: f64,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 10,
            learning_rate: 0.001,
            momentum: 0.8,
            patience: 1,
            threshold: 0.001,
            reduction_factor: 0.5,
            min_lr: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DidError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        self.scheduler().validate()
    }

    pub fn scheduler(&self) -> SchedulerState {
        SchedulerState {
            reduction_factor: self.reduction_factor,
            patience: self.patience,
            min_lr: self.min_lr,
            threshold: self.threshold,
            ..SchedulerState::default()
        }
    }

    pub fn to_pairs(&self, out: &mut Pairs) {
        out.insert("epochs", self.epochs);
        out.insert("batch_size", self.batch_size);
        out.insert("learning_rate", self.learning_rate);
        out.insert("momentum", self.momentum);
        out.insert("patience", self.patience);
        out.insert("threshold", self.threshold);
        out.insert("reduction_factor", self.reduction_factor);
        out.insert("min_lr", self.min_lr);
    }

    pub fn from_pairs(p: &mut Pairs) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            epochs: p.take("epochs", d.epochs)?,
            batch_size: p.take("batch_size", d.batch_size)?,
            learning_rate: p.take("learning_rate", d.learning_rate)?,
            momentum: p.take("momentum", d.momentum)?,
            patience: p.take("patience", d.patience)?,
            threshold: p.take("threshold", d.threshold)?,
            reduction_factor: p.take("reduction_factor", d.reduction_factor)?,
            min_lr: p.take("min_lr", d.min_lr)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// Mean cross-entropy over the epoch's utterances.
    pub mean_loss: f64,
    /// Fraction of utterances whose pre-update argmax matched the label.
    pub accuracy: f64,
}

struct UttResult {
    loss: f64,
    correct: bool,
    grads: Vec<Vec<f64>>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn utterance_gradients(model: &Classifier, ex: &Example, dropout_seed: u64) -> Result<UttResult> {
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let mut rng = DidRng::seed_from_u64(dropout_seed);
    let logits = model.forward(&tape, &p, &ex.feats, Some(&mut rng as &mut dyn RngCore))?;
    let correct = argmax(logits.data()) == ex.label;
    let loss = logits.cross_entropy(ex.label)?;
    tape.backward(&loss)?;
    let grads = p
        .iter()
        .zip(model.params().tensors())
        .map(|(v, t)| tape.grad(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok(UttResult {
        loss: loss.item(),
        correct,
        grads,
    })
}

/// One pass over `corpus` in a seeded random order, with one SGD step per
/// batch of at most `batch_size` utterances. Gradients within a batch are
/// computed in parallel and summed in utterance order, so the result does
/// not depend on the thread count.
pub fn train_epoch<R: Rng>(
    model: &mut Classifier,
    corpus: &[Example],
    optimizer: &mut OptimizerState,
    batch_size: usize,
    rng: &mut R,
) -> Result<EpochMetrics> {
    if corpus.is_empty() {
        return Err(DidError::Input("training corpus is empty".into()));
    }
    if batch_size == 0 {
        return Err(DidError::Config("batch size must be positive".into()));
    }
    let classes = model.num_classes();
    if let Some(ex) = corpus.iter().find(|e| e.label >= classes) {
        return Err(DidError::Input(format!(
            "{}: label {} out of range for {classes} classes",
            ex.utt_id, ex.label
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    let (mut total_loss, mut correct) = (0.0, 0usize);
    for batch in order.chunks(batch_size) {
        let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
        let frozen = &*model;
        let results: Vec<UttResult> = batch
            .par_iter()
            .zip(&seeds)
            .map(|(&i, &seed)| utterance_gradients(frozen, &corpus[i], seed))
            .collect::<Result<_>>()?;
        let batch_loss: f64 = results.iter().map(|r| r.loss).sum();
        if !batch_loss.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|&i| corpus[i].utt_id.as_str()).collect();
            return Err(DidError::Numeric(format!(
                "non-finite loss at lr {} in batch [{}]",
                optimizer.learning_rate,
                ids.join(", ")
            )));
        }
        total_loss += batch_loss;
        correct += results.iter().filter(|r| r.correct).count();
        let scale = 1.0 / batch.len() as f64;
        let tensors = model.params_mut().tensors_mut();
        for (k, tensor) in tensors.iter_mut().enumerate() {
            let mut sum = vec![0.0; tensor.numel()];
            for r in &results {
                for (s, g) in sum.iter_mut().zip(&r.grads[k]) {
                    *s += g;
                }
            }
            sum.iter_mut().for_each(|s| *s *= scale);
            tensor.zero_grad();
            tensor.accumulate_grad(&sum)?;
        }
        sgd_step(model.params_mut(), optimizer)?;
    }
    Ok(EpochMetrics {
        mean_loss: total_loss / corpus.len() as f64,
        accuracy: correct as f64 / corpus.len() as f64,
    })
}

/// Fraction of `examples` classified correctly.
pub fn accuracy(model: &Classifier, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(DidError::Input("no examples to score".into()));
    }
    let hits = examples
        .par_iter()
        .map(|ex| {
            let tape = Tape::no_grad();
            let p = model.params().bind(&tape);
            let logits = model.forward(&tape, &p, &ex.feats, None)?;
            Ok(usize::from(argmax(logits.data()) == ex.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / examples.len() as f64)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_acc: f64,
    /// Parameters from the best dev epoch.
    pub best_model: Classifier,
}

/// Where [`fit`] writes its artifacts.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub dir: PathBuf,
}

impl FitOutput {
    pub fn log_path(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch{epoch:03}.didm"))
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.didm")
    }
}

/// Trains for `cfg.epochs` epochs, evaluating on `dev` after each one. With
/// an output directory, every epoch's checkpoint, the best-dev checkpoint
/// and a JSON-lines log are written there.
pub fn fit(
    model: &mut Classifier,
    train: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
    seed: u64,
    out: Option<&FitOutput>,
) -> Result<FitSummary> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(DidError::Input("dev set is empty".into()));
    }
    let mut optimizer = OptimizerState::new(model.params(), cfg.learning_rate, cfg.momentum)?;
    let mut scheduler = cfg.scheduler();
    let mut rng = derive_rng(seed, "train.shuffle");
    let mut log = match out {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| DidError::io(&o.dir, e))?;
            let path = o.log_path();
            Some((
                std::fs::File::create(&path).map_err(|e| DidError::io(&path, e))?,
                path,
            ))
        }
        None => None,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Classifier)> = None;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = optimizer.learning_rate;
        let m = train_epoch(model, train, &mut optimizer, cfg.batch_size, &mut rng)?;
        let dev_acc = accuracy(model, dev)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: m.mean_loss,
            train_acc: m.accuracy,
            dev_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {:.4} train {:.2}% dev {:.2}%",
            m.mean_loss,
            100.0 * m.accuracy,
            100.0 * dev_acc
        );
        if best.as_ref().is_none_or(|(_, acc, _)| dev_acc > *acc) {
            best = Some((epoch, dev_acc, model.clone()));
            if let Some(o) = out {
                save_checkpoint(&o.best_checkpoint(), model)?;
            }
        }
        if let Some(o) = out {
            save_checkpoint(&o.epoch_checkpoint(epoch), model)?;
        }
        if let Some((file, path)) = log.as_mut() {
            let line = serde_json::to_string(&record)
                .map_err(|e| DidError::Format(format!("serializing log record: {e}")))?;
            writeln!(file, "{line}").map_err(|e| DidError::io(path.as_path(), e))?;
        }
        optimizer.learning_rate = scheduler.step(dev_acc, lr);
        history.push(record);
    }
    let (best_epoch, best_dev_acc, best_model) = best.expect("at least one epoch");
    Ok(FitSummary {
        history,
        best_epoch,
        best_dev_acc,
        best_model,
    })
}

/// Reads a training log written by [`fit`].
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| DidError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| DidError::Format(format!("{}: {e}", path.display())))
        })
        .collect()
}
