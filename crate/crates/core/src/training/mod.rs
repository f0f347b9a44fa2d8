//! Losses, the Adam optimizer, and the epoch loop over labelled slice sequences.

mod adam;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use loss::{
    aggregate, argmax, compute_loss, loss_last_step, loss_per_step, loss_rate_inspired, loss_snn_rate_mse, one_hot,
    predict, LossResult,
};

use std::borrow::Cow;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_io::SliceSequence;
use crate::network::{Network, ParamGrads};
use crate::tensor::Real;

/// Samples per gradient partial sum. Partial sums are reduced in order, so the batch
/// gradient does not depend on the number of worker threads.
pub const REDUCE_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_epoch: 100, batch_size: 50, seed: 0, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config("max_epoch and batch_size must be positive"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::config("Adam needs lr, eps > 0 and betas in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub metrics: Metrics,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// `(epoch, accuracy)` of the best test epoch.
    pub best_test: Option<(usize, f64)>,
    pub final_test: Option<f64>,
    pub final_train: Option<f64>,
}

/// Append-only CSV log with columns `epoch,split,loss,accuracy,wall_seconds`.
pub struct RunLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> RunLog<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["epoch", "split", "loss", "accuracy", "wall_seconds"]).map_err(csv_err)?;
        writer.flush()?;
        Ok(RunLog { writer })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        self.writer
            .write_record([
                r.epoch.to_string(),
                r.split.to_string(),
                format!("{:.8}", r.metrics.loss),
                format!("{:.6}", r.metrics.accuracy),
                format!("{:.3}", r.wall_seconds),
            ])
            .map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn label_of(seq: &SliceSequence, classes: usize) -> Result<usize> {
    match seq.label {
        Some(l) if (l as usize) < classes => Ok(l as usize),
        Some(l) => Err(Error::shape(format!("label {l} outside {classes} classes"))),
        None => Err(Error::shape("sample has no label")),
    }
}

/// The first `steps` slices, zero-padded when the sample is shorter.
fn fit_steps(seq: &SliceSequence, steps: usize) -> Cow<'_, SliceSequence> {
    if seq.steps() == steps {
        Cow::Borrowed(seq)
    } else {
        Cow::Owned(seq.truncated(steps))
    }
}

struct Partial<T> {
    loss: f64,
    correct: usize,
    grads: Option<ParamGrads<T>>,
}

fn sample_pass<T: Real>(net: &Network<T>, seq: &SliceSequence, steps: usize, with_grads: bool) -> Result<Partial<T>> {
    let label = label_of(seq, net.classes())?;
    let seq = fit_steps(seq, steps);
    let pass = net.forward(&seq, with_grads)?;
    let kind = net.config().loss;
    let lr = compute_loss(kind, &pass.outputs, label)?;
    let correct = usize::from(predict(kind, &pass.outputs) == label);
    let grads = match pass.tape {
        Some(tape) => Some(net.backward(&tape, &lr.grads)?),
        None => None,
    };
    Ok(Partial { loss: lr.loss, correct, grads })
}

fn merge<T: Real>(mut a: Partial<T>, b: Partial<T>) -> Partial<T> {
    a.loss += b.loss;
    a.correct += b.correct;
    a.grads = match (a.grads, b.grads) {
        (Some(mut x), Some(y)) => {
            x.add(&y);
            Some(x)
        }
        (x, y) => x.or(y),
    };
    a
}

/// Loss sum, correct count and summed gradients over `samples`, deterministic for any
/// thread count.
fn batch_pass<T: Real>(
    net: &Network<T>,
    samples: &[&SliceSequence],
    steps: usize,
    with_grads: bool,
) -> Result<Partial<T>> {
    let partials: Vec<Partial<T>> = samples
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc: Option<Partial<T>> = None;
            for s in chunk {
                let p = sample_pass(net, s, steps, with_grads)?;
                acc = Some(match acc {
                    Some(a) => merge(a, p),
                    None => p,
                });
            }
            Ok(acc.expect("chunks are non-empty"))
        })
        .collect::<Result<_>>()?;
    Ok(partials.into_iter().reduce(merge).unwrap_or(Partial { loss: 0.0, correct: 0, grads: None }))
}

/// One optimizer step on a batch; returns the batch's summed loss and correct count.
pub fn train_batch<T: Real>(net: &mut Network<T>, adam: &mut Adam<T>, batch: &[&SliceSequence]) -> Result<(f64, usize)> {
    let steps = net.config().steps;
    let p = batch_pass(net, batch, steps, true)?;
    if let Some(mut g) = p.grads {
        g.scale(T::of(1.0 / batch.len() as f64));
        adam.update(net.params_mut(), &g);
    }
    Ok((p.loss, p.correct))
}

/// Mean loss and accuracy over `samples`, each run for `steps` slices.
pub fn evaluate<T: Real>(net: &Network<T>, samples: &[SliceSequence], steps: usize) -> Result<Metrics> {
    if samples.is_empty() {
        return Ok(Metrics { loss: 0.0, accuracy: 0.0 });
    }
    let refs: Vec<&SliceSequence> = samples.iter().collect();
    let p = batch_pass(net, &refs, steps, false)?;
    let n = samples.len() as f64;
    Ok(Metrics { loss: p.loss / n, accuracy: p.correct as f64 / n })
}

/// Per-class predictions, in sample order.
pub fn predictions<T: Real>(net: &Network<T>, samples: &[SliceSequence], steps: usize) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| Ok(predict(net.config().loss, &net.forward(&fit_steps(s, steps), false)?.outputs)))
        .collect()
}

/// Run the epoch loop. Training metrics are the running values seen during the epoch;
/// the test split is evaluated after every epoch. `on_record` sees each record as it is made.
pub fn train<T: Real>(
    net: &mut Network<T>,
    train_set: &[SliceSequence],
    test_set: &[SliceSequence],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut adam = Adam::new(cfg.adam, &net.params().into_iter().map(|(_, t)| t).collect::<Vec<_>>());
    let start = Instant::now();
    let mut out = TrainOutcome::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epoch {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss, mut correct) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&SliceSequence> = idx.iter().map(|&i| &train_set[i]).collect();
            let (l, c) = train_batch(net, &mut adam, &batch)?;
            loss += l;
            correct += c;
        }
        let n = train_set.len() as f64;
        let rec = EpochRecord {
            epoch,
            split: Split::Train,
            metrics: Metrics { loss: loss / n, accuracy: correct as f64 / n },
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_record(&rec)?;
        out.final_train = Some(rec.metrics.accuracy);
        out.records.push(rec);
        if !test_set.is_empty() {
            let metrics = evaluate(net, test_set, net.config().steps)?;
            let rec = EpochRecord { epoch, split: Split::Test, metrics, wall_seconds: start.elapsed().as_secs_f64() };
            on_record(&rec)?;
            if out.best_test.is_none_or(|(_, a)| metrics.accuracy > a) {
                out.best_test = Some((epoch, metrics.accuracy));
            }
            out.final_test = Some(metrics.accuracy);
            out.records.push(rec);
        }
    }
    Ok(out)
}
