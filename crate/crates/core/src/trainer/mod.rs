//! Student training: optimizers, learning-rate schedule, early stopping and evaluation.

mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::features::{build_feature_bundle, FilterSpec};
use crate::studentnet::{sample_input, InputSpec, StudentModel};
use crate::tensor::{Float, Tape, Tensor};

pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

/// Shape of the warm-up phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Warmup {
    /// Linear ramp from `factor * base` at epoch 1 to `base` at the last warm-up epoch.
    Ramp,
    /// `factor * base` for every warm-up epoch.
    Constant,
}

/// Warm-up followed by step decay at milestones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub warmup: Warmup,
    pub warmup_epochs: usize,
    pub warmup_factor: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    /// Budget the milestones are written for; other budgets scale them proportionally.
    pub reference_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            warmup: Warmup::Ramp,
            warmup_epochs: 10,
            warmup_factor: 0.5,
            milestones: vec![30, 50, 60, 65, 70],
            gamma: 0.25,
            reference_epochs: 80,
        }
    }
}

impl LrSchedule {
    /// Rate for 1-based `epoch` of a `total_epochs` run.
    pub fn rate(&self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        let epoch = epoch.max(1);
        if epoch <= self.warmup_epochs {
            let frac = match self.warmup {
                Warmup::Constant => 0.0,
                Warmup::Ramp if self.warmup_epochs == 1 => 1.0,
                Warmup::Ramp => (epoch - 1) as f64 / (self.warmup_epochs - 1) as f64,
            };
            return base * (self.warmup_factor + (1.0 - self.warmup_factor) * frac);
        }
        let scale = total_epochs.max(1) as f64 / self.reference_epochs as f64;
        let passed = self.milestones.iter().filter(|&&m| epoch as f64 >= m as f64 * scale).count();
        base * self.gamma.powi(passed as i32)
    }
}

/// Rate under the default schedule.
pub fn lr_at_epoch(base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    LrSchedule::default().rate(base_lr, epoch, total_epochs)
}

/// Stop when validation accuracy is strictly below `min_accuracy` at an epoch before `before_epoch`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub before_epoch: usize,
    pub min_accuracy: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            before_epoch: 6,
            min_accuracy: 0.5,
        }
    }
}

impl EarlyStop {
    pub fn triggered(&self, epoch: usize, val_accuracy: f64) -> bool {
        epoch < self.before_epoch && val_accuracy < self.min_accuracy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub early_stop: Option<EarlyStop>,
    /// End training once validation accuracy reaches 1.0; later epochs cannot replace the kept weights.
    pub stop_when_perfect: bool,
    pub seed: u64,
    pub eval_batch: usize,
}

impl TrainOptions {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            schedule: LrSchedule::default(),
            early_stop: Some(EarlyStop::default()),
            stop_when_perfect: true,
            seed,
            eval_batch: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub early_stopped: bool,
    pub perfect: bool,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Drive the epoch loop: `epoch_fn(epoch)` trains one epoch and returns `(lr, loss, val_accuracy)`.
pub fn run_epochs(
    epochs: usize,
    early_stop: Option<EarlyStop>,
    stop_when_perfect: bool,
    mut epoch_fn: impl FnMut(usize) -> Result<(f64, f64, f64)>,
) -> Result<TrainReport> {
    let mut report = TrainReport {
        epochs: Vec::with_capacity(epochs),
        early_stopped: false,
        perfect: false,
        best_val_accuracy: 0.0,
        best_epoch: 0,
        epochs_run: 0,
    };
    for epoch in 1..=epochs {
        let (lr, train_loss, val_accuracy) = epoch_fn(epoch)?;
        report.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_accuracy,
        });
        report.epochs_run = epoch;
        if report.best_epoch == 0 || val_accuracy > report.best_val_accuracy {
            report.best_val_accuracy = val_accuracy;
            report.best_epoch = epoch;
        }
        if early_stop.is_some_and(|r| r.triggered(epoch, val_accuracy)) {
            report.early_stopped = true;
            break;
        }
        if stop_when_perfect && val_accuracy >= 1.0 {
            report.perfect = true;
            break;
        }
    }
    Ok(report)
}

/// Network inputs for a set of samples, all four feature branches in `[M, C, T, V]` order.
#[derive(Clone, Debug)]
pub struct PreparedSet<F> {
    inputs: Vec<Vec<Vec<F>>>,
    labels: Vec<usize>,
    frames: usize,
    persons: usize,
    joints: usize,
    channels: [usize; 4],
}

impl<F: Float> PreparedSet<F> {
    pub fn new(samples: &[Sample], filter: &FilterSpec) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("cannot prepare an empty sample set".into()))?;
        let s = first.sequence.data().shape();
        let (frames, joints, persons) = (s[1], s[2], s[3]);
        let spec = InputSpec::full(frames, persons);
        let mut channels = [0; 4];
        channels.copy_from_slice(&spec.channels());
        let mut inputs = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for sample in samples {
            let shape = sample.sequence.data().shape();
            if shape != s {
                return Err(Error::Shape(format!("sample {} is {shape:?}, expected {s:?}", sample.id)));
            }
            let bundle = build_feature_bundle(&sample.sequence, filter)?;
            inputs.push(sample_input(&bundle, &spec)?);
            labels.push(sample.label());
        }
        Ok(Self {
            inputs,
            labels,
            frames,
            persons,
            joints,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Input layout with the given feature branches.
    pub fn input_spec(&self, branches: &[usize]) -> InputSpec {
        InputSpec {
            branches: branches.to_vec(),
            frames: self.frames,
            persons: self.persons,
        }
    }

    /// One `[n*M, C, T, V]` tensor per branch of `spec` for the samples at `indices`.
    pub fn batch(&self, indices: &[usize], spec: &InputSpec) -> Result<Vec<Tensor<F>>> {
        if spec.frames != self.frames || spec.persons != self.persons {
            return Err(Error::Shape(format!(
                "model expects {} frames and {} persons, data has {} and {}",
                spec.frames, spec.persons, self.frames, self.persons
            )));
        }
        spec.branches
            .iter()
            .map(|&b| {
                let c = *self
                    .channels
                    .get(b)
                    .ok_or_else(|| Error::Config(format!("no feature branch {b}")))?;
                let per = self.persons * c * self.frames * self.joints;
                let mut data = Vec::with_capacity(indices.len() * per);
                for &i in indices {
                    data.extend_from_slice(&self.inputs[i][b]);
                }
                Tensor::new(&[indices.len() * self.persons, c, self.frames, self.joints], data)
            })
            .collect()
    }
}

/// Accuracy plus the per-sample predictions it was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

fn argmax_rows<F: Float>(logits: &Tensor<F>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Eval-mode predictions over a whole set.
pub fn evaluate<F: Float>(model: &StudentModel<F>, set: &PreparedSet<F>, batch: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let spec = model.input_spec().clone();
    let order: Vec<usize> = (0..set.len()).collect();
    let mut predictions = Vec::with_capacity(set.len());
    for chunk in order.chunks(batch.max(1)) {
        let logits = model.predict(&set.batch(chunk, &spec)?)?;
        predictions.extend(argmax_rows(&logits));
    }
    Ok(Evaluation {
        accuracy: accuracy(&predictions, set.labels())?,
        predictions,
        labels: set.labels().to_vec(),
    })
}

/// Train one epoch of shuffled mini-batches; returns the mean batch loss.
fn train_epoch<F: Float>(
    model: &mut StudentModel<F>,
    optimizer: &mut Optimizer<F>,
    set: &PreparedSet<F>,
    lr: f64,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let spec = model.input_spec().clone();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let batches = order.chunks(optimizer.config().batch_size);
    let count = batches.len();
    for (b, chunk) in batches.enumerate() {
        let inputs = set.batch(chunk, &spec)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| set.labels()[i]).collect();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &inputs, true, Some(rng))?;
        let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
        let value = tape.value(loss).data()[0].to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFinite { epoch, batch: b });
        }
        tape.backward(loss)?;
        let grads: Vec<Vec<F>> = out.params.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        drop(tape);
        optimizer.step(model.params_mut(), &grads, lr)?;
        model.absorb_stats(&out.stats);
        total += value;
    }
    Ok(total / count as f64)
}

/// Mini-batch cross-entropy training with per-epoch validation.
///
/// The model is left at the parameters of its best validation epoch.
pub fn train_student<F: Float>(
    model: &mut StudentModel<F>,
    train: &PreparedSet<F>,
    val: &PreparedSet<F>,
    opt: &OptimizerConfig,
    options: &TrainOptions,
) -> Result<TrainReport> {
    opt.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("training needs nonempty train and validation sets".into()));
    }
    if options.epochs == 0 {
        return Err(Error::Contract("training budget must be at least one epoch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut optimizer = Optimizer::new(opt.clone(), model.params());
    let mut best: Option<(Vec<Tensor<F>>, Vec<_>)> = None;
    let mut best_acc = f64::NEG_INFINITY;
    let report = run_epochs(options.epochs, options.early_stop, options.stop_when_perfect, |epoch| {
        let lr = options.schedule.rate(opt.lr, epoch, options.epochs);
        let loss = train_epoch(model, &mut optimizer, train, lr, epoch, &mut rng)?;
        let acc = evaluate(model, val, options.eval_batch)?.accuracy;
        if acc > best_acc {
            best_acc = acc;
            best = Some((model.params().to_vec(), model.running_stats().to_vec()));
        }
        Ok((lr, loss, acc))
    })?;
    if let Some((params, stats)) = best {
        model.params_mut().clone_from_slice(&params);
        model.set_running_stats(stats)?;
    }
    Ok(report)
}
