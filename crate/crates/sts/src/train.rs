//! Resampling, stratified splitting and the mini-batch training loop.

use crate::adam::AdamState;
use crate::error::{Result, StsError};
use crate::model::DualStreamModel;
use crate::repr::{assemble, StsSequence};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::topology::SkeletonTopology;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Optimizer and loop settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Per-class fraction that goes into the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(StsError::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(StsError::Config(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(StsError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Linearly resamples a sequence onto `target_len` uniform time points over
/// its original span, per coordinate.
pub fn resample_time(seq: &StsSequence, target_len: usize) -> Result<StsSequence> {
    if target_len < 2 {
        return Err(StsError::Config(format!(
            "resampling target length must be >= 2, got {target_len}"
        )));
    }
    let n = seq.num_frames();
    let m = seq.num_dims();
    let l = seq.coord_dim();
    let mut frames = vec![0.0; target_len * m * l];
    for i in 0..target_len {
        // position on the source time axis, endpoints mapped to endpoints
        let pos = i as f64 * (n - 1) as f64 / (target_len - 1) as f64;
        let lo = (pos.floor() as usize).min(n - 2);
        let w = pos - lo as f64;
        for j in 0..m {
            let a = seq.point(lo, j);
            let b = seq.point(lo + 1, j);
            for c in 0..l {
                frames[(i * m + j) * l + c] = a[c] * (1.0 - w) + b[c] * w;
            }
        }
    }
    StsSequence::new(seq.label, target_len, m, l, frames)
}

/// Stratified split: within each class, instances are shuffled and
/// `round(fraction * count)` of them go to the training side. Every class
/// must keep at least one instance on each side.
pub fn split_dataset<R: Rng>(
    sequences: &[StsSequence],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if sequences.is_empty() {
        return Err(StsError::Input("cannot split an empty dataset".into()));
    }
    let n_classes = sequences.iter().map(|s| s.label).max().unwrap() + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, s) in sequences.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            return Err(StsError::Input(format!("class {label} has no instances")));
        }
        let k = (fraction * members.len() as f64).round() as usize;
        if k == 0 || k == members.len() {
            return Err(StsError::Input(format!(
                "class {label} with {} instances cannot be split {fraction:.2}/{:.2}",
                members.len(),
                1.0 - fraction
            )));
        }
        members.shuffle(rng);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Sequences turned into per-instance feature tensors, ready for batching.
pub struct PreparedDataset {
    pub r_tdf: Vec<Tensor>,
    pub r_dtf: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub feature_len: usize,
}

/// Resamples every sequence to `temporal_len` and assembles both feature
/// tensors.
pub fn prepare_dataset(
    sequences: &[StsSequence],
    topology: &SkeletonTopology,
    temporal_len: usize,
) -> Result<PreparedDataset> {
    if sequences.is_empty() {
        return Err(StsError::Input("cannot prepare an empty dataset".into()));
    }
    let n_classes = sequences.iter().map(|s| s.label).max().unwrap() + 1;
    let mut r_tdf = Vec::with_capacity(sequences.len());
    let mut r_dtf = Vec::with_capacity(sequences.len());
    let mut labels = Vec::with_capacity(sequences.len());
    let mut feature_len = 0;
    for seq in sequences {
        let resampled = resample_time(seq, temporal_len)?;
        let pair = assemble(&resampled, topology)?;
        feature_len = pair.feature_len;
        r_tdf.push(pair.r_tdf);
        r_dtf.push(pair.r_dtf);
        labels.push(seq.label);
    }
    Ok(PreparedDataset {
        r_tdf,
        r_dtf,
        labels,
        n_classes,
        feature_len,
    })
}

/// Stacks the selected instances into rank-4 batch tensors plus a one-hot
/// label matrix.
pub fn stack_batch(
    data: &PreparedDataset,
    indices: &[usize],
    n_classes: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    if indices.is_empty() {
        return Err(StsError::Input("empty batch".into()));
    }
    let stack = |items: &[Tensor]| -> Result<Tensor> {
        let per = items[indices[0]].numel();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(items[indices[0]].shape());
        let mut data_out = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data_out.extend_from_slice(items[i].data());
        }
        Tensor::new(shape, data_out)
    };
    let r_tdf = stack(&data.r_tdf)?;
    let r_dtf = stack(&data.r_dtf)?;
    let mut labels = Tensor::zeros(&[indices.len(), n_classes]);
    for (row, &i) in indices.iter().enumerate() {
        if data.labels[i] >= n_classes {
            return Err(StsError::Input(format!(
                "label {} outside {} classes",
                data.labels[i], n_classes
            )));
        }
        labels.data_mut()[row * n_classes + data.labels[i]] = 1.0;
    }
    Ok((r_tdf, r_dtf, labels))
}

/// Anything trainable with the shared mini-batch loop. `forward` must return
/// parameter tape vars in the same order as `parameters_mut`.
pub trait Classifier {
    fn forward(
        &mut self,
        tape: &mut Tape,
        r_tdf: &Tensor,
        r_dtf: &Tensor,
        training: bool,
    ) -> Result<(Var, Vec<Var>)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_sizes(&self) -> Vec<usize>;
}

impl Classifier for DualStreamModel {
    fn forward(
        &mut self,
        tape: &mut Tape,
        r_tdf: &Tensor,
        r_dtf: &Tensor,
        training: bool,
    ) -> Result<(Var, Vec<Var>)> {
        DualStreamModel::forward(self, tape, r_tdf, r_dtf, training)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        DualStreamModel::parameters_mut(self)
    }

    fn param_sizes(&self) -> Vec<usize> {
        DualStreamModel::param_sizes(self)
    }
}

/// One row of the per-epoch history.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Final result of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn count_correct(logits: &Tensor, labels: &[usize], indices: &[usize]) -> usize {
    argmax_rows(logits)
        .iter()
        .zip(indices)
        .filter(|&(&pred, &i)| pred == labels[i])
        .count()
}

/// Accuracy of `model` on the selected instances, eval mode, batched.
pub fn evaluate<C: Classifier>(
    model: &mut C,
    data: &PreparedDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(StsError::Input("cannot evaluate on an empty set".into()));
    }
    let mut correct = 0;
    for chunk in indices.chunks(batch_size) {
        let (r_tdf, r_dtf, _) = stack_batch(data, chunk, data.n_classes)?;
        let mut tape = Tape::new();
        let (logits, _) = model.forward(&mut tape, &r_tdf, &r_dtf, false)?;
        correct += count_correct(tape.value(logits), &data.labels, chunk);
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Mini-batch Adam training. Shuffles the training indices every epoch,
/// records loss/accuracy per epoch and evaluates the held-out set in eval
/// mode. Fails fast if the loss stops being finite.
pub fn fit<C: Classifier, R: Rng>(
    model: &mut C,
    data: &PreparedDataset,
    train_indices: &[usize],
    test_indices: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_indices.is_empty() {
        return Err(StsError::Input("empty training set".into()));
    }
    let mut adam = AdamState::new(
        &model.param_sizes(),
        config.learning_rate,
        config.beta1,
        config.beta2,
    );
    let mut order: Vec<usize> = train_indices.to_vec();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(config.batch_size) {
            let (r_tdf, r_dtf, labels) = stack_batch(data, chunk, data.n_classes)?;
            let mut tape = Tape::new();
            let (logits, param_vars) = model.forward(&mut tape, &r_tdf, &r_dtf, true)?;
            let loss = tape.softmax_nll(logits, &labels)?;
            let loss_val = tape.value(loss).scalar_value();
            if !loss_val.is_finite() {
                return Err(StsError::State(format!(
                    "non-finite loss {loss_val} at epoch {epoch}"
                )));
            }
            loss_sum += loss_val * chunk.len() as f64;
            correct += count_correct(tape.value(logits), &data.labels, chunk);
            tape.backward(loss)?;
            let grads: Vec<Tensor> = param_vars
                .iter()
                .map(|&v| tape.grad(v))
                .collect::<Result<Vec<_>>>()?;
            drop(tape);
            let mut params = model.parameters_mut();
            adam.step(&mut params, &grads)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let train_accuracy = correct as f64 / order.len() as f64;
        let test_accuracy = if test_indices.is_empty() {
            f64::NAN
        } else {
            evaluate(model, data, test_indices, config.batch_size)?
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            test_accuracy,
        });
    }
    let last = history.last().unwrap();
    Ok(TrainOutcome {
        final_train_accuracy: last.train_accuracy,
        final_test_accuracy: last.test_accuracy,
        history,
    })
}

/// Serializes the per-epoch history as CSV.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,test_accuracy\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch, h.train_loss, h.train_accuracy, h.test_accuracy
        ));
    }
    out
}
