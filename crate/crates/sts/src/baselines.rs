//! Reference classifiers: k-nearest-neighbors, Gaussian naive Bayes, a
//! one-hidden-layer perceptron and a plain convolutional net. All of them
//! consume only the time-major feature tensor, flattened where the method
//! needs vectors.

use crate::error::{Result, StsError};
use crate::tape::{BnStats, Tape, Var};
use crate::tensor::Tensor;
use crate::train::{Classifier, PreparedDataset};
use rand::Rng;

pub const KNN_K: usize = 5;
pub const GNB_VAR_FLOOR: f64 = 1e-9;

/// Flattened feature vector of one instance.
fn features(data: &PreparedDataset, i: usize) -> &[f64] {
    data.r_tdf[i].data()
}

/// Majority vote over the `k` nearest training instances by Euclidean
/// distance. Distance ties prefer the lower training index; vote ties
/// prefer the smaller label.
pub fn knn_predict(
    data: &PreparedDataset,
    train_indices: &[usize],
    query: &[f64],
    k: usize,
) -> Result<usize> {
    if train_indices.is_empty() || k == 0 {
        return Err(StsError::Input("knn needs a non-empty training set and k >= 1".into()));
    }
    let mut dists: Vec<(f64, usize)> = train_indices
        .iter()
        .map(|&i| {
            let d: f64 = features(data, i)
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut votes = vec![0usize; data.n_classes];
    for &(_, i) in dists.iter().take(k.min(dists.len())) {
        votes[data.labels[i]] += 1;
    }
    let mut best = 0;
    for (label, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = label;
        }
    }
    Ok(best)
}

pub fn knn_accuracy(
    data: &PreparedDataset,
    train_indices: &[usize],
    test_indices: &[usize],
    k: usize,
) -> Result<f64> {
    if test_indices.is_empty() {
        return Err(StsError::Input("empty test set".into()));
    }
    let mut correct = 0;
    for &i in test_indices {
        if knn_predict(data, train_indices, features(data, i), k)? == data.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_indices.len() as f64)
}

/// Gaussian naive Bayes with per-class feature means and floored variances.
pub struct GaussianNb {
    log_prior: Vec<f64>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

impl GaussianNb {
    pub fn fit(data: &PreparedDataset, train_indices: &[usize]) -> Result<Self> {
        if train_indices.is_empty() {
            return Err(StsError::Input("empty training set".into()));
        }
        let d = features(data, train_indices[0]).len();
        let c = data.n_classes;
        let mut count = vec![0usize; c];
        let mut mean = vec![vec![0.0; d]; c];
        for &i in train_indices {
            let y = data.labels[i];
            count[y] += 1;
            for (m, x) in mean[y].iter_mut().zip(features(data, i)) {
                *m += x;
            }
        }
        for y in 0..c {
            if count[y] == 0 {
                return Err(StsError::Input(format!("class {y} absent from training set")));
            }
            for m in &mut mean[y] {
                *m /= count[y] as f64;
            }
        }
        let mut var = vec![vec![0.0; d]; c];
        for &i in train_indices {
            let y = data.labels[i];
            for ((v, m), x) in var[y].iter_mut().zip(&mean[y]).zip(features(data, i)) {
                *v += (x - m) * (x - m);
            }
        }
        let total = train_indices.len() as f64;
        let mut log_prior = vec![0.0; c];
        for y in 0..c {
            for v in &mut var[y] {
                *v = (*v / count[y] as f64).max(GNB_VAR_FLOOR);
            }
            log_prior[y] = (count[y] as f64 / total).ln();
        }
        Ok(GaussianNb { log_prior, mean, var })
    }

    pub fn predict(&self, query: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for y in 0..self.log_prior.len() {
            let mut score = self.log_prior[y];
            for ((&x, &m), &v) in query.iter().zip(&self.mean[y]).zip(&self.var[y]) {
                score += -0.5 * ((x - m) * (x - m) / v + v.ln() + (2.0 * std::f64::consts::PI).ln());
            }
            if score > best_score {
                best_score = score;
                best = y;
            }
        }
        best
    }
}

pub fn gnb_accuracy(
    data: &PreparedDataset,
    train_indices: &[usize],
    test_indices: &[usize],
) -> Result<f64> {
    if test_indices.is_empty() {
        return Err(StsError::Input("empty test set".into()));
    }
    let nb = GaussianNb::fit(data, train_indices)?;
    let correct = test_indices
        .iter()
        .filter(|&&i| nb.predict(features(data, i)) == data.labels[i])
        .count();
    Ok(correct as f64 / test_indices.len() as f64)
}

/// One-hidden-layer perceptron on the flattened feature tensor.
pub struct MlpBaseline {
    input_dim: usize,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl MlpBaseline {
    pub const HIDDEN: usize = 128;

    pub fn new<R: Rng>(input_dim: usize, n_classes: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || n_classes < 2 {
            return Err(StsError::Config("mlp needs inputs and >= 2 classes".into()));
        }
        let bound1 = (6.0 / input_dim as f64).sqrt();
        let bound2 = (6.0 / Self::HIDDEN as f64).sqrt();
        Ok(MlpBaseline {
            input_dim,
            w1: Tensor::uniform(&[input_dim, Self::HIDDEN], bound1, rng),
            b1: Tensor::zeros(&[Self::HIDDEN]),
            w2: Tensor::uniform(&[Self::HIDDEN, n_classes], bound2, rng),
            b2: Tensor::zeros(&[n_classes]),
        })
    }
}

impl Classifier for MlpBaseline {
    fn forward(
        &mut self,
        tape: &mut Tape,
        r_tdf: &Tensor,
        _r_dtf: &Tensor,
        _training: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let batch = r_tdf.shape()[0];
        if r_tdf.numel() != batch * self.input_dim {
            return Err(StsError::Dimension(format!(
                "mlp expects {} features per instance, got {}",
                self.input_dim,
                r_tdf.numel() / batch
            )));
        }
        let x = tape.leaf(r_tdf.clone());
        let flat = tape.reshape(x, vec![batch, self.input_dim])?;
        let w1 = tape.leaf(self.w1.clone());
        let b1 = tape.leaf(self.b1.clone());
        let w2 = tape.leaf(self.w2.clone());
        let b2 = tape.leaf(self.b2.clone());
        let h = tape.linear(flat, w1, b1)?;
        let h = tape.leaky_relu(h, 0.01)?;
        let logits = tape.linear(h, w2, b2)?;
        Ok((logits, vec![w1, b1, w2, b2]))
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn param_sizes(&self) -> Vec<usize> {
        vec![
            self.w1.numel(),
            self.b1.numel(),
            self.w2.numel(),
            self.b2.numel(),
        ]
    }
}

/// Plain convolutional baseline on the time-major tensor: three 3x3
/// conv/batch-norm/leaky-ReLU blocks with 2x2 max pooling after the first
/// two, then a linear classifier.
pub struct CnnBaseline {
    input_shape: [usize; 3],
    convs: Vec<(Tensor, Tensor)>,
    gammas: Vec<Tensor>,
    betas: Vec<Tensor>,
    stats: Vec<BnStats>,
    fc_w: Tensor,
    fc_b: Tensor,
}

const CNN_CHANNELS: [usize; 3] = [16, 32, 32];

impl CnnBaseline {
    pub fn new<R: Rng>(
        num_dims: usize,
        temporal_len: usize,
        feature_len: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut h = temporal_len;
        let mut w = feature_len;
        for stage in 0..2 {
            if h < 2 || w < 2 {
                return Err(StsError::Config(format!(
                    "input {temporal_len}x{feature_len} too small for pooling stage {stage}"
                )));
            }
            h = (h - 2) / 2 + 1;
            w = (w - 2) / 2 + 1;
        }
        let mut convs = Vec::new();
        let mut gammas = Vec::new();
        let mut betas = Vec::new();
        let mut stats = Vec::new();
        let mut c_in = num_dims;
        for &c_out in &CNN_CHANNELS {
            let bound = (6.0 / (c_in * 9) as f64).sqrt();
            convs.push((
                Tensor::uniform(&[c_out, c_in, 3, 3], bound, rng),
                Tensor::zeros(&[c_out]),
            ));
            gammas.push(Tensor::new(vec![c_out], vec![1.0; c_out])?);
            betas.push(Tensor::zeros(&[c_out]));
            stats.push(BnStats::new(c_out));
            c_in = c_out;
        }
        let flat = CNN_CHANNELS[2] * h * w;
        let bound = (6.0 / flat as f64).sqrt();
        Ok(CnnBaseline {
            input_shape: [num_dims, temporal_len, feature_len],
            convs,
            gammas,
            betas,
            stats,
            fc_w: Tensor::uniform(&[flat, n_classes], bound, rng),
            fc_b: Tensor::zeros(&[n_classes]),
        })
    }
}

impl Classifier for CnnBaseline {
    fn forward(
        &mut self,
        tape: &mut Tape,
        r_tdf: &Tensor,
        _r_dtf: &Tensor,
        training: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let expected: Vec<usize> = std::iter::once(r_tdf.shape()[0])
            .chain(self.input_shape.iter().copied())
            .collect();
        if r_tdf.shape() != expected.as_slice() {
            return Err(StsError::Dimension(format!(
                "cnn expects shape {:?}, got {:?}",
                expected,
                r_tdf.shape()
            )));
        }
        let mut vars = Vec::new();
        let mut x = tape.leaf(r_tdf.clone());
        for stage in 0..3 {
            let w = tape.leaf(self.convs[stage].0.clone());
            let b = tape.leaf(self.convs[stage].1.clone());
            let g = tape.leaf(self.gammas[stage].clone());
            let beta = tape.leaf(self.betas[stage].clone());
            vars.extend([w, b, g, beta]);
            x = tape.conv2d(x, w, b, 1, 1)?;
            x = tape.batchnorm(x, g, beta, &mut self.stats[stage], training)?;
            x = tape.leaky_relu(x, 0.1)?;
            if stage < 2 {
                x = tape.maxpool2d(x, 2, 2)?;
            }
        }
        let shape = tape.value(x).shape().to_vec();
        let flat = tape.reshape(x, vec![shape[0], shape[1] * shape[2] * shape[3]])?;
        let fc_w = tape.leaf(self.fc_w.clone());
        let fc_b = tape.leaf(self.fc_b.clone());
        vars.extend([fc_w, fc_b]);
        let logits = tape.linear(flat, fc_w, fc_b)?;
        Ok((logits, vars))
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for ((conv, gamma), beta) in self
            .convs
            .iter_mut()
            .zip(&mut self.gammas)
            .zip(&mut self.betas)
        {
            out.push(&mut conv.0);
            out.push(&mut conv.1);
            out.push(gamma);
            out.push(beta);
        }
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        out
    }

    fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for ((conv, gamma), beta) in self.convs.iter().zip(&self.gammas).zip(&self.betas) {
            out.extend([conv.0.numel(), conv.1.numel(), gamma.numel(), beta.numel()]);
        }
        out.extend([self.fc_w.numel(), self.fc_b.numel()]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, synth_topology, SynthConfig};
    use crate::train::{evaluate, fit, prepare_dataset, split_dataset, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_prepared() -> PreparedDataset {
        let cfg = SynthConfig {
            n_classes: 3,
            instances_per_class: 8,
            temporal_len: 8,
            seed: 21,
            ..SynthConfig::default()
        };
        let data = generate_dataset(&cfg).unwrap();
        prepare_dataset(&data, &synth_topology(), 8).unwrap()
    }

    #[test]
    fn knn_agrees_with_brute_force_oracle() {
        let data = toy_prepared();
        let train: Vec<usize> = (0..24).filter(|i| i % 4 != 0).collect();
        for q in (0..24).filter(|i| i % 4 == 0) {
            let query = data.r_tdf[q].data();
            // oracle: full sort of (distance, index), take 5, majority vote
            // with smallest-label tie break
            let mut all: Vec<(f64, usize)> = train
                .iter()
                .map(|&i| {
                    let d = data.r_tdf[i]
                        .data()
                        .iter()
                        .zip(query)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    (d, i)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut votes = vec![0usize; data.n_classes];
            for &(_, i) in all.iter().take(5) {
                votes[data.labels[i]] += 1;
            }
            let expected = (0..data.n_classes).max_by_key(|&c| (votes[c], usize::MAX - c)).unwrap();
            assert_eq!(
                knn_predict(&data, &train, query, 5).unwrap(),
                expected
            );
        }
    }

    #[test]
    fn knn_on_training_points_is_exact_with_k1() {
        let data = toy_prepared();
        let train: Vec<usize> = (0..24).collect();
        for &i in &train {
            assert_eq!(
                knn_predict(&data, &train, data.r_tdf[i].data(), 1).unwrap(),
                data.labels[i]
            );
        }
    }

    #[test]
    fn gnb_separates_well_separated_gaussians() {
        // two classes with far-apart means, tiny noise
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut r_tdf = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let label = i % 2;
            let center = if label == 0 { -5.0 } else { 5.0 };
            let mut t = Tensor::uniform(&[1, 2, 2], 0.1, &mut rng);
            for v in t.data_mut() {
                *v += center;
            }
            r_tdf.push(t);
            labels.push(label);
        }
        let data = PreparedDataset {
            r_dtf: r_tdf.clone(),
            r_tdf,
            labels,
            n_classes: 2,
            feature_len: 2,
        };
        let train: Vec<usize> = (0..30).collect();
        let test: Vec<usize> = (30..40).collect();
        assert_eq!(gnb_accuracy(&data, &train, &test).unwrap(), 1.0);
    }

    #[test]
    fn gnb_handles_constant_features() {
        // zero-variance feature must not divide by zero thanks to the floor
        let mut r_tdf = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            let label = i % 2;
            r_tdf.push(Tensor::new(vec![2], vec![label as f64, 1.0]).unwrap());
            labels.push(label);
        }
        let data = PreparedDataset {
            r_dtf: r_tdf.clone(),
            r_tdf,
            labels,
            n_classes: 2,
            feature_len: 2,
        };
        let train: Vec<usize> = (0..6).collect();
        let test: Vec<usize> = (6..8).collect();
        assert_eq!(gnb_accuracy(&data, &train, &test).unwrap(), 1.0);
    }

    #[test]
    fn mlp_trains_on_toy_data() {
        let data = toy_prepared();
        let dim = data.r_tdf[0].numel();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mlp = MlpBaseline::new(dim, data.n_classes, &mut rng).unwrap();
        let all: Vec<usize> = (0..data.labels.len()).collect();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = fit(&mut mlp, &data, &all, &all, &cfg, &mut rng).unwrap();
        assert!(
            out.final_train_accuracy > 0.6,
            "mlp failed to fit training data: {}",
            out.final_train_accuracy
        );
    }

    #[test]
    fn cnn_trains_and_evaluates() {
        let cfg = SynthConfig {
            n_classes: 2,
            instances_per_class: 8,
            temporal_len: 8,
            seed: 33,
            ..SynthConfig::default()
        };
        let raw = generate_dataset(&cfg).unwrap();
        let data = prepare_dataset(&raw, &synth_topology(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (train, test) = split_dataset(&raw, 0.7, &mut rng).unwrap();
        let mut cnn = CnnBaseline::new(7, 8, data.feature_len, 2, &mut rng).unwrap();
        let tcfg = TrainConfig {
            epochs: 10,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = fit(&mut cnn, &data, &train, &test, &tcfg, &mut rng).unwrap();
        assert!(out.history.iter().all(|h| h.train_loss.is_finite()));
        let acc = evaluate(&mut cnn, &data, &test, 8).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn cnn_rejects_wrong_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cnn = CnnBaseline::new(7, 8, 8, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bad = Tensor::zeros(&[2, 7, 9, 8]);
        assert!(cnn.forward(&mut tape, &bad, &bad, true).is_err());
    }
}
