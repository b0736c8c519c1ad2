//! Bias-corrected Adam.

use crate::error::{Result, StsError};
use crate::tensor::Tensor;

/// Optimizer state: one first/second moment buffer per parameter, in the
/// same order the parameters are handed to [`AdamState::step`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(param_sizes: &[usize], lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            epsilon: 1e-8,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over all parameters. `params` and `grads` must be aligned
    /// with the sizes this state was built from.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(StsError::Dimension(format!(
                "adam state holds {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if p.numel() != self.m[i].len() || grads[i].numel() != self.m[i].len() {
                return Err(StsError::Dimension(format!(
                    "adam parameter {i}: state size {} vs param {} / grad {}",
                    self.m[i].len(),
                    p.numel(),
                    grads[i].numel()
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = grads[i].data();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                pd[j] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
