//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays the records in reverse creation order (which is a valid reverse
//! topological order, since an op can only reference earlier nodes) and
//! accumulates gradients with `+=` across fan-out.

use crate::conv::{
    conv2d_backward, conv2d_forward, maxpool2d_backward, maxpool2d_forward, ConvDims, PoolDims,
};
use crate::error::{Result, StsError};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Running statistics of one batch-norm layer, owned by the model so they
/// survive across tapes.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![0.0; channels],
            var: vec![0.0; channels],
            initialized: false,
        }
    }
}

pub(crate) const BN_EPSILON: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;

enum Op {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Glu {
        x: Var,
        axis: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    SoftmaxNll {
        logits: Var,
        labels: Tensor,
        probs: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Compute graph for one forward/backward cycle.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(StsError::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push(out, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0 < slope && slope < 1.0) {
            return Err(StsError::Config(format!(
                "leaky relu slope must lie in (0,1), got {slope}"
            )));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(out, Op::LeakyRelu { x, slope }))
    }

    /// Gated linear unit along `axis`: split the extent in half into A and B,
    /// output `A * sigmoid(B)`.
    pub fn glu(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(StsError::Dimension(format!(
                "glu axis {axis} out of range for shape {shape:?}"
            )));
        }
        if shape[axis] % 2 != 0 {
            return Err(StsError::Dimension(format!(
                "glu requires an even extent along axis {axis}, got {}",
                shape[axis]
            )));
        }
        let half = shape[axis] / 2;
        let mut out_shape = shape.clone();
        out_shape[axis] = half;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let data = self.value(x).data();
        let mut out = vec![0.0; outer * half * inner];
        for o in 0..outer {
            let src = o * shape[axis] * inner;
            let dst = o * half * inner;
            for c in 0..half {
                for i in 0..inner {
                    let a = data[src + c * inner + i];
                    let b = data[src + (half + c) * inner + i];
                    out[dst + c * inner + i] = a * sigmoid(b);
                }
            }
        }
        let out = Tensor::new(out_shape, out)?;
        Ok(self.push(out, Op::Glu { x, axis }))
    }

    /// 2-D convolution with zero padding. Accepts (c_in, h, w) or
    /// (batch, c_in, h, w) inputs; the output rank mirrors the input rank.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let (batched, batch, c_in, h, wid) = match xs.len() {
            3 => (false, 1, xs[0], xs[1], xs[2]),
            4 => (true, xs[0], xs[1], xs[2], xs[3]),
            _ => {
                return Err(StsError::Dimension(format!(
                    "conv2d input must have rank 3 or 4, got {:?}",
                    xs
                )))
            }
        };
        if ws.len() != 4 {
            return Err(StsError::Dimension(format!(
                "conv2d kernels must have rank 4, got {:?}",
                ws
            )));
        }
        let (c_out, kc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kc != c_in {
            return Err(StsError::Dimension(format!(
                "conv2d kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if bs != [c_out] {
            return Err(StsError::Dimension(format!(
                "conv2d bias shape {bs:?} does not match {c_out} output channels"
            )));
        }
        if stride < 1 {
            return Err(StsError::Config("conv2d stride must be >= 1".into()));
        }
        if kh > h + 2 * padding || kw > wid + 2 * padding {
            return Err(StsError::Config(format!(
                "conv2d kernel ({kh}x{kw}) larger than padded input ({}x{})",
                h + 2 * padding,
                wid + 2 * padding
            )));
        }
        let h_out = (h + 2 * padding - kh) / stride + 1;
        let w_out = (wid + 2 * padding - kw) / stride + 1;
        if h_out == 0 || w_out == 0 {
            return Err(StsError::Config("conv2d output extent is zero".into()));
        }
        let dims = ConvDims {
            batch,
            c_in,
            h,
            w: wid,
            c_out,
            kh,
            kw,
            stride,
            padding,
            h_out,
            w_out,
        };
        let mut out = vec![0.0; batch * c_out * h_out * w_out];
        conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
            &mut out,
        );
        let out_shape = if batched {
            vec![batch, c_out, h_out, w_out]
        } else {
            vec![c_out, h_out, w_out]
        };
        let out = Tensor::new(out_shape, out)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, dims }))
    }

    /// Max pooling with square windows. Gradient flows to the first
    /// row-major occurrence of each window maximum.
    pub fn maxpool2d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let (batched, batch, channels, h, w) = match xs.len() {
            3 => (false, 1, xs[0], xs[1], xs[2]),
            4 => (true, xs[0], xs[1], xs[2], xs[3]),
            _ => {
                return Err(StsError::Dimension(format!(
                    "maxpool2d input must have rank 3 or 4, got {:?}",
                    xs
                )))
            }
        };
        if size > h || size > w {
            return Err(StsError::Config(format!(
                "maxpool2d window {size} exceeds spatial extent {h}x{w}"
            )));
        }
        if stride < 1 {
            return Err(StsError::Config("maxpool2d stride must be >= 1".into()));
        }
        let h_out = (h - size) / stride + 1;
        let w_out = (w - size) / stride + 1;
        let dims = PoolDims {
            batch,
            channels,
            h,
            w,
            size,
            stride,
            h_out,
            w_out,
        };
        let mut out = vec![0.0; batch * channels * h_out * w_out];
        let mut argmax = vec![0; out.len()];
        maxpool2d_forward(self.value(x).data(), &dims, &mut out, &mut argmax);
        let out_shape = if batched {
            vec![batch, channels, h_out, w_out]
        } else {
            vec![channels, h_out, w_out]
        };
        let out = Tensor::new(out_shape, out)?;
        Ok(self.push(out, Op::MaxPool2d { x, argmax }))
    }

    /// Batch normalization over (batch, channels, h, w). In training mode the
    /// batch statistics are used and `stats` is updated with momentum 0.9; in
    /// eval mode the stored running statistics are used.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats,
        training: bool,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(StsError::Dimension(format!(
                "batchnorm input must have rank 4, got {:?}",
                xs
            )));
        }
        let (batch, channels, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if self.value(gamma).shape() != [channels] || self.value(beta).shape() != [channels] {
            return Err(StsError::Dimension(
                "batchnorm gamma/beta must have one entry per channel".into(),
            ));
        }
        if stats.mean.len() != channels {
            return Err(StsError::Dimension(format!(
                "batchnorm running stats sized for {} channels, input has {channels}",
                stats.mean.len()
            )));
        }
        let per_channel = batch * h * w;
        let (mean, var) = if training {
            if per_channel < 2 {
                return Err(StsError::Config(
                    "batchnorm training mode needs at least 2 values per channel".into(),
                ));
            }
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            let data = self.value(x).data();
            let plane = h * w;
            for c in 0..channels {
                let mut s = 0.0;
                for b in 0..batch {
                    let base = (b * channels + c) * plane;
                    for i in 0..plane {
                        s += data[base + i];
                    }
                }
                let m = s / per_channel as f64;
                let mut v = 0.0;
                for b in 0..batch {
                    let base = (b * channels + c) * plane;
                    for i in 0..plane {
                        let d = data[base + i] - m;
                        v += d * d;
                    }
                }
                mean[c] = m;
                var[c] = v / per_channel as f64;
            }
            if stats.initialized {
                for c in 0..channels {
                    stats.mean[c] = BN_MOMENTUM * stats.mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
                    stats.var[c] = BN_MOMENTUM * stats.var[c] + (1.0 - BN_MOMENTUM) * var[c];
                }
            } else {
                stats.mean.copy_from_slice(&mean);
                stats.var.copy_from_slice(&var);
                stats.initialized = true;
            }
            (mean, var)
        } else {
            if !stats.initialized {
                return Err(StsError::State(
                    "batchnorm eval mode before any training step".into(),
                ));
            }
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let data = self.value(x).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let plane = h * w;
        let mut out = vec![0.0; data.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * plane;
                for i in 0..plane {
                    out[base + i] = g[c] * (data[base + i] - mean[c]) * inv_std[c] + be[c];
                }
            }
        }
        let out = Tensor::new(xs, out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                training,
            },
        ))
    }

    /// Affine map per batch row: (batch, d) x (d, k) + (k).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(StsError::Dimension(format!(
                "linear expects ranks (2,2,1), got ({:?},{:?},{:?})",
                xs, ws, bs
            )));
        }
        let (batch, d) = (xs[0], xs[1]);
        let (wd, k) = (ws[0], ws[1]);
        if wd != d || bs[0] != k {
            return Err(StsError::Dimension(format!(
                "linear mismatch: input ({batch},{d}), weight ({wd},{k}), bias ({})",
                bs[0]
            )));
        }
        let xd = self.value(x).data();
        let wd_ = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; batch * k];
        for r in 0..batch {
            let row = &xd[r * d..(r + 1) * d];
            let orow = &mut out[r * k..(r + 1) * k];
            orow.copy_from_slice(bd);
            for (i, &xv) in row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd_[i * k..(i + 1) * k];
                for j in 0..k {
                    orow[j] += xv * wrow[j];
                }
            }
        }
        let out = Tensor::new(vec![batch, k], out)?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// Mean negative log-likelihood of one-hot `labels` under the softmax of
    /// `logits`. Stabilized by max subtraction.
    pub fn softmax_nll(&mut self, logits: Var, labels: &Tensor) -> Result<Var> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 || labels.shape() != ls.as_slice() {
            return Err(StsError::Dimension(format!(
                "softmax_nll expects matching (batch,k) logits and labels, got {:?} and {:?}",
                ls,
                labels.shape()
            )));
        }
        let (batch, k) = (ls[0], ls[1]);
        if k < 2 {
            return Err(StsError::Input("softmax_nll needs at least 2 classes".into()));
        }
        for r in 0..batch {
            let row = &labels.data()[r * k..(r + 1) * k];
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != k {
                return Err(StsError::Input(format!(
                    "label row {r} is not one-hot"
                )));
            }
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; batch * k];
        let mut loss = 0.0;
        for r in 0..batch {
            let row = &z[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..k {
                let e = (row[j] - max).exp();
                probs[r * k + j] = e;
                denom += e;
            }
            for j in 0..k {
                probs[r * k + j] /= denom;
            }
            let true_class = labels.data()[r * k..(r + 1) * k]
                .iter()
                .position(|&v| v == 1.0)
                .unwrap();
            // log-sum-exp form keeps the loss finite for extreme logits
            loss += denom.ln() + max - row[true_class];
        }
        loss /= batch as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxNll {
                logits,
                labels: labels.clone(),
                probs,
            },
        ))
    }

    /// Concatenate along `axis`; all parts must agree on every other extent.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(StsError::Input("concat of zero tensors".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(StsError::Dimension(format!(
                "concat axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(StsError::Dimension(format!(
                    "concat shape {s:?} incompatible with {first:?} along axis {axis}"
                )));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * total * inner];
        for o in 0..outer {
            let mut offset = 0;
            for &p in parts {
                let ext = self.value(p).shape()[axis];
                let src = &self.value(p).data()[o * ext * inner..(o + 1) * ext * inner];
                let dst = o * total * inner + offset * inner;
                out[dst..dst + ext * inner].copy_from_slice(src);
                offset += ext;
            }
        }
        let out = Tensor::new(out_shape, out)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Reverse pass from a scalar `loss` node. Gradients of every node
    /// reachable from the loss are populated; query them with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(StsError::State("backward on an empty tape".into()));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(StsError::State(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.numel()])
            .collect();
        grads[loss.0][0] = 1.0;
        for idx in (0..=loss.0).rev() {
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = g;
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for (d, &gv) in grads[a.0].iter_mut().zip(g) {
                    *d += gv;
                }
                for (d, &gv) in grads[b.0].iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let av: Vec<f64> = self.value(a).data().to_vec();
                let bv = self.value(b).data();
                for i in 0..g.len() {
                    grads[a.0][i] += g[i] * bv[i];
                }
                for i in 0..g.len() {
                    grads[b.0][i] += g[i] * av[i];
                }
            }
            Op::Scale { x, factor } => {
                for (d, &gv) in grads[x.0].iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            Op::Sum { x } => {
                for d in grads[x.0].iter_mut() {
                    *d += g[0];
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                let dst = &mut grads[x.0];
                for i in 0..g.len() {
                    dst[i] += g[i] * if xv[i] >= 0.0 { 1.0 } else { *slope };
                }
            }
            Op::Glu { x, axis } => {
                let shape = self.value(*x).shape();
                let half = shape[*axis] / 2;
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let xv = self.value(*x).data();
                let dst = &mut grads[x.0];
                for o in 0..outer {
                    let src = o * shape[*axis] * inner;
                    let gof = o * half * inner;
                    for c in 0..half {
                        for i in 0..inner {
                            let a = xv[src + c * inner + i];
                            let b = xv[src + (half + c) * inner + i];
                            let s = sigmoid(b);
                            let gv = g[gof + c * inner + i];
                            dst[src + c * inner + i] += gv * s;
                            dst[src + (half + c) * inner + i] += gv * a * s * (1.0 - s);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, dims } => {
                let (x, w, b) = (*x, *w, *b);
                let dims = *dims;
                let xv = self.value(x).data().to_vec();
                let wv = self.value(w).data().to_vec();
                let mut dx = std::mem::take(&mut grads[x.0]);
                let mut dw = std::mem::take(&mut grads[w.0]);
                let mut db = std::mem::take(&mut grads[b.0]);
                conv2d_backward(&xv, &wv, g, &dims, &mut dx, &mut dw, &mut db);
                grads[x.0] = dx;
                grads[w.0] = dw;
                grads[b.0] = db;
            }
            Op::MaxPool2d { x, argmax } => {
                maxpool2d_backward(g, argmax, &mut grads[x.0]);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                training,
            } => {
                let shape = self.value(*x).shape();
                let (batch, channels, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let n = (batch * plane) as f64;
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                for c in 0..channels {
                    let mut dbeta = 0.0;
                    let mut dgamma = 0.0;
                    let mut dxhat_sum = 0.0;
                    let mut dxhat_xhat_sum = 0.0;
                    for b in 0..batch {
                        let base = (b * channels + c) * plane;
                        for i in 0..plane {
                            let go = g[base + i];
                            let xhat = (xv[base + i] - mean[c]) * inv_std[c];
                            dbeta += go;
                            dgamma += go * xhat;
                            let dxhat = go * gv[c];
                            dxhat_sum += dxhat;
                            dxhat_xhat_sum += dxhat * xhat;
                        }
                    }
                    grads[beta.0][c] += dbeta;
                    grads[gamma.0][c] += dgamma;
                    let dst = &mut grads[x.0];
                    if *training {
                        for b in 0..batch {
                            let base = (b * channels + c) * plane;
                            for i in 0..plane {
                                let xhat = (xv[base + i] - mean[c]) * inv_std[c];
                                let dxhat = g[base + i] * gv[c];
                                dst[base + i] += inv_std[c]
                                    * (dxhat - dxhat_sum / n - xhat * dxhat_xhat_sum / n);
                            }
                        }
                    } else {
                        // running stats are constants in eval mode
                        let scale = gv[c] * inv_std[c];
                        for b in 0..batch {
                            let base = (b * channels + c) * plane;
                            for i in 0..plane {
                                dst[base + i] += g[base + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (batch, d) = (xs[0], xs[1]);
                let k = self.value(*w).shape()[1];
                let go = g[0..batch * k].to_vec();
                let xv = self.value(*x).data().to_vec();
                let wv = self.value(*w).data().to_vec();
                {
                    let dst = &mut grads[b.0];
                    for r in 0..batch {
                        for j in 0..k {
                            dst[j] += go[r * k + j];
                        }
                    }
                }
                {
                    let dst = &mut grads[w.0];
                    for r in 0..batch {
                        let xrow = &xv[r * d..(r + 1) * d];
                        let grow = &go[r * k..(r + 1) * k];
                        for (i, &xiv) in xrow.iter().enumerate() {
                            if xiv == 0.0 {
                                continue;
                            }
                            let wrow = &mut dst[i * k..(i + 1) * k];
                            for j in 0..k {
                                wrow[j] += xiv * grow[j];
                            }
                        }
                    }
                }
                {
                    let dst = &mut grads[x.0];
                    for r in 0..batch {
                        let grow = &go[r * k..(r + 1) * k];
                        let xrow = &mut dst[r * d..(r + 1) * d];
                        for i in 0..d {
                            let wrow = &wv[i * k..(i + 1) * k];
                            let mut acc = 0.0;
                            for j in 0..k {
                                acc += grow[j] * wrow[j];
                            }
                            xrow[i] += acc;
                        }
                    }
                }
            }
            Op::SoftmaxNll {
                logits,
                labels,
                probs,
            } => {
                let shape = self.value(*logits).shape();
                let batch = shape[0] as f64;
                let dst = &mut grads[logits.0];
                let scale = g[0] / batch;
                for i in 0..dst.len() {
                    dst[i] += scale * (probs[i] - labels.data()[i]);
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[idx].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let ext = self.value(p).shape()[*axis];
                    let dst = &mut grads[p.0];
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        let d = o * ext * inner;
                        for i in 0..ext * inner {
                            dst[d + i] += g[src + i];
                        }
                    }
                    offset += ext;
                }
            }
            Op::Reshape { x } => {
                for (d, &gv) in grads[x.0].iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }
    }

    /// Gradient of the last backward pass with respect to `v`. Nodes not
    /// reachable from the loss report an all-zero gradient.
    pub fn grad(&self, v: Var) -> Result<Tensor> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| StsError::State("grad queried before backward".into()))?;
        Tensor::new(self.value(v).shape().to_vec(), grads[v.0].clone())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
