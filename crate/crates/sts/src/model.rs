//! The dual-stream convolutional classifier.
//!
//! Each enabled stream runs: LFE (large-kernel conv + BN + LReLU), then the
//! multi-range MFE stage producing short/medium/long-range features at 1x,
//! 1/2 and 1/4 resolution (zoom-in max-pooling between ranges, one shared
//! encoder applied at both the medium and long depth, an inception-style
//! four-branch block at the long range), then an optional gating module per
//! range (1x1 conv to twice the width followed by a gated linear unit).
//! The gated features of all ranges and streams are flattened, concatenated
//! and pushed through a shared fully connected high-level feature extractor
//! and classifier.

use crate::checkpoint::Checkpoint;
use crate::error::{Result, StsError};
use crate::tape::{BnStats, Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Structural dimensions m of the input sequences.
    pub num_dims: usize,
    /// Fixed temporal length T after resampling.
    pub temporal_len: usize,
    /// Feature vector length f.
    pub feature_len: usize,
    pub lfe_channels: usize,
    pub mfe_channels: usize,
    pub lfe_kernel: usize,
    pub mfe_kernel: usize,
    pub inception_kernels: Vec<usize>,
    pub zi_size: usize,
    pub hfe_dim: usize,
    pub n_classes: usize,
    pub enable_gating: bool,
    pub enable_structural_stream: bool,
    pub enable_temporal_stream: bool,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_dims: 7,
            temporal_len: 32,
            feature_len: 8,
            lfe_channels: 16,
            mfe_channels: 32,
            lfe_kernel: 7,
            mfe_kernel: 3,
            inception_kernels: vec![1, 3, 5, 7],
            zi_size: 2,
            hfe_dim: 500,
            n_classes: 10,
            enable_gating: true,
            enable_structural_stream: true,
            enable_temporal_stream: true,
            leaky_slope: 0.1,
        }
    }
}

impl ModelConfig {
    /// Spatial height of the structural stream: the Euler tour length.
    pub fn traversal_len(&self) -> usize {
        2 * self.num_dims - 1
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enable_temporal_stream && !self.enable_structural_stream {
            return Err(StsError::Config("both streams disabled".into()));
        }
        if self.hfe_dim < self.n_classes {
            return Err(StsError::Config(format!(
                "hfe_dim {} smaller than n_classes {}",
                self.hfe_dim, self.n_classes
            )));
        }
        if self.n_classes < 2 {
            return Err(StsError::Config("need at least 2 classes".into()));
        }
        if self.mfe_channels % self.inception_kernels.len() != 0 {
            return Err(StsError::Config(format!(
                "mfe_channels {} not divisible by {} inception branches",
                self.mfe_channels,
                self.inception_kernels.len()
            )));
        }
        if self.lfe_kernel % 2 == 0 || self.mfe_kernel % 2 == 0 {
            return Err(StsError::Config(
                "lfe/mfe kernel sizes must be odd for same-padding".into(),
            ));
        }
        if self.inception_kernels.iter().any(|k| k % 2 == 0) {
            return Err(StsError::Config(
                "inception kernel sizes must be odd for same-padding".into(),
            ));
        }
        for (h, w, what) in [
            (self.temporal_len, self.feature_len, "temporal"),
            (self.traversal_len(), self.feature_len, "structural"),
        ] {
            let h1 = pooled(h, self.zi_size);
            let w1 = pooled(w, self.zi_size);
            if h1 < self.zi_size || w1 < self.zi_size {
                return Err(StsError::Config(format!(
                    "{what} stream input {h}x{w} too small for two zoom-in poolings"
                )));
            }
        }
        Ok(())
    }
}

fn pooled(extent: usize, size: usize) -> usize {
    (extent - size) / size + 1
}

#[derive(Clone, Debug)]
struct ConvParams {
    weight: Tensor,
    bias: Tensor,
}

impl ConvParams {
    fn init<R: Rng>(c_out: usize, c_in: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        ConvParams {
            weight: Tensor::uniform(&[c_out, c_in, kernel, kernel], bound, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: ConvParams,
    gamma: Tensor,
    beta: Tensor,
    stats: BnStats,
}

impl ConvBn {
    fn init<R: Rng>(c_out: usize, c_in: usize, kernel: usize, rng: &mut R) -> Self {
        ConvBn {
            conv: ConvParams::init(c_out, c_in, kernel, rng),
            gamma: Tensor::filled(&[c_out], 1.0),
            beta: Tensor::zeros(&[c_out]),
            stats: BnStats::new(c_out),
        }
    }
}

/// Bound tape vars of one ConvBn block, reusable at several application
/// sites so shared parameters accumulate gradient from each site.
#[derive(Clone, Copy)]
struct ConvBnVars {
    weight: Var,
    bias: Var,
    gamma: Var,
    beta: Var,
}

#[derive(Clone, Debug)]
struct StreamParams {
    lfe: ConvBn,
    smfe: Vec<ConvBn>,
    se: ConvBn,
    mmfe: ConvBn,
    lmfe: Vec<ConvBn>,
    gates: Option<Vec<ConvParams>>,
}

impl StreamParams {
    fn init<R: Rng>(cfg: &ModelConfig, in_channels: usize, rng: &mut R) -> Self {
        let lc = cfg.lfe_channels;
        let mc = cfg.mfe_channels;
        let branch = mc / cfg.inception_kernels.len();
        StreamParams {
            lfe: ConvBn::init(lc, in_channels, cfg.lfe_kernel, rng),
            smfe: vec![
                ConvBn::init(mc, lc, cfg.mfe_kernel, rng),
                ConvBn::init(mc, mc, cfg.mfe_kernel, rng),
            ],
            se: ConvBn::init(lc, lc, cfg.mfe_kernel, rng),
            mmfe: ConvBn::init(mc, lc, cfg.mfe_kernel, rng),
            lmfe: cfg
                .inception_kernels
                .iter()
                .map(|&k| ConvBn::init(branch, lc, k, rng))
                .collect(),
            gates: if cfg.enable_gating {
                Some(
                    (0..3)
                        .map(|_| ConvParams::init(2 * mc, mc, 1, rng))
                        .collect(),
                )
            } else {
                None
            },
        }
    }
}

const GATE_NAMES: [&str; 3] = ["s", "m", "l"];

/// The full model: up to two streams plus the shared HFE and classifier.
#[derive(Clone, Debug)]
pub struct DualStreamModel {
    pub config: ModelConfig,
    temporal: Option<StreamParams>,
    structural: Option<StreamParams>,
    hfe_weight: Tensor,
    hfe_bias: Tensor,
    cls_weight: Tensor,
    cls_bias: Tensor,
}

/// (short, medium, long) feature map shapes (channels, h, w) of one stream.
pub fn stream_feature_shapes(
    cfg: &ModelConfig,
    h: usize,
    w: usize,
) -> ([usize; 3], [usize; 3], [usize; 3]) {
    let mc = cfg.mfe_channels;
    let (h1, w1) = (pooled(h, cfg.zi_size), pooled(w, cfg.zi_size));
    let (h2, w2) = (pooled(h1, cfg.zi_size), pooled(w1, cfg.zi_size));
    ([mc, h, w], [mc, h1, w1], [mc, h2, w2])
}

fn stream_flat_dim(cfg: &ModelConfig, h: usize, w: usize) -> usize {
    let (s, m, l) = stream_feature_shapes(cfg, h, w);
    [s, m, l].iter().map(|d| d[0] * d[1] * d[2]).sum()
}

/// Width of the flattened feature vector entering the HFE.
pub fn hfe_input_dim(cfg: &ModelConfig) -> usize {
    let mut dim = 0;
    if cfg.enable_temporal_stream {
        dim += stream_flat_dim(cfg, cfg.temporal_len, cfg.feature_len);
    }
    if cfg.enable_structural_stream {
        dim += stream_flat_dim(cfg, cfg.traversal_len(), cfg.feature_len);
    }
    dim
}

/// Analytic parameter count as a function of the config alone.
pub fn expected_param_count(cfg: &ModelConfig) -> usize {
    let conv = |c_out: usize, c_in: usize, k: usize| c_out * c_in * k * k + c_out;
    let conv_bn = |c_out: usize, c_in: usize, k: usize| conv(c_out, c_in, k) + 2 * c_out;
    let lc = cfg.lfe_channels;
    let mc = cfg.mfe_channels;
    let branch = mc / cfg.inception_kernels.len();
    let stream = |in_channels: usize| {
        let mut n = conv_bn(lc, in_channels, cfg.lfe_kernel);
        n += conv_bn(mc, lc, cfg.mfe_kernel) + conv_bn(mc, mc, cfg.mfe_kernel);
        n += conv_bn(lc, lc, cfg.mfe_kernel); // shared encoder, stored once
        n += conv_bn(mc, lc, cfg.mfe_kernel);
        n += cfg
            .inception_kernels
            .iter()
            .map(|&k| conv_bn(branch, lc, k))
            .sum::<usize>();
        if cfg.enable_gating {
            n += 3 * conv(2 * mc, mc, 1);
        }
        n
    };
    let mut n = 0;
    if cfg.enable_temporal_stream {
        n += stream(cfg.num_dims);
    }
    if cfg.enable_structural_stream {
        n += stream(cfg.temporal_len);
    }
    n += hfe_input_dim(cfg) * cfg.hfe_dim + cfg.hfe_dim;
    n += cfg.hfe_dim * cfg.n_classes + cfg.n_classes;
    n
}

impl DualStreamModel {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let temporal = config
            .enable_temporal_stream
            .then(|| StreamParams::init(&config, config.num_dims, rng));
        let structural = config
            .enable_structural_stream
            .then(|| StreamParams::init(&config, config.temporal_len, rng));
        let d = hfe_input_dim(&config);
        let hfe_bound = (6.0 / d as f64).sqrt();
        let cls_bound = (6.0 / config.hfe_dim as f64).sqrt();
        Ok(DualStreamModel {
            hfe_weight: Tensor::uniform(&[d, config.hfe_dim], hfe_bound, rng),
            hfe_bias: Tensor::zeros(&[config.hfe_dim]),
            cls_weight: Tensor::uniform(&[config.hfe_dim, config.n_classes], cls_bound, rng),
            cls_bias: Tensor::zeros(&[config.n_classes]),
            temporal,
            structural,
            config,
        })
    }

    fn streams(&self) -> Vec<(&'static str, &StreamParams)> {
        let mut v = Vec::new();
        if let Some(s) = &self.temporal {
            v.push(("temporal", s));
        }
        if let Some(s) = &self.structural {
            v.push(("structural", s));
        }
        v
    }

    /// Trainable parameters in a fixed traversal order, with stable
    /// hierarchical names. Running batch-norm statistics are not included
    /// (see [`DualStreamModel::save_checkpoint`]).
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        fn push_conv<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: String, c: &'a ConvParams) {
            out.push((format!("{prefix}.weight"), &c.weight));
            out.push((format!("{prefix}.bias"), &c.bias));
        }
        fn push_conv_bn<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: String, c: &'a ConvBn) {
            out.push((format!("{prefix}.conv.weight"), &c.conv.weight));
            out.push((format!("{prefix}.conv.bias"), &c.conv.bias));
            out.push((format!("{prefix}.bn.gamma"), &c.gamma));
            out.push((format!("{prefix}.bn.beta"), &c.beta));
        }
        let mut out = Vec::new();
        for (name, s) in self.streams() {
            push_conv_bn(&mut out, format!("{name}.lfe"), &s.lfe);
            for (i, b) in s.smfe.iter().enumerate() {
                push_conv_bn(&mut out, format!("{name}.smfe.{i}"), b);
            }
            push_conv_bn(&mut out, format!("{name}.se"), &s.se);
            push_conv_bn(&mut out, format!("{name}.mmfe"), &s.mmfe);
            for (i, b) in s.lmfe.iter().enumerate() {
                push_conv_bn(&mut out, format!("{name}.lmfe.{i}"), b);
            }
            if let Some(gates) = &s.gates {
                for (g, r) in gates.iter().zip(GATE_NAMES) {
                    push_conv(&mut out, format!("{name}.gate.{r}.conv"), g);
                }
            }
        }
        out.push(("hfe.weight".into(), &self.hfe_weight));
        out.push(("hfe.bias".into(), &self.hfe_bias));
        out.push(("cls.weight".into(), &self.cls_weight));
        out.push(("cls.bias".into(), &self.cls_bias));
        out
    }

    /// Mutable view of the trainable parameters, same order as
    /// [`DualStreamModel::named_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        let mut streams: Vec<&mut StreamParams> = Vec::new();
        if let Some(s) = &mut self.temporal {
            streams.push(s);
        }
        if let Some(s) = &mut self.structural {
            streams.push(s);
        }
        for s in streams {
            for b in std::iter::once(&mut s.lfe)
                .chain(s.smfe.iter_mut())
                .chain(std::iter::once(&mut s.se))
                .chain(std::iter::once(&mut s.mmfe))
                .chain(s.lmfe.iter_mut())
            {
                out.push(&mut b.conv.weight);
                out.push(&mut b.conv.bias);
                out.push(&mut b.gamma);
                out.push(&mut b.beta);
            }
            if let Some(gates) = &mut s.gates {
                for g in gates {
                    out.push(&mut g.weight);
                    out.push(&mut g.bias);
                }
            }
        }
        out.push(&mut self.hfe_weight);
        out.push(&mut self.hfe_bias);
        out.push(&mut self.cls_weight);
        out.push(&mut self.cls_bias);
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.named_parameters()
            .iter()
            .map(|(_, t)| t.numel())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// Forward pass over a batch. Returns the logits node and the tape vars
    /// of all trainable parameters in [`DualStreamModel::named_parameters`]
    /// order (for pulling gradients after backward).
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        r_tdf: &Tensor,
        r_dtf: &Tensor,
        training: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let cfg = self.config.clone();
        let batch = check_batch_shapes(&cfg, r_tdf, r_dtf)?;
        let mut param_vars = Vec::new();
        let mut flat_parts: Vec<Var> = Vec::new();
        let mut streams: Vec<(&mut StreamParams, &Tensor)> = Vec::new();
        if let Some(s) = &mut self.temporal {
            streams.push((s, r_tdf));
        }
        if let Some(s) = &mut self.structural {
            streams.push((s, r_dtf));
        }
        for (stream, input) in streams {
            let x = tape.leaf(input.clone());
            let flat = stream_forward(tape, stream, x, &cfg, batch, training, &mut param_vars)?;
            flat_parts.push(flat);
        }
        let features = if flat_parts.len() == 1 {
            flat_parts[0]
        } else {
            tape.concat(&flat_parts, 1)?
        };
        let hfe_w = tape.leaf(self.hfe_weight.clone());
        let hfe_b = tape.leaf(self.hfe_bias.clone());
        let cls_w = tape.leaf(self.cls_weight.clone());
        let cls_b = tape.leaf(self.cls_bias.clone());
        param_vars.extend([hfe_w, hfe_b, cls_w, cls_b]);
        let high = tape.linear(features, hfe_w, hfe_b)?;
        let high = tape.leaky_relu(high, cfg.leaky_slope)?;
        let logits = tape.linear(high, cls_w, cls_b)?;
        Ok((logits, param_vars))
    }

    /// Full state (trainable parameters plus batch-norm running statistics)
    /// as a checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (name, t) in self.named_parameters() {
            ck.insert(&name, t);
        }
        for (prefix, b) in self.conv_bn_blocks() {
            ck.insert(
                &format!("{prefix}.bn.running_mean"),
                &Tensor::new(vec![b.stats.mean.len()], b.stats.mean.clone()).unwrap(),
            );
            ck.insert(
                &format!("{prefix}.bn.running_var"),
                &Tensor::new(vec![b.stats.var.len()], b.stats.var.clone()).unwrap(),
            );
            ck.insert(
                &format!("{prefix}.bn.initialized"),
                &Tensor::scalar(if b.stats.initialized { 1.0 } else { 0.0 }),
            );
        }
        ck
    }

    fn conv_bn_blocks(&self) -> Vec<(String, &ConvBn)> {
        let mut out = Vec::new();
        for (name, s) in self.streams() {
            out.push((format!("{name}.lfe"), &s.lfe));
            for (i, b) in s.smfe.iter().enumerate() {
                out.push((format!("{name}.smfe.{i}"), b));
            }
            out.push((format!("{name}.se"), &s.se));
            out.push((format!("{name}.mmfe"), &s.mmfe));
            for (i, b) in s.lmfe.iter().enumerate() {
                out.push((format!("{name}.lmfe.{i}"), b));
            }
        }
        out
    }

    /// Restores every trainable parameter and batch-norm statistic from a
    /// checkpoint produced by a model of the same configuration.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let names: Vec<String> = self
            .named_parameters()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (name, param) in names.iter().zip(self.parameters_mut()) {
            let t = ck.get(name)?;
            if t.shape() != param.shape() {
                return Err(StsError::Dimension(format!(
                    "checkpoint parameter '{name}' has shape {:?}, model expects {:?}",
                    t.shape(),
                    param.shape()
                )));
            }
            *param = t.clone();
        }
        let prefixes: Vec<String> = self
            .conv_bn_blocks()
            .into_iter()
            .map(|(p, _)| p)
            .collect();
        for prefix in prefixes {
            let mean = ck.get(&format!("{prefix}.bn.running_mean"))?.clone();
            let var = ck.get(&format!("{prefix}.bn.running_var"))?.clone();
            let init = ck.get(&format!("{prefix}.bn.initialized"))?.scalar_value();
            let b = self.conv_bn_block_mut(&prefix);
            b.stats.mean = mean.data().to_vec();
            b.stats.var = var.data().to_vec();
            b.stats.initialized = init != 0.0;
        }
        Ok(())
    }

    fn conv_bn_block_mut(&mut self, prefix: &str) -> &mut ConvBn {
        let (stream_name, rest) = prefix.split_once('.').unwrap();
        let s = match stream_name {
            "temporal" => self.temporal.as_mut().unwrap(),
            _ => self.structural.as_mut().unwrap(),
        };
        match rest {
            "lfe" => &mut s.lfe,
            "se" => &mut s.se,
            "mmfe" => &mut s.mmfe,
            other => {
                let (block, idx) = other.split_once('.').unwrap();
                let idx: usize = idx.parse().unwrap();
                match block {
                    "smfe" => &mut s.smfe[idx],
                    _ => &mut s.lmfe[idx],
                }
            }
        }
    }
}

fn check_batch_shapes(cfg: &ModelConfig, r_tdf: &Tensor, r_dtf: &Tensor) -> Result<usize> {
    let ts = r_tdf.shape();
    let ss = r_dtf.shape();
    if ts.len() != 4 || ss.len() != 4 || ts[0] != ss[0] {
        return Err(StsError::Dimension(format!(
            "expected batched rank-4 inputs with equal batch, got {ts:?} and {ss:?}"
        )));
    }
    if ts[1..] != [cfg.num_dims, cfg.temporal_len, cfg.feature_len] {
        return Err(StsError::Dimension(format!(
            "temporal input {ts:?} does not match config (m={}, T={}, f={})",
            cfg.num_dims, cfg.temporal_len, cfg.feature_len
        )));
    }
    if ss[1..] != [cfg.temporal_len, cfg.traversal_len(), cfg.feature_len] {
        return Err(StsError::Dimension(format!(
            "structural input {ss:?} does not match config (T={}, 2m-1={}, f={})",
            cfg.temporal_len,
            cfg.traversal_len(),
            cfg.feature_len
        )));
    }
    Ok(ts[0])
}

fn bind_conv_bn(tape: &mut Tape, block: &ConvBn, vars: &mut Vec<Var>) -> ConvBnVars {
    let weight = tape.leaf(block.conv.weight.clone());
    let bias = tape.leaf(block.conv.bias.clone());
    let gamma = tape.leaf(block.gamma.clone());
    let beta = tape.leaf(block.beta.clone());
    vars.extend([weight, bias, gamma, beta]);
    ConvBnVars {
        weight,
        bias,
        gamma,
        beta,
    }
}

fn apply_conv_bn(
    tape: &mut Tape,
    v: ConvBnVars,
    stats: &mut BnStats,
    x: Var,
    kernel: usize,
    slope: f64,
    training: bool,
) -> Result<Var> {
    let y = tape.conv2d(x, v.weight, v.bias, 1, kernel / 2)?;
    let y = tape.batchnorm(y, v.gamma, v.beta, stats, training)?;
    tape.leaky_relu(y, slope)
}

fn stream_forward(
    tape: &mut Tape,
    stream: &mut StreamParams,
    x: Var,
    cfg: &ModelConfig,
    batch: usize,
    training: bool,
    param_vars: &mut Vec<Var>,
) -> Result<Var> {
    let slope = cfg.leaky_slope;
    let zi = cfg.zi_size;
    // bind every parameter of the stream up front, in naming order
    let lfe = bind_conv_bn(tape, &stream.lfe, param_vars);
    let smfe: Vec<ConvBnVars> = stream
        .smfe
        .iter()
        .map(|b| bind_conv_bn(tape, b, param_vars))
        .collect();
    let se = bind_conv_bn(tape, &stream.se, param_vars);
    let mmfe = bind_conv_bn(tape, &stream.mmfe, param_vars);
    let lmfe: Vec<ConvBnVars> = stream
        .lmfe
        .iter()
        .map(|b| bind_conv_bn(tape, b, param_vars))
        .collect();
    let gates: Option<Vec<(Var, Var)>> = stream.gates.as_ref().map(|gs| {
        gs.iter()
            .map(|g| {
                let w = tape.leaf(g.weight.clone());
                let b = tape.leaf(g.bias.clone());
                param_vars.extend([w, b]);
                (w, b)
            })
            .collect()
    });

    let x_low = apply_conv_bn(
        tape,
        lfe,
        &mut stream.lfe.stats,
        x,
        cfg.lfe_kernel,
        slope,
        training,
    )?;

    // short range: two conv blocks at full resolution
    let mut feat_s = x_low;
    for (v, b) in smfe.iter().zip(stream.smfe.iter_mut()) {
        feat_s = apply_conv_bn(tape, *v, &mut b.stats, feat_s, cfg.mfe_kernel, slope, training)?;
    }

    // medium range: zoom in, shared encoder, one conv block
    let zi1 = tape.maxpool2d(x_low, zi, zi)?;
    let x_m = apply_conv_bn(
        tape,
        se,
        &mut stream.se.stats,
        zi1,
        cfg.mfe_kernel,
        slope,
        training,
    )?;
    let feat_m = apply_conv_bn(
        tape,
        mmfe,
        &mut stream.mmfe.stats,
        x_m,
        cfg.mfe_kernel,
        slope,
        training,
    )?;

    // long range: zoom in again, the same shared encoder (same tape vars,
    // so its gradients accumulate from both depths), inception branches
    let zi2 = tape.maxpool2d(x_m, zi, zi)?;
    let x_l = apply_conv_bn(
        tape,
        se,
        &mut stream.se.stats,
        zi2,
        cfg.mfe_kernel,
        slope,
        training,
    )?;
    let mut branches = Vec::with_capacity(stream.lmfe.len());
    for ((v, b), &k) in lmfe
        .iter()
        .zip(stream.lmfe.iter_mut())
        .zip(&cfg.inception_kernels)
    {
        branches.push(apply_conv_bn(tape, *v, &mut b.stats, x_l, k, slope, training)?);
    }
    let feat_l = tape.concat(&branches, 1)?;

    // per-range gating
    let mut flat_parts = Vec::with_capacity(3);
    for (i, feat) in [feat_s, feat_m, feat_l].into_iter().enumerate() {
        let gated = match &gates {
            Some(gs) => {
                let (w, b) = gs[i];
                let expanded = tape.conv2d(feat, w, b, 1, 0)?;
                tape.glu(expanded, 1)?
            }
            None => feat,
        };
        let numel: usize = tape.value(gated).shape()[1..].iter().product();
        flat_parts.push(tape.reshape(gated, vec![batch, numel])?);
    }
    tape.concat(&flat_parts, 1)
}
