//! Central finite-difference verification of every differentiable operator
//! and of the composed model.
//!
//! The finite-difference side only ever calls forward passes, so it stays
//! independent of the backward implementation it checks.

use crate::error::Result;
use crate::model::{DualStreamModel, ModelConfig};
use crate::tape::{BnStats, Tape};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Smaller step for the composed model: with thousands of activations a
/// probe of size 1e-5 occasionally pushes one across the leaky-ReLU kink or
/// flips a pooling argmax, which corrupts the difference quotient without
/// the gradient being wrong.
pub const FD_STEP_MODEL: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Result of checking one operator (or the whole model).
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// Central finite differences of `loss` with respect to every entry of
/// every tensor in `params`, step `h`.
pub fn finite_diff_grads(
    params: &[Tensor],
    mut loss: impl FnMut(&[Tensor]) -> Result<f64>,
    h: f64,
) -> Result<Vec<Tensor>> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = loss(&work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = loss(&work)?;
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest guarded relative error between analytic and finite-difference
/// gradients. The denominator is floored so that round-off noise on
/// near-zero gradients does not register as a large relative error.
pub fn max_rel_error(analytic: &[Tensor], fd: &[Tensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, f) in analytic.iter().zip(fd) {
        for (&av, &fv) in a.data().iter().zip(f.data()) {
            let denom = av.abs().max(fv.abs()).max(1e-4);
            worst = worst.max((av - fv).abs() / denom);
        }
    }
    worst
}

/// Runs one op check: `build` assembles the tape graph from candidate
/// parameter values and returns the scalar loss node value.
fn check_op(
    name: &str,
    params: Vec<Tensor>,
    build: impl Fn(&[Tensor]) -> Result<(Tape, crate::tape::Var, Vec<crate::tape::Var>)>,
) -> Result<OpCheck> {
    let (mut tape, loss, vars) = build(&params)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v))
        .collect::<Result<Vec<_>>>()?;
    let fd = finite_diff_grads(
        &params,
        |p| {
            let (tape, loss, _) = build(p)?;
            Ok(tape.value(loss).scalar_value())
        },
        FD_STEP,
    )?;
    Ok(OpCheck {
        name: name.to_string(),
        max_rel_err: max_rel_error(&analytic, &fd),
    })
}

/// Random tensor with entries bounded away from zero, for ops with a
/// non-differentiable point at the origin.
fn random_away_from_zero<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let mut t = Tensor::uniform(shape, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < 0.2 {
            *v += if *v >= 0.0 { 0.2 } else { -0.2 };
        }
    }
    t
}

/// Projection loss: sum(out * proj), which exercises every output entry
/// with a distinct weight.
fn projection_loss(
    tape: &mut Tape,
    out: crate::tape::Var,
    proj: &Tensor,
) -> Result<crate::tape::Var> {
    let p = tape.leaf(proj.clone());
    let prod = tape.mul(out, p)?;
    Ok(tape.sum(prod))
}

/// Finite-difference checks for every differentiable operator.
pub fn check_all_ops(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // conv2d
    {
        let x = Tensor::uniform(&[2, 3, 6, 5], 1.0, &mut rng);
        let w = Tensor::uniform(&[4, 3, 3, 3], 1.0, &mut rng);
        let b = Tensor::uniform(&[4], 1.0, &mut rng);
        let proj = Tensor::uniform(&[2, 4, 6, 5], 1.0, &mut rng);
        checks.push(check_op("conv2d", vec![x, w, b], |p| {
            let mut tape = Tape::new();
            let (x, w, b) = (tape.leaf(p[0].clone()), tape.leaf(p[1].clone()), tape.leaf(p[2].clone()));
            let out = tape.conv2d(x, w, b, 1, 1)?;
            let loss = projection_loss(&mut tape, out, &proj)?;
            Ok((tape, loss, vec![x, w, b]))
        })?);
    }

    // maxpool2d (random inputs; window maxima are isolated with
    // overwhelming probability at this seed, which is frozen)
    {
        let x = Tensor::uniform(&[2, 2, 6, 6], 1.0, &mut rng);
        let proj = Tensor::uniform(&[2, 2, 3, 3], 1.0, &mut rng);
        checks.push(check_op("maxpool2d", vec![x], |p| {
            let mut tape = Tape::new();
            let x = tape.leaf(p[0].clone());
            let out = tape.maxpool2d(x, 2, 2)?;
            let loss = projection_loss(&mut tape, out, &proj)?;
            Ok((tape, loss, vec![x]))
        })?);
    }

    // batchnorm, training mode (batch statistics differentiated)
    {
        let x = Tensor::uniform(&[3, 2, 4, 3], 1.0, &mut rng);
        let gamma = Tensor::uniform(&[2], 1.0, &mut rng);
        let beta = Tensor::uniform(&[2], 1.0, &mut rng);
        let proj = Tensor::uniform(&[3, 2, 4, 3], 1.0, &mut rng);
        checks.push(check_op("batchnorm_train", vec![x, gamma, beta], |p| {
            let mut tape = Tape::new();
            let (x, g, b) = (tape.leaf(p[0].clone()), tape.leaf(p[1].clone()), tape.leaf(p[2].clone()));
            let mut stats = BnStats::new(2);
            let out = tape.batchnorm(x, g, b, &mut stats, true)?;
            let loss = projection_loss(&mut tape, out, &proj)?;
            Ok((tape, loss, vec![x, g, b]))
        })?);
    }

    // batchnorm, eval mode (running statistics are constants)
    {
        let x = Tensor::uniform(&[3, 2, 4, 3], 1.0, &mut rng);
        let gamma = Tensor::uniform(&[2], 1.0, &mut rng);
        let beta = Tensor::uniform(&[2], 1.0, &mut rng);
        let proj = Tensor::uniform(&[3, 2, 4, 3], 1.0, &mut rng);
        let mut stats = BnStats::new(2);
        stats.mean = vec![0.3, -0.2];
        stats.var = vec![1.1, 0.7];
        stats.initialized = true;
        checks.push(check_op("batchnorm_eval", vec![x, gamma, beta], move |p| {
            let mut tape = Tape::new();
            let (x, g, b) = (tape.leaf(p[0].clone()), tape.leaf(p[1].clone()), tape.leaf(p[2].clone()));
            let mut stats = stats.clone();
            let out = tape.batchnorm(x, g, b, &mut stats, false)?;
            let loss = projection_loss(&mut tape, out, &proj)?;
            Ok((tape, loss, vec![x, g, b]))
        })?);
    }

    // leaky_relu (inputs bounded away from the kink at 0)
    {
        let x = random_away_from_zero(&[2, 3, 4, 5], &mut rng);
        let proj = Tensor::uniform(&[2, 3, 4, 5], 1.0, &mut rng);
        checks.push(check_op("leaky_relu", vec![x], |p| {
            let mut tape = Tape::new();
            let x = tape.leaf(p[0].clone());
            let out = tape.leaky_relu(x, 0.1)?;
            let loss = projection_loss(&mut tape, out, &proj)?;
            Ok((tape, loss, vec![x]))
        })?);
    }

    // gated linear unit
    {
        let x = Tensor::uniform(&[2, 8, 3, 4], 2.0, &mut rng);
        let proj = Tensor::uniform(&[2, 4, 3, 4], 1.0, &mut rng);
        checks.push(check_op("gated_linear_unit", vec![x], |p| {
            let mut tape = Tape::new();
            let x = tape.leaf(p[0].clone());
            let out = tape.glu(x, 1)?;
            let loss = projection_loss(&mut tape, out, &proj)?;
            Ok((tape, loss, vec![x]))
        })?);
    }

    // fully connected
    {
        let x = Tensor::uniform(&[3, 5], 1.0, &mut rng);
        let w = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let b = Tensor::uniform(&[4], 1.0, &mut rng);
        let proj = Tensor::uniform(&[3, 4], 1.0, &mut rng);
        checks.push(check_op("fully_connected", vec![x, w, b], |p| {
            let mut tape = Tape::new();
            let (x, w, b) = (tape.leaf(p[0].clone()), tape.leaf(p[1].clone()), tape.leaf(p[2].clone()));
            let out = tape.linear(x, w, b)?;
            let loss = projection_loss(&mut tape, out, &proj)?;
            Ok((tape, loss, vec![x, w, b]))
        })?);
    }

    // softmax + NLL
    {
        let logits = Tensor::uniform(&[4, 5], 2.0, &mut rng);
        let mut labels = Tensor::zeros(&[4, 5]);
        for r in 0..4 {
            labels.data_mut()[r * 5 + (r * 2) % 5] = 1.0;
        }
        checks.push(check_op("softmax_nll", vec![logits], |p| {
            let mut tape = Tape::new();
            let z = tape.leaf(p[0].clone());
            let loss = tape.softmax_nll(z, &labels)?;
            Ok((tape, loss, vec![z]))
        })?);
    }

    // concat + reshape plumbing
    {
        let a = Tensor::uniform(&[2, 3, 2, 2], 1.0, &mut rng);
        let b = Tensor::uniform(&[2, 5, 2, 2], 1.0, &mut rng);
        let proj = Tensor::uniform(&[2, 32], 1.0, &mut rng);
        checks.push(check_op("concat_reshape", vec![a, b], |p| {
            let mut tape = Tape::new();
            let (a, b) = (tape.leaf(p[0].clone()), tape.leaf(p[1].clone()));
            let cat = tape.concat(&[a, b], 1)?;
            let flat = tape.reshape(cat, vec![2, 32])?;
            let loss = projection_loss(&mut tape, flat, &proj)?;
            Ok((tape, loss, vec![a, b]))
        })?);
    }

    Ok(checks)
}

/// Small configuration sized so a full-parameter finite-difference sweep of
/// the composed model stays fast.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        num_dims: 3,
        temporal_len: 8,
        feature_len: 6,
        lfe_channels: 4,
        mfe_channels: 8,
        hfe_dim: 8,
        n_classes: 3,
        ..ModelConfig::default()
    }
}

/// Checks every parameter gradient of the composed dual-stream model on a
/// 2-sample batch against central finite differences.
pub fn check_model(config: &ModelConfig, seed: u64) -> Result<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = DualStreamModel::new(config.clone(), &mut rng)?;
    let batch = 2;
    let r_tdf = Tensor::uniform(
        &[batch, config.num_dims, config.temporal_len, config.feature_len],
        1.0,
        &mut rng,
    );
    let r_dtf = Tensor::uniform(
        &[batch, config.temporal_len, config.traversal_len(), config.feature_len],
        1.0,
        &mut rng,
    );
    let mut labels = Tensor::zeros(&[batch, config.n_classes]);
    for r in 0..batch {
        labels.data_mut()[r * config.n_classes + r % config.n_classes] = 1.0;
    }

    let params: Vec<Tensor> = base
        .named_parameters()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();

    let run = |p: &[Tensor]| -> Result<(Tape, crate::tape::Var, Vec<crate::tape::Var>)> {
        let mut model = base.clone();
        for (dst, src) in model.parameters_mut().into_iter().zip(p) {
            *dst = src.clone();
        }
        let mut tape = Tape::new();
        let (logits, vars) = model.forward(&mut tape, &r_tdf, &r_dtf, true)?;
        let loss = tape.softmax_nll(logits, &labels)?;
        Ok((tape, loss, vars))
    };

    let (mut tape, loss, vars) = run(&params)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v))
        .collect::<Result<Vec<_>>>()?;
    let fd = finite_diff_grads(
        &params,
        |p| {
            let (tape, loss, _) = run(p)?;
            Ok(tape.value(loss).scalar_value())
        },
        FD_STEP_MODEL,
    )?;
    Ok(OpCheck {
        name: "dual_stream_model".to_string(),
        max_rel_err: max_rel_error(&analytic, &fd),
    })
}
