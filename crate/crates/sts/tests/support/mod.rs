//! Brute-force reference implementations shared by the oracle and
//! acceptance test targets. Everything here uses direct nested loops so any
//! indexing or padding mistake in the production kernels shows up as a
//! disagreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sts::tape::Tape;
use sts::tensor::Tensor;

/// Direct convolution: out[b][o][y][x] = bias[o] +
/// sum_{c,ky,kx} input[b][c][y+ky-pad][x+kx-pad] * weight[o][c][ky][kx].
pub fn conv_oracle(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let (b_n, c_in, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (c_out, k) = (weight.shape()[0], weight.shape()[2]);
    let h_out = (h + 2 * pad - k) / stride + 1;
    let w_out = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b_n * c_out * h_out * w_out];
    for b in 0..b_n {
        for o in 0..c_out {
            for y in 0..h_out {
                for x in 0..w_out {
                    let mut acc = bias.data()[o];
                    for c in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = (y * stride + ky) as isize - pad as isize;
                                let sx = (x * stride + kx) as isize - pad as isize;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    let iv = input.data()
                                        [((b * c_in + c) * h + sy as usize) * w + sx as usize];
                                    let wv = weight.data()[((o * c_in + c) * k + ky) * k + kx];
                                    acc += iv * wv;
                                }
                            }
                        }
                    }
                    out[((b * c_out + o) * h_out + y) * w_out + x] = acc;
                }
            }
        }
    }
    out
}

pub fn pool_oracle(input: &Tensor, size: usize, stride: usize) -> Vec<f64> {
    let (b_n, c_n, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let h_out = (h - size) / stride + 1;
    let w_out = (w - size) / stride + 1;
    let mut out = Vec::with_capacity(b_n * c_n * h_out * w_out);
    for b in 0..b_n {
        for c in 0..c_n {
            for y in 0..h_out {
                for x in 0..w_out {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..size {
                        for dx in 0..size {
                            let v = input.data()
                                [((b * c_n + c) * h + y * stride + dy) * w + x * stride + dx];
                            best = best.max(v);
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    out
}

pub fn linear_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, inner) = (x.shape()[0], x.shape()[1]);
    let cols = w.shape()[1];
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = b.data()[c];
            for i in 0..inner {
                acc += x.data()[r * inner + i] * w.data()[i * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs `trials` randomized conv2d shape comparisons; returns the worst
/// absolute disagreement between the tape kernel and the loop oracle.
pub fn conv_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < trials {
        let k = [1, 3, 5, 7][rng.gen_range(0..4)];
        let pad = rng.gen_range(0..=k / 2 + 1);
        let stride = rng.gen_range(1..=2);
        let h = rng.gen_range(k.max(3)..12);
        let w = rng.gen_range(k.max(3)..12);
        // padded extent must still fit the kernel
        if h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        done += 1;
        let b_n = rng.gen_range(1..4);
        let c_in = rng.gen_range(1..4);
        let c_out = rng.gen_range(1..5);
        let input = Tensor::uniform(&[b_n, c_in, h, w], 1.0, &mut rng);
        let weight = Tensor::uniform(&[c_out, c_in, k, k], 1.0, &mut rng);
        let bias = Tensor::uniform(&[c_out], 1.0, &mut rng);
        let expected = conv_oracle(&input, &weight, &bias, stride, pad);

        let mut tape = Tape::new();
        let (x, wv, bv) = (tape.leaf(input), tape.leaf(weight), tape.leaf(bias));
        let out = tape.conv2d(x, wv, bv, stride, pad).unwrap();
        worst = worst.max(max_abs_diff(tape.value(out).data(), &expected));
    }
    worst
}

/// Randomized maxpool2d shape comparisons; returns the worst disagreement.
pub fn pool_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let size = rng.gen_range(1..4);
        let stride = rng.gen_range(1..4);
        let h = rng.gen_range(size..size + 10);
        let w = rng.gen_range(size..size + 10);
        let b_n = rng.gen_range(1..4);
        let c_n = rng.gen_range(1..4);
        let input = Tensor::uniform(&[b_n, c_n, h, w], 1.0, &mut rng);
        let expected = pool_oracle(&input, size, stride);

        let mut tape = Tape::new();
        let x = tape.leaf(input);
        let out = tape.maxpool2d(x, size, stride).unwrap();
        worst = worst.max(max_abs_diff(tape.value(out).data(), &expected));
    }
    worst
}

/// Randomized fully-connected shape comparisons; returns the worst
/// disagreement.
pub fn linear_trials(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let rows = rng.gen_range(1..8);
        let inner = rng.gen_range(1..20);
        let cols = rng.gen_range(1..10);
        let x = Tensor::uniform(&[rows, inner], 1.0, &mut rng);
        let w = Tensor::uniform(&[inner, cols], 1.0, &mut rng);
        let b = Tensor::uniform(&[cols], 1.0, &mut rng);
        let expected = linear_oracle(&x, &w, &b);

        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
        let out = tape.linear(xv, wv, bv).unwrap();
        worst = worst.max(max_abs_diff(tape.value(out).data(), &expected));
    }
    worst
}
