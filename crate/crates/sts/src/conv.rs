//! Low-level convolution and pooling kernels used by the tape.
//!
//! Convolution is implemented per sample via im2col followed by a dot-product
//! sweep, which keeps both the forward and backward inner loops contiguous.

/// Static geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvDims {
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Expand one sample (c_in, h, w) into patch rows (h_out*w_out, patch_len)
/// with zero padding.
pub(crate) fn im2col(sample: &[f64], d: &ConvDims, cols: &mut [f64]) {
    debug_assert_eq!(cols.len(), d.out_plane() * d.patch_len());
    let (h, w) = (d.h as isize, d.w as isize);
    let mut idx = 0;
    for oh in 0..d.h_out {
        for ow in 0..d.w_out {
            let top = (oh * d.stride) as isize - d.padding as isize;
            let left = (ow * d.stride) as isize - d.padding as isize;
            for ci in 0..d.c_in {
                let plane = &sample[ci * d.h * d.w..(ci + 1) * d.h * d.w];
                for r in 0..d.kh as isize {
                    let y = top + r;
                    for s in 0..d.kw as isize {
                        let x = left + s;
                        cols[idx] = if y >= 0 && y < h && x >= 0 && x < w {
                            plane[(y * w + x) as usize]
                        } else {
                            0.0
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add patch-row gradients back onto one input sample.
fn col2im_add(dcols: &[f64], d: &ConvDims, dsample: &mut [f64]) {
    let (h, w) = (d.h as isize, d.w as isize);
    let mut idx = 0;
    for oh in 0..d.h_out {
        for ow in 0..d.w_out {
            let top = (oh * d.stride) as isize - d.padding as isize;
            let left = (ow * d.stride) as isize - d.padding as isize;
            for ci in 0..d.c_in {
                let base = ci * d.h * d.w;
                for r in 0..d.kh as isize {
                    let y = top + r;
                    for s in 0..d.kw as isize {
                        let x = left + s;
                        if y >= 0 && y < h && x >= 0 && x < w {
                            dsample[base + (y * w + x) as usize] += dcols[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Forward convolution over a whole batch. `input` is (batch, c_in, h, w),
/// `weight` is (c_out, c_in, kh, kw), `output` is (batch, c_out, h_out, w_out).
pub(crate) fn conv2d_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    d: &ConvDims,
    output: &mut [f64],
) {
    let patch = d.patch_len();
    let plane = d.out_plane();
    let in_sample = d.c_in * d.h * d.w;
    let out_sample = d.c_out * plane;
    let mut cols = vec![0.0; plane * patch];
    for b in 0..d.batch {
        im2col(&input[b * in_sample..(b + 1) * in_sample], d, &mut cols);
        let out = &mut output[b * out_sample..(b + 1) * out_sample];
        for co in 0..d.c_out {
            let wrow = &weight[co * patch..(co + 1) * patch];
            let orow = &mut out[co * plane..(co + 1) * plane];
            for (p, o) in orow.iter_mut().enumerate() {
                let crow = &cols[p * patch..(p + 1) * patch];
                let mut acc = bias[co];
                for k in 0..patch {
                    acc += wrow[k] * crow[k];
                }
                *o = acc;
            }
        }
    }
}

/// Backward convolution: accumulates into `dinput`, `dweight`, `dbias`.
pub(crate) fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
    d: &ConvDims,
    dinput: &mut [f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) {
    let patch = d.patch_len();
    let plane = d.out_plane();
    let in_sample = d.c_in * d.h * d.w;
    let out_sample = d.c_out * plane;
    let mut cols = vec![0.0; plane * patch];
    let mut dcols = vec![0.0; plane * patch];
    for b in 0..d.batch {
        im2col(&input[b * in_sample..(b + 1) * in_sample], d, &mut cols);
        let dy = &dout[b * out_sample..(b + 1) * out_sample];
        dcols.iter_mut().for_each(|v| *v = 0.0);
        for co in 0..d.c_out {
            let wrow = &weight[co * patch..(co + 1) * patch];
            let dwrow = &mut dweight[co * patch..(co + 1) * patch];
            let dyrow = &dy[co * plane..(co + 1) * plane];
            let mut bsum = 0.0;
            for (p, &g) in dyrow.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                bsum += g;
                let crow = &cols[p * patch..(p + 1) * patch];
                let dcrow = &mut dcols[p * patch..(p + 1) * patch];
                for k in 0..patch {
                    dwrow[k] += g * crow[k];
                    dcrow[k] += g * wrow[k];
                }
            }
            dbias[co] += bsum;
        }
        col2im_add(&dcols, d, &mut dinput[b * in_sample..(b + 1) * in_sample]);
    }
}

/// Geometry of a max-pooling op.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolDims {
    pub batch: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub size: usize,
    pub stride: usize,
    pub h_out: usize,
    pub w_out: usize,
}

/// Max pooling over (batch, channels, h, w). Records the flat input index of
/// each window maximum (first occurrence in row-major scan) for the backward
/// pass.
pub(crate) fn maxpool2d_forward(
    input: &[f64],
    d: &PoolDims,
    output: &mut [f64],
    argmax: &mut [usize],
) {
    let in_plane = d.h * d.w;
    let out_plane = d.h_out * d.w_out;
    let mut o = 0;
    for b in 0..d.batch {
        for c in 0..d.channels {
            let base = (b * d.channels + c) * in_plane;
            for oh in 0..d.h_out {
                for ow in 0..d.w_out {
                    let top = oh * d.stride;
                    let left = ow * d.stride;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for r in 0..d.size {
                        for s in 0..d.size {
                            let idx = base + (top + r) * d.w + (left + s);
                            if input[idx] > best {
                                best = input[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    output[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    debug_assert_eq!(o, d.batch * d.channels * out_plane);
}

/// Routes each output gradient to its recorded argmax position.
pub(crate) fn maxpool2d_backward(dout: &[f64], argmax: &[usize], dinput: &mut [f64]) {
    for (g, &idx) in dout.iter().zip(argmax) {
        dinput[idx] += g;
    }
}
