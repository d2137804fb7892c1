//! Stateless layer kernels on batch-major buffers (`B x C x H x W`).
//!
//! Every forward has a matching backward that takes the upstream gradient and
//! returns or accumulates the gradients of its inputs and parameters.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    fn patch(&self) -> usize {
        self.in_channels * TAPS
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.plane()
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.plane()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch()
    }
}

/// Unrolls one `C x H x W` image into a `(C*9) x (H*W)` patch matrix, zero padded by 1.
fn im2col<T: Scalar>(image: &[T], s: &ConvShape, cols: &mut [T]) {
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    for ci in 0..s.in_channels {
        let src = &image[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a patch matrix back into an image gradient.
fn col2im<T: Scalar>(cols: &[T], s: &ConvShape, image: &mut [T]) {
    let (h, w) = (s.height, s.width);
    let hw = h * w;
    for ci in 0..s.in_channels {
        let dst = &mut image[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst_row[sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1. `weight` is `out x (in*9)`.
pub fn conv_forward<T: Scalar>(input: &[T], batch: usize, s: &ConvShape, weight: &[T], bias: &[T]) -> Vec<T> {
    let (k, hw) = (s.patch(), s.plane());
    let mut out = vec![T::zero(); batch * s.output_len()];
    let mut cols = vec![T::zero(); k * hw];
    for b in 0..batch {
        im2col(&input[b * s.input_len()..(b + 1) * s.input_len()], s, &mut cols);
        let dst = &mut out[b * s.output_len()..(b + 1) * s.output_len()];
        for (co, row) in dst.chunks_exact_mut(hw).enumerate() {
            row.fill(bias[co]);
        }
        T::gemm(
            s.out_channels,
            k,
            hw,
            T::one(),
            weight,
            k as isize,
            1,
            &cols,
            hw as isize,
            1,
            T::one(),
            dst,
            hw as isize,
            1,
        );
    }
    out
}

/// Accumulates weight and bias gradients into `dweight`/`dbias` and returns
/// the input gradient when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    input: &[T],
    dout: &[T],
    batch: usize,
    s: &ConvShape,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    let (k, hw) = (s.patch(), s.plane());
    let mut cols = vec![T::zero(); k * hw];
    let mut dcols = vec![T::zero(); if want_input { k * hw } else { 0 }];
    let mut dinput = if want_input {
        Some(vec![T::zero(); batch * s.input_len()])
    } else {
        None
    };
    for b in 0..batch {
        im2col(&input[b * s.input_len()..(b + 1) * s.input_len()], s, &mut cols);
        let g = &dout[b * s.output_len()..(b + 1) * s.output_len()];
        for (co, row) in g.chunks_exact(hw).enumerate() {
            dbias[co] += row.iter().copied().sum::<T>();
        }
        // dW += dY * cols^T
        T::gemm(
            s.out_channels,
            hw,
            k,
            T::one(),
            g,
            hw as isize,
            1,
            &cols,
            1,
            hw as isize,
            T::one(),
            dweight,
            k as isize,
            1,
        );
        if let Some(dinput) = dinput.as_mut() {
            // dcols = W^T * dY
            T::gemm(
                k,
                s.out_channels,
                hw,
                T::one(),
                weight,
                1,
                k as isize,
                g,
                hw as isize,
                1,
                T::zero(),
                &mut dcols,
                hw as isize,
                1,
            );
            col2im(&dcols, s, &mut dinput[b * s.input_len()..(b + 1) * s.input_len()]);
        }
    }
    dinput
}

pub fn relu_forward<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// `output` is the post-activation value from the forward pass.
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl PoolShape {
    pub fn out_height(&self) -> usize {
        self.height / 2
    }

    pub fn out_width(&self) -> usize {
        self.width / 2
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.channels * self.out_height() * self.out_width()
    }
}

/// 2x2 max pooling, stride 2 (odd trailing rows/columns are dropped).
/// Returns the pooled values and, per output, the flat input index that won.
pub fn maxpool_forward<T: Scalar>(input: &[T], batch: usize, s: &PoolShape) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (s.out_height(), s.out_width());
    let mut out = Vec::with_capacity(batch * s.output_len());
    let mut argmax = Vec::with_capacity(batch * s.output_len());
    for plane in 0..batch * s.channels {
        let base = plane * s.height * s.width;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * s.width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * s.width + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward<T: Scalar>(dout: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (&g, &idx) in dout.iter().zip(argmax) {
        din[idx] += g;
    }
    din
}

/// `out = x W^T + b` with `W` stored `outputs x inputs`.
pub fn dense_forward<T: Scalar>(
    input: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        out.extend_from_slice(bias);
    }
    T::gemm(
        batch,
        inputs,
        outputs,
        T::one(),
        input,
        inputs as isize,
        1,
        weight,
        1,
        inputs as isize,
        T::one(),
        &mut out,
        outputs as isize,
        1,
    );
    out
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Scalar>(
    input: &[T],
    dout: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    for row in dout.chunks_exact(outputs) {
        for (db, &g) in dbias.iter_mut().zip(row) {
            *db += g;
        }
    }
    // dW += dY^T x
    T::gemm(
        outputs,
        batch,
        inputs,
        T::one(),
        dout,
        1,
        outputs as isize,
        input,
        inputs as isize,
        1,
        T::one(),
        dweight,
        inputs as isize,
        1,
    );
    let mut din = vec![T::zero(); batch * inputs];
    T::gemm(
        batch,
        outputs,
        inputs,
        T::one(),
        dout,
        outputs as isize,
        1,
        weight,
        inputs as isize,
        1,
        T::zero(),
        &mut din,
        inputs as isize,
        1,
    );
    din
}

/// Inverted dropout mask: each entry is `0` with probability `p`, otherwise
/// `1 / (1 - p)`, so no rescaling is needed at inference.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub fn apply_mask<T: Scalar>(x: &mut [T], mask: &[T]) {
    for (v, &m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> Result<(f64, Vec<T>)> {
    let batch = labels.len();
    if batch == 0 {
        return Err(Error::Empty("label batch"));
    }
    if logits.len() != batch * classes {
        return Err(Error::ShapeMismatch {
            expected: format!("{} logits", batch * classes),
            found: format!("{} logits", logits.len()),
        });
    }
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); logits.len()];
    let scale = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let probs = softmax(row);
        loss -= probs[label].max(f64::MIN_POSITIVE).ln();
        for (k, p) in probs.iter().enumerate() {
            let target = if k == label { 1.0 } else { 0.0 };
            grad[b * classes + k] = T::from_f64_lossy((p - target) * scale);
        }
    }
    Ok((loss * scale, grad))
}

pub fn softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
