//! Bias-free 2-D cross-correlation via im2col + GEMM.

use super::{Real, Tensor};
use crate::priors::conv_out_len;
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "input {h}x{w} smaller than kernel {}",
                self.kernel
            )));
        }
        Ok((
            conv_out_len(h, self.kernel, self.stride, self.padding),
            conv_out_len(w, self.kernel, self.stride, self.padding),
        ))
    }
}

fn check_weights<T>(weights: &[T], in_c: usize, out_c: usize, g: &ConvGeometry) -> Result<()> {
    let want = out_c * in_c * g.kernel * g.kernel;
    if weights.len() != want || out_c == 0 {
        return Err(Error::ShapeMismatch(format!(
            "conv weights: expected {out_c}x{in_c}x{k}x{k} = {want}, got {}",
            weights.len(),
            k = g.kernel
        )));
    }
    Ok(())
}

/// Output indices `o` in `0..n_out` whose tap `o * stride + offset` lands
/// inside `0..n_in`, as a half-open range.
pub(crate) fn valid_taps(n_in: usize, n_out: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 { 0 } else { ((-offset) as usize).div_ceil(stride) };
    let last = n_in as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last as usize / stride + 1).min(n_out) };
    (lo.min(hi), hi)
}

/// Unfolds one `(C, H, W)` sample into a `(C k k) x (oh ow)` matrix.
fn im2col<T: Real>(src: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let (k, s) = (g.kernel, g.stride);
    let p = oh * ow;
    let mut cols = vec![T::zero(); c * k * k * p];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (y0, y1) = valid_taps(h, oh, s, ky as isize - g.padding as isize);
            for kx in 0..k {
                let off = kx as isize - g.padding as isize;
                let (x0, x1) = valid_taps(w, ow, s, off);
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in y0..y1 {
                    let y = oy * s + ky - g.padding;
                    let src_row = &plane[y * w..(y + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    let base = (x0 * s) as isize + off;
                    for (i, d) in dst[x0..x1].iter_mut().enumerate() {
                        *d = src_row[(base + (i * s) as isize) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Folds a column-gradient matrix back onto a `(C, H, W)` sample, summing overlaps.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize) -> Vec<T> {
    let (k, s) = (g.kernel, g.stride);
    let p = oh * ow;
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            let (y0, y1) = valid_taps(h, oh, s, ky as isize - g.padding as isize);
            for kx in 0..k {
                let off = kx as isize - g.padding as isize;
                let (x0, x1) = valid_taps(w, ow, s, off);
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in y0..y1 {
                    let y = oy * s + ky - g.padding;
                    let dst = &mut out[ci * h * w + y * w..][..w];
                    let base = (x0 * s) as isize + off;
                    for (i, &v) in row[oy * ow + x0..oy * ow + x1].iter().enumerate() {
                        dst[(base + (i * s) as isize) as usize] += v;
                    }
                }
            }
        }
    }
    out
}

/// `weights` is `(out_c, in_c, k, k)` row-major.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &[T],
    out_c: usize,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.shape();
    check_weights(weights, c, out_c, g)?;
    let (oh, ow) = g.out_hw(h, w)?;
    let ckk = c * g.kernel * g.kernel;
    let p = oh * ow;
    let mut out = Tensor::zeros([n, out_c, oh, ow]);
    par::for_each_chunk(out.data_mut(), out_c * p, |s, dst| {
        let cols = im2col(input.sample(s), c, h, w, g, oh, ow);
        T::gemm(out_c, ckk, p, weights, (ckk, 1), &cols, (p, 1), T::zero(), dst);
    });
    Ok(out)
}

/// Gradients of a convolution: `(input gradient if requested, weight gradient)`.
/// Per-sample weight gradients are reduced in sample order.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &[T],
    out_c: usize,
    g: &ConvGeometry,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Vec<T>)> {
    let [n, c, h, w] = input.shape();
    check_weights(weights, c, out_c, g)?;
    let (oh, ow) = g.out_hw(h, w)?;
    grad_out.expect_shape([n, out_c, oh, ow], "conv output gradient")?;
    let ckk = c * g.kernel * g.kernel;
    let p = oh * ow;

    let per_sample = par::map_range(n, |s| {
        let cols = im2col(input.sample(s), c, h, w, g, oh, ow);
        let gout = grad_out.sample(s);
        let mut gw = vec![T::zero(); out_c * ckk];
        // dW = dY (out_c x p) * cols^T (p x ckk)
        T::gemm(out_c, p, ckk, gout, (p, 1), &cols, (1, p), T::zero(), &mut gw);
        let gin = want_input_grad.then(|| {
            let mut gcols = vec![T::zero(); ckk * p];
            // dcols = W^T (ckk x out_c) * dY (out_c x p)
            T::gemm(ckk, out_c, p, weights, (1, ckk), gout, (p, 1), T::zero(), &mut gcols);
            col2im(&gcols, c, h, w, g, oh, ow)
        });
        (gw, gin)
    });

    let mut grad_w = vec![T::zero(); out_c * ckk];
    let mut grad_in = want_input_grad.then(|| Vec::with_capacity(n * c * h * w));
    for (gw, gin) in per_sample {
        grad_w.iter_mut().zip(&gw).for_each(|(a, &b)| *a += b);
        if let (Some(all), Some(gin)) = (grad_in.as_mut(), gin) {
            all.extend(gin);
        }
    }
    let grad_in = grad_in.map(|d| Tensor::from_vec([n, c, h, w], d)).transpose()?;
    Ok((grad_in, grad_w))
}
