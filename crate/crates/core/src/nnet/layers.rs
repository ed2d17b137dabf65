//! Element-wise and dense layers.

use super::{Real, Tensor};
use crate::{Error, Result};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through a ReLU given its output (positive outputs pass).
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(output.shape(), "relu gradient")?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Spatial mean per channel: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = x.shape();
    let area = T::from_usize(x.plane_len()).unwrap();
    let mut data = Vec::with_capacity(n * c);
    for s in 0..n {
        for ch in 0..c {
            data.push(x.plane(s, ch).iter().copied().sum::<T>() / area);
        }
    }
    Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Real>(input_shape: [usize; 4], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    grad_out.expect_shape([n, c, 1, 1], "pool gradient")?;
    let area = T::from_usize(h * w).unwrap();
    let mut out = Tensor::zeros(input_shape);
    for s in 0..n {
        for ch in 0..c {
            let g = grad_out.data()[s * c + ch] / area;
            out.plane_mut(s, ch).fill(g);
        }
    }
    Ok(out)
}

/// `y = W x + b` on `(N, in, 1, 1)` inputs; `W` is `out x in` row-major.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T]) -> Result<Tensor<T>> {
    let [n, inp, h, w] = x.shape();
    let out = bias.len();
    if h != 1 || w != 1 || weight.len() != out * inp {
        return Err(Error::ShapeMismatch(format!(
            "linear: input {:?} with {} weights and {out} outputs",
            x.shape(),
            weight.len()
        )));
    }
    let mut y = Vec::with_capacity(n * out);
    for s in 0..n {
        let xs = x.sample(s);
        for o in 0..out {
            let row = &weight[o * inp..(o + 1) * inp];
            y.push(bias[o] + row.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>());
        }
    }
    Tensor::from_vec([n, out, 1, 1], y)
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let [n, inp, _, _] = x.shape();
    let out = grad_out.c();
    grad_out.expect_shape([n, out, 1, 1], "linear gradient")?;
    if weight.len() != out * inp {
        return Err(Error::ShapeMismatch("linear weights".into()));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = vec![T::zero(); out * inp];
    let mut db = vec![T::zero(); out];
    for s in 0..n {
        let xs = x.sample(s).to_vec();
        let gs = grad_out.sample(s).to_vec();
        let dxs = dx.sample_mut(s);
        for o in 0..out {
            let g = gs[o];
            db[o] += g;
            for i in 0..inp {
                dw[o * inp + i] += g * xs[i];
                dxs[i] += g * weight[o * inp + i];
            }
        }
    }
    Ok((dx, dw, db))
}
