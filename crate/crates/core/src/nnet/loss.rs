use super::{Real, Tensor};
use crate::{Error, Result};

/// Mean softmax cross-entropy over the batch and its logit gradient
/// `(softmax - onehot) / N`. Logits are `(N, classes, 1, 1)`.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, classes, h, w] = logits.shape();
    if h != 1 || w != 1 || labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange(bad));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * classes);
    for (s, &label) in labels.iter().enumerate() {
        let z = logits.sample(s);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        loss += total.ln() - (z[label] - max);
        for (j, e) in exps.iter().enumerate() {
            let p = *e / total;
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((p - target) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::from_vec(logits.shape(), grad)?))
}

/// Row-wise argmax of `(N, classes, 1, 1)` logits; ties go to the lower index.
pub fn argmax<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.n())
        .map(|s| {
            let z = logits.sample(s);
            let mut best = 0;
            for j in 1..z.len() {
                if z[j] > z[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
