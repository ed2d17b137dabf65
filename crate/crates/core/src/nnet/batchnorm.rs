use super::{Real, Tensor};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and biased variance (train mode only).
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub mode: Mode,
}

/// Per-channel batch normalisation followed by `gamma * xhat + beta`.
pub fn batchnorm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let [n, c, _, _] = x.shape();
    for (v, what) in [(gamma, "gamma"), (beta, "beta"), (running_mean, "running mean"), (running_var, "running var")] {
        if v.len() != c {
            return Err(Error::ShapeMismatch(format!("batch norm {what}: {} for {c} channels", v.len())));
        }
    }
    if mode == Mode::Train && n < 2 {
        return Err(Error::DegenerateBatch);
    }
    let eps = T::lit(BN_EPS);
    let count = T::from_usize(n * x.plane_len()).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let (m, v) = match mode {
            Mode::Train => {
                let mut s = T::zero();
                for s_i in 0..n {
                    s += x.plane(s_i, ch).iter().copied().sum();
                }
                let m = s / count;
                let mut q = T::zero();
                for s_i in 0..n {
                    q += x.plane(s_i, ch).iter().map(|&v| (v - m) * (v - m)).sum();
                }
                (m, q / count)
            }
            Mode::Eval => (running_mean[ch], running_var[ch]),
        };
        mean[ch] = m;
        var[ch] = v;
        inv_std[ch] = T::one() / (v + eps).sqrt();
    }
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for s_i in 0..n {
        for ch in 0..c {
            let (m, is) = (mean[ch], inv_std[ch]);
            let (g, b) = (gamma[ch], beta[ch]);
            let src = x.plane(s_i, ch);
            let xh = xhat.plane_mut(s_i, ch);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - m) * is;
            }
            let xh = xhat.plane(s_i, ch).to_vec();
            for (d, v) in y.plane_mut(s_i, ch).iter_mut().zip(xh) {
                *d = g * v + b;
            }
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            mode,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    grad_out.expect_shape(cache.xhat.shape(), "batch norm output gradient")?;
    let [n, c, _, _] = grad_out.shape();
    let count = T::from_usize(n * grad_out.plane_len()).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        for s_i in 0..n {
            let dy = grad_out.plane(s_i, ch);
            let xh = cache.xhat.plane(s_i, ch);
            dbeta[ch] += dy.iter().copied().sum();
            dgamma[ch] += dy.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        }
    }
    let mut dx = Tensor::zeros(grad_out.shape());
    for s_i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch];
            let dy = grad_out.plane(s_i, ch);
            let xh = cache.xhat.plane(s_i, ch);
            let dst = dx.plane_mut(s_i, ch);
            match cache.mode {
                Mode::Train => {
                    let (sb, sg) = (dbeta[ch], dgamma[ch]);
                    for ((d, &g), &xv) in dst.iter_mut().zip(dy).zip(xh) {
                        *d = scale * (g - sb / count - xv * sg / count);
                    }
                }
                Mode::Eval => {
                    for (d, &g) in dst.iter_mut().zip(dy) {
                        *d = scale * g;
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Exponential moving update of running statistics from a train-mode
/// forward. The running variance uses the unbiased batch estimate.
pub fn update_running_stats<T: Real>(cache: &BnCache<T>, running_mean: &mut [T], running_var: &mut [T]) {
    if cache.mode != Mode::Train {
        return;
    }
    let [n, _, h, w] = cache.xhat.shape();
    let count = (n * h * w) as f64;
    let unbias = T::lit(count / (count - 1.0).max(1.0));
    let m = T::lit(BN_MOMENTUM);
    let keep = T::one() - m;
    for ch in 0..running_mean.len() {
        running_mean[ch] = keep * running_mean[ch] + m * cache.batch_mean[ch];
        running_var[ch] = keep * running_var[ch] + m * cache.batch_var[ch] * unbias;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn train_mode_normalises() {
        let x = random([4, 3, 5, 5], 1);
        let (y, _) = batchnorm_forward(&x, &[1.0; 3], &[0.0; 3], &[0.0; 3], &[1.0; 3], Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|s| y.plane(s, ch).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn affine_on_normalised_input() {
        let x = random([4, 2, 3, 3], 2);
        let (xn, _) = batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], Mode::Train).unwrap();
        let (y1, _) = batchnorm_forward(&xn, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], Mode::Train).unwrap();
        let (y2, _) = batchnorm_forward(&xn, &[2.0; 2], &[3.0; 2], &[0.0; 2], &[1.0; 2], Mode::Train).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a + 3.0 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_sample_train_batch_is_degenerate() {
        let x = random([1, 2, 3, 3], 3);
        assert!(matches!(
            batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], Mode::Train),
            Err(Error::DegenerateBatch)
        ));
        assert!(batchnorm_forward(&x, &[1.0; 2], &[0.0; 2], &[0.0; 2], &[1.0; 2], Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let (_, cache) = batchnorm_forward(&x, &[1.0], &[0.0], &[0.0], &[1.0], Mode::Train).unwrap();
        let (mut rm, mut rv) = (vec![0.0f64], vec![1.0f64]);
        update_running_stats(&cache, &mut rm, &mut rv);
        // batch mean 4, unbiased variance 20/3
        assert!((rm[0] - 0.4).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }
}
