use crate::{Error, Result};

/// A normalised, isotropic Gaussian kernel with odd side length.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidKernelSpec { size, sigma });
        }
        let c = (size / 2) as f64;
        let mut weights: Vec<f64> = (0..size * size)
            .map(|i| {
                let dy = (i / size) as f64 - c;
                let dx = (i % size) as f64 - c;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            size,
            sigma,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Row-major `size x size` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }
}

pub fn make_gaussian_kernel(size: usize, sigma: f64) -> Result<GaussianKernel> {
    GaussianKernel::new(size, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn singleton_kernel() {
        let k = make_gaussian_kernel(1, 0.3).unwrap();
        assert_eq!(k.weights(), &[1.0]);
    }

    #[test]
    fn three_by_three_unit_sigma() {
        // exp(-(dx^2+dy^2)/2) over the 9 offsets: 1 centre, 4 at e^-0.5, 4 at e^-1.
        let total = 1.0 + 4.0 * (-0.5f64).exp() + 4.0 * (-1.0f64).exp();
        let expected = 1.0 / total;
        let k = make_gaussian_kernel(3, 1.0).unwrap();
        assert!((k.at(1, 1) - expected).abs() < 1e-12);
        assert!((k.at(1, 1) - 0.20418).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(make_gaussian_kernel(4, 1.0).is_err());
        assert!(make_gaussian_kernel(0, 1.0).is_err());
        assert!(make_gaussian_kernel(3, 0.0).is_err());
        assert!(make_gaussian_kernel(3, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn normalised_positive_symmetric(half in 0usize..8, sigma in 0.5f64..5.0) {
            let size = 2 * half + 1;
            let k = make_gaussian_kernel(size, sigma).unwrap();
            let total: f64 = k.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for i in 0..size {
                for j in 0..size {
                    prop_assert!(k.at(i, j) > 0.0);
                    prop_assert_eq!(k.at(i, j), k.at(j, i));
                    prop_assert_eq!(k.at(i, j), k.at(size - 1 - i, j));
                }
            }
        }
    }
}
