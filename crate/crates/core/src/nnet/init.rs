use rand::Rng;

use super::Real;

/// Kaiming-uniform bound for ReLU gain: `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// `count` samples uniform on `[-b, b]` with `b = kaiming_bound(fan_in)`.
pub fn kaiming_uniform<T: Real, R: Rng + ?Sized>(count: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    assert!(fan_in > 0, "fan_in must be positive");
    let b = kaiming_bound(fan_in);
    (0..count).map(|_| T::lit(rng.gen_range(-b..=b))).collect()
}
