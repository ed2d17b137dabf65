//! Wall-clock comparison of the naive and van Herk/Gil-Werman extremum
//! filters, as used by the `bench` subcommand.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::priors::{naive_extremum, sliding_extremum_plane, Extremum};

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub size: usize,
    pub radius: usize,
    pub naive: Duration,
    pub fast: Duration,
    /// Whether both filters produced identical maps.
    pub identical: bool,
}

impl BenchResult {
    /// Fast-path throughput relative to the naive loop.
    pub fn speedup(&self) -> f64 {
        self.naive.as_secs_f64() / self.fast.as_secs_f64().max(1e-12)
    }

    pub fn megapixels_per_second(&self, d: Duration) -> f64 {
        (self.size * self.size) as f64 / 1e6 / d.as_secs_f64().max(1e-12)
    }

    pub fn to_text(&self) -> String {
        format!(
            "size {0}x{0} radius {1}\nnaive  {2:>10.3} ms  {3:>8.2} MP/s\nfast   {4:>10.3} ms  {5:>8.2} MP/s\nspeedup {6:.2}x  identical {7}\n",
            self.size,
            self.radius,
            self.naive.as_secs_f64() * 1e3,
            self.megapixels_per_second(self.naive),
            self.fast.as_secs_f64() * 1e3,
            self.megapixels_per_second(self.fast),
            self.speedup(),
            self.identical
        )
    }
}

pub fn random_plane(size: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size * size).map(|_| rng.gen()).collect()
}

/// Best of `repeats` timings for each filter on one random square map.
pub fn bench_extremum(size: usize, radius: usize, repeats: usize) -> BenchResult {
    let plane = random_plane(size, 0xbe4c);
    let best = |f: &dyn Fn() -> Vec<f32>| -> (Duration, Vec<f32>) {
        let mut best = Duration::MAX;
        let mut out = Vec::new();
        for _ in 0..repeats.max(1) {
            let t = Instant::now();
            out = f();
            best = best.min(t.elapsed());
        }
        (best, out)
    };
    let (naive, a) = best(&|| naive_extremum(&plane, size, size, radius, Extremum::Min));
    let (fast, b) = best(&|| sliding_extremum_plane(&plane, size, size, radius, Extremum::Min));
    BenchResult {
        size,
        radius,
        naive,
        fast,
        identical: a == b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_agrees() {
        let r = bench_extremum(64, 3, 1);
        assert!(r.identical);
        assert!(r.speedup() > 0.0);
        assert!(r.to_text().contains("speedup"));
    }
}
