use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::train::seeded;
use crate::geo::{unproject_km, LonLat};
use crate::tensor::Tensor;

/// Stations on a ring whose demand is a per-station daily sinusoid plus a
/// share of the two neighbours' previous-bin signal plus Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticRing {
    pub stations: usize,
    pub bins: usize,
    /// Sinusoid period in bins.
    pub period: f64,
    pub spillover: f64,
    pub noise: f64,
    /// Bins by which drop-offs trail pick-ups.
    pub dropoff_lag: usize,
    pub seed: u64,
}

impl Default for SyntheticRing {
    fn default() -> Self {
        Self { stations: 20, bins: 2000, period: 48.0, spillover: 0.3, noise: 0.1, dropoff_lag: 2, seed: 0 }
    }
}

impl SyntheticRing {
    /// `[T, N, 2]` demand.
    pub fn generate(&self) -> Tensor<f64> {
        let n = self.stations;
        let mut rng = seeded(self.seed, 0);
        let amplitude: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let level: Vec<f64> = (0..n).map(|_| rng.random_range(1.5..2.5)).collect();
        let signal = |i: usize, t: isize| {
            let phase = 2.0 * std::f64::consts::PI * (t as f64 / self.period + i as f64 / n as f64);
            level[i] + amplitude[i] * phase.sin()
        };
        let demand = |i: usize, t: isize| {
            let (left, right) = ((i + n - 1) % n, (i + 1) % n);
            signal(i, t) + self.spillover * 0.5 * (signal(left, t - 1) + signal(right, t - 1))
        };
        let noise = Normal::new(0.0, self.noise).expect("noise must be finite and nonnegative");
        let mut out = Tensor::zeros(vec![self.bins, n, 2]);
        let data = out.data_mut();
        for t in 0..self.bins {
            for i in 0..n {
                let base = (t * n + i) * 2;
                data[base] = demand(i, t as isize) + noise.sample(&mut rng);
                data[base + 1] = demand(i, t as isize - self.dropoff_lag as isize) + noise.sample(&mut rng);
            }
        }
        out
    }

    /// Station positions on a 3 km circle in midtown Manhattan.
    pub fn centroids(&self) -> Vec<LonLat> {
        let origin = LonLat::new(-73.98, 40.75);
        (0..self.stations)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / self.stations as f64;
                unproject_km((3.0 * a.cos(), 3.0 * a.sin()), origin)
            })
            .collect()
    }
}
