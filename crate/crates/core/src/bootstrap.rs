//! Paired bootstrap resampling for score comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::nearest_rank;

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Mean of b - a over the original pairs.
    pub delta: f64,
    /// 2.5th and 97.5th empirical percentiles of the resampled means.
    pub ci95: (f64, f64),
    /// Two-sided sign p-value with add-one smoothing, capped at 1.
    pub p_value: f64,
    pub resamples: usize,
    pub seed: u64,
}

/// Compares paired score vectors by resampling instance indices with
/// replacement. Deterministic for a given seed.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<BootstrapResult> {
    if a.len() != b.len() {
        return Err(Error::UnpairedSamples {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Config(
            "paired bootstrap needs at least 2 pairs".into(),
        ));
    }
    if resamples == 0 {
        return Err(Error::Config("paired bootstrap needs resamples >= 1".into()));
    }

    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let delta = diffs.iter().sum::<f64>() / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut total = 0.0;
        for _ in 0..n {
            total += diffs[rng.gen_range(0..n)];
        }
        means.push(total / n as f64);
    }
    means.sort_by(|x, y| x.total_cmp(y));

    let ci95 = (nearest_rank(&means, 0.025), nearest_rank(&means, 0.975));

    let p_value = if delta == 0.0 {
        1.0
    } else {
        let opposing = if delta > 0.0 {
            means.iter().filter(|&&m| m <= 0.0).count()
        } else {
            means.iter().filter(|&&m| m >= 0.0).count()
        };
        (2.0 * (opposing + 1) as f64 / (resamples + 1) as f64).min(1.0)
    };

    Ok(BootstrapResult {
        delta,
        ci95,
        p_value,
        resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_vectors_give_zero_delta_and_p_one() {
        let a = vec![0.3, 0.5, 0.7, 0.2, 0.9];
        let r = paired_bootstrap(&a, &a, 1000, 1).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.ci95, (0.0, 0.0));
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn constant_shift_pins_the_interval() {
        let a = vec![0.1, 0.4, 0.6, 0.8];
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        let r = paired_bootstrap(&a, &b, 1000, 2).unwrap();
        assert_eq!(r.delta, 1.0);
        assert_eq!(r.ci95, (1.0, 1.0));
        // No resampled mean opposes the shift, so p sits at the floor.
        assert!((r.p_value - 2.0 / 1001.0).abs() < 1e-15);
    }

    #[test]
    fn seed_determinism() {
        let a: Vec<f64> = (0..50).map(|i| (i % 7) as f64 / 7.0).collect();
        let b: Vec<f64> = (0..50).map(|i| (i % 5) as f64 / 5.0).collect();
        let r1 = paired_bootstrap(&a, &b, 500, 42).unwrap();
        let r2 = paired_bootstrap(&a, &b, 500, 42).unwrap();
        assert_eq!(r1, r2);
        let r3 = paired_bootstrap(&a, &b, 500, 43).unwrap();
        assert_ne!(r1.ci95, r3.ci95);
    }

    #[test]
    fn rejects_mismatched_or_tiny_inputs() {
        assert!(paired_bootstrap(&[1.0, 2.0], &[1.0], 100, 0).is_err());
        assert!(paired_bootstrap(&[1.0], &[1.0], 100, 0).is_err());
        assert!(paired_bootstrap(&[1.0, 2.0], &[1.0, 2.0], 0, 0).is_err());
    }

    #[test]
    fn detects_a_half_point_shift_with_high_power() {
        let shift = 0.5;
        let mut rejections = 0;
        let trials = 100;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let a: Vec<f64> = (0..200).map(|_| noise.sample(&mut rng)).collect();
            let b: Vec<f64> = a
                .iter()
                .map(|x| x + shift + noise.sample(&mut rng) * 0.3)
                .collect();
            let r = paired_bootstrap(&a, &b, 1000, seed).unwrap();
            if r.p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(
            rejections >= 95,
            "rejected {rejections}/{trials}, expected near-total power"
        );
    }

    #[test]
    fn null_coverage_is_near_nominal() {
        let trials = 300;
        let mut covered = 0;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
            let noise = Normal::new(0.0, 0.5).unwrap();
            let a: Vec<f64> = (0..50).map(|_| noise.sample(&mut rng)).collect();
            let b: Vec<f64> = a.iter().map(|x| x + noise.sample(&mut rng)).collect();
            let r = paired_bootstrap(&a, &b, 1000, seed).unwrap();
            if r.ci95.0 <= 0.0 && 0.0 <= r.ci95.1 {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        assert!(
            (0.90..=0.99).contains(&rate),
            "null CI coverage {rate} strayed from nominal 0.95"
        );
    }
}
