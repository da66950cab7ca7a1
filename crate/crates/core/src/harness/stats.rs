/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes in `n` trials. `(0, 1)` when
/// `n = 0`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / den;
    let half = z / den * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// `k / n`, or NaN with no trials.
pub fn rate(k: u64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        k as f64 / n as f64
    }
}

/// Binomial standard error of an estimated rate.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    if n == 0 {
        f64::INFINITY
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn known_values() {
        // 10 of 100: (0.0552, 0.1744) to four places.
        let (lo, hi) = wilson_interval(10, 100, Z95);
        assert!((lo - 0.05523).abs() < 1e-4 && (hi - 0.17437).abs() < 1e-4, "{lo} {hi}");
        let (lo, hi) = wilson_interval(0, 50, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.08);
        assert_eq!(wilson_interval(0, 0, Z95), (0.0, 1.0));
    }

    #[test]
    fn coverage_on_bernoulli_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [0.01, 0.1, 0.3] {
            let trials = 10_000;
            let n = 500;
            let mut hit = 0;
            for _ in 0..trials {
                let k = (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
                let (lo, hi) = wilson_interval(k, n, Z95);
                hit += (lo <= p && p <= hi) as u32;
            }
            let cov = hit as f64 / trials as f64;
            assert!((cov - 0.95).abs() <= 0.01, "p {p}: coverage {cov}");
        }
    }

    proptest! {
        #[test]
        fn contains_point_estimate(n in 1u64..100_000, f in 0.0f64..=1.0) {
            let k = ((n as f64) * f).floor() as u64;
            let (lo, hi) = wilson_interval(k, n, Z95);
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p + 1e-15 && p <= hi + 1e-15 && hi <= 1.0);
        }
    }
}
