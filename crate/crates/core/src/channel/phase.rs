use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

/// Oscillator phase paths, stored unwrapped. Row `k` of `theta_t` holds the
/// `N_t` transmit phases at time `k`; likewise `theta_r` for receivers.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTrajectory {
    pub len: usize,
    pub nt: usize,
    pub nr: usize,
    pub theta_t: Vec<f64>,
    pub theta_r: Vec<f64>,
}

impl PhaseTrajectory {
    /// All oscillators fixed at zero phase.
    pub fn zeros(len: usize, nt: usize, nr: usize) -> Self {
        PhaseTrajectory { len, nt, nr, theta_t: vec![0.0; len * nt], theta_r: vec![0.0; len * nr] }
    }

    #[inline]
    pub fn tx(&self, k: usize, m: usize) -> f64 {
        self.theta_t[k * self.nt + m]
    }

    #[inline]
    pub fn rx(&self, k: usize, n: usize) -> f64 {
        self.theta_r[k * self.nr + n]
    }

    /// Link phase `θt_m + θr_n` at time `k`.
    #[inline]
    pub fn link(&self, k: usize, m: usize, n: usize) -> f64 {
        self.tx(k, m) + self.rx(k, n)
    }
}

/// Independent Wiener paths with uniform initial phases.
pub fn sample_phase_trajectories<R: Rng + ?Sized>(
    len: usize,
    nt: usize,
    nr: usize,
    var_t: f64,
    var_r: f64,
    rng: &mut R,
) -> PhaseTrajectory {
    let mut p = PhaseTrajectory::zeros(len, nt, nr);
    let (st, sr) = (var_t.sqrt(), var_r.sqrt());
    for m in 0..nt {
        p.theta_t[m] = rng.random::<f64>() * TAU;
    }
    for n in 0..nr {
        p.theta_r[n] = rng.random::<f64>() * TAU;
    }
    for k in 1..len {
        for m in 0..nt {
            let d: f64 = rng.sample(StandardNormal);
            p.theta_t[k * nt + m] = p.theta_t[(k - 1) * nt + m] + st * d;
        }
        for n in 0..nr {
            let d: f64 = rng.sample(StandardNormal);
            p.theta_r[k * nr + n] = p.theta_r[(k - 1) * nr + n] + sr * d;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_variance_paths_are_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_phase_trajectories(50, 2, 3, 0.0, 0.0, &mut rng);
        for k in 1..50 {
            for m in 0..2 {
                assert_eq!(p.tx(k, m), p.tx(0, m));
            }
            for n in 0..3 {
                assert_eq!(p.rx(k, n), p.rx(0, n));
            }
        }
        assert!((0..2).all(|m| (0.0..TAU).contains(&p.tx(0, m))));
    }

    #[test]
    fn link_phase_is_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = sample_phase_trajectories(20, 2, 2, 0.01, 0.02, &mut rng);
        for k in 0..20 {
            assert_eq!(p.link(k, 1, 0), p.tx(k, 1) + p.rx(k, 0));
        }
    }

    #[test]
    fn increments_have_configured_variance_and_are_gaussian() {
        let var = (4f64).to_radians().powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_001;
        let p = sample_phase_trajectories(n, 1, 1, var, var, &mut rng);
        for series in [&p.theta_t, &p.theta_r] {
            let d: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
            let len = d.len() as f64;
            let mean = d.iter().sum::<f64>() / len;
            let m2 = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len;
            let m4 = d.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / len;
            assert!((m2 / var - 1.0).abs() < 0.01, "variance ratio {}", m2 / var);
            let excess = m4 / (m2 * m2) - 3.0;
            assert!(excess.abs() < 3.0 * (24.0 / len).sqrt(), "kurtosis {excess}");
        }
    }
}
