use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{pilot_index, Constellation, PhaseTrajectory, PilotPattern};
use crate::{Error, Result};

/// Known complex channel gains, `h[m * nr + n]` from transmit `m` to
/// receive `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gains {
    pub nt: usize,
    pub nr: usize,
    pub h: Vec<Complex64>,
}

impl Gains {
    pub fn unit(nt: usize, nr: usize) -> Self {
        Gains { nt, nr, h: vec![Complex64::new(1.0, 0.0); nt * nr] }
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.h[m * self.nr + n]
    }
}

/// I.i.d. CN(0, 1) gains.
pub fn rayleigh_gains<R: Rng + ?Sized>(nt: usize, nr: usize, rng: &mut R) -> Gains {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = (0..nt * nr)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect();
    Gains { nt, nr, h }
}

/// Transmitted block: constellation indices `symbols[k * nt + m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub len: usize,
    pub nt: usize,
    pub symbols: Vec<usize>,
    pub pilot_mask: Vec<bool>,
    pub bits: Vec<u8>,
}

impl Frame {
    #[inline]
    pub fn symbol(&self, k: usize, m: usize) -> usize {
        self.symbols[k * self.nt + m]
    }

    pub fn data_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|k| !self.pilot_mask[*k])
    }

    pub fn data_len(&self) -> usize {
        self.pilot_mask.iter().filter(|p| !**p).count()
    }
}

/// Number of payload bits a frame of this shape carries.
pub fn payload_bits(pattern: &PilotPattern, len: usize, nt: usize, bits_per_symbol: usize) -> usize {
    let data = (0..len).filter(|k| !pattern.is_pilot(*k)).count();
    data * nt * bits_per_symbol
}

/// Places pilots per `pattern` and maps `bits` onto the data positions in
/// time order, antenna by antenna.
pub fn build_frame(
    bits: &[u8],
    constellation: &Constellation,
    pattern: &PilotPattern,
    len: usize,
    nt: usize,
) -> Result<Frame> {
    pattern.validate()?;
    let bps = constellation.bits_per_symbol();
    let need = payload_bits(pattern, len, nt, bps);
    if bits.len() != need {
        return Err(Error::Dimension(format!("frame needs {need} bits, got {}", bits.len())));
    }
    let pilot_mask = pattern.mask(len);
    let mut symbols = Vec::with_capacity(len * nt);
    let mut chunks = bits.chunks(bps);
    for (k, pilot) in pilot_mask.iter().enumerate() {
        for m in 0..nt {
            let s = if *pilot {
                pilot_index(k, m, constellation.size())
            } else {
                constellation.index_of_bits(chunks.next().expect("bit count checked"))
            };
            symbols.push(s);
        }
    }
    Ok(Frame { len, nt, symbols, pilot_mask, bits: bits.to_vec() })
}

/// Pilot placement and pilot symbols of a frame shape, without payload.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLayout {
    pub len: usize,
    pub nt: usize,
    pub pilot_mask: Vec<bool>,
    /// Pilot point indices `pilots[k * nt + m]`, zero at data positions.
    pub pilots: Vec<usize>,
}

impl FrameLayout {
    pub fn new(pattern: &PilotPattern, len: usize, nt: usize, constellation: &Constellation) -> Result<Self> {
        pattern.validate()?;
        let pilot_mask = pattern.mask(len);
        let pilots = (0..len * nt)
            .map(|i| if pilot_mask[i / nt] { pilot_index(i / nt, i % nt, constellation.size()) } else { 0 })
            .collect();
        Ok(FrameLayout { len, nt, pilot_mask, pilots })
    }

    pub fn data_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|k| !self.pilot_mask[*k])
    }

    pub fn data_len(&self) -> usize {
        self.pilot_mask.iter().filter(|p| !**p).count()
    }

    pub fn payload_bits(&self, bits_per_symbol: usize) -> usize {
        self.data_len() * self.nt * bits_per_symbol
    }
}

/// Received block: `r[k * nr + n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedFrame {
    pub len: usize,
    pub nr: usize,
    pub r: Vec<Complex64>,
    pub n0: f64,
    pub gains: Gains,
}

impl ReceivedFrame {
    #[inline]
    pub fn sample(&self, k: usize, n: usize) -> Complex64 {
        self.r[k * self.nr + n]
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        &self.r[k * self.nr..(k + 1) * self.nr]
    }
}

/// `r_k^(n) = Σ_m h^(m,n) c_k^(m) e^{jθ_k^(m,n)} + w_k^(n)` with complex
/// noise of total variance `n0`.
pub fn apply_channel<R: Rng + ?Sized>(
    frame: &Frame,
    constellation: &Constellation,
    trajectory: &PhaseTrajectory,
    gains: &Gains,
    n0: f64,
    rng: &mut R,
) -> Result<ReceivedFrame> {
    let (len, nt, nr) = (frame.len, frame.nt, gains.nr);
    if trajectory.len != len || trajectory.nt != nt || trajectory.nr != nr || gains.nt != nt {
        return Err(Error::Dimension("frame, trajectory and gains disagree".into()));
    }
    let s = (n0 / 2.0).sqrt();
    let mut r = Vec::with_capacity(len * nr);
    for k in 0..len {
        for n in 0..nr {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..nt {
                let c = constellation.point(frame.symbol(k, m));
                acc += gains.get(m, n) * c * Complex64::from_polar(1.0, trajectory.link(k, m, n));
            }
            let wr: f64 = rng.sample(StandardNormal);
            let wi: f64 = rng.sample(StandardNormal);
            r.push(acc + Complex64::new(wr * s, wi * s));
        }
    }
    Ok(ReceivedFrame { len, nr, r, n0, gains: gains.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ConstellationKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_bits(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
        (0..n).map(|_| rng.random::<bool>() as u8).collect()
    }

    #[test]
    fn noiseless_siso_returns_symbols() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PilotPattern::from_name("1/20").unwrap();
        let bits = random_bits(payload_bits(&p, 100, 1, 2), &mut rng);
        let f = build_frame(&bits, &c, &p, 100, 1).unwrap();
        let traj = PhaseTrajectory::zeros(100, 1, 1);
        let rx = apply_channel(&f, &c, &traj, &Gains::unit(1, 1), 0.0, &mut rng).unwrap();
        for k in 0..100 {
            assert!((rx.sample(k, 0) - c.point(f.symbol(k, 0))).norm() < 1e-15);
        }
    }

    #[test]
    fn two_by_one_substitution() {
        let c = Constellation::new(ConstellationKind::Bpsk);
        let f = Frame { len: 1, nt: 2, symbols: vec![0, 1], pilot_mask: vec![true], bits: vec![] };
        let mut traj = PhaseTrajectory::zeros(1, 2, 1);
        traj.theta_t[0] = std::f64::consts::FRAC_PI_2;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rx = apply_channel(&f, &c, &traj, &Gains::unit(2, 1), 0.0, &mut rng).unwrap();
        assert!((rx.sample(0, 0) - Complex64::new(-1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn bit_count_is_checked() {
        let c = Constellation::new(ConstellationKind::Bpsk);
        let p = PilotPattern::none();
        assert!(build_frame(&[0; 9], &c, &p, 10, 1).is_err());
        let f = build_frame(&[1; 20], &c, &p, 10, 2).unwrap();
        assert!(f.symbols.iter().all(|s| *s == 1));
    }

    #[test]
    fn pilots_hold_sequence_and_data_hold_bits() {
        let c = Constellation::new(ConstellationKind::Qam16);
        let p = PilotPattern::from_name("5/100").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bits = random_bits(payload_bits(&p, 300, 2, 4), &mut rng);
        let f = build_frame(&bits, &c, &p, 300, 2).unwrap();
        let mut recovered = Vec::new();
        for k in 0..300 {
            for m in 0..2 {
                if f.pilot_mask[k] {
                    assert_eq!(f.symbol(k, m), pilot_index(k, m, 16));
                } else {
                    recovered.extend((0..4).map(|j| c.bit(f.symbol(k, m), j)));
                }
            }
        }
        assert_eq!(recovered, bits);
    }

    #[test]
    fn noise_power_matches_n0() {
        let c = Constellation::new(ConstellationKind::Bpsk);
        let len = 1_000_000;
        let f = Frame { len, nt: 1, symbols: vec![0; len], pilot_mask: vec![true; len], bits: vec![] };
        let traj = PhaseTrajectory::zeros(len, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n0 = 0.2;
        let rx = apply_channel(&f, &c, &traj, &Gains::unit(1, 1), n0, &mut rng).unwrap();
        let noise: f64 = rx.r.iter().map(|r| (r - 1.0).norm_sqr()).sum::<f64>() / len as f64;
        let err_db = 10.0 * (noise / n0).log10();
        assert!(err_db.abs() < 0.05, "{err_db} dB");
    }

    #[test]
    fn rayleigh_gain_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = 0.0;
        let n = 250_000;
        for _ in 0..n {
            s += rayleigh_gains(2, 2, &mut rng).h.iter().map(|h| h.norm_sqr()).sum::<f64>();
        }
        let mean = s / (4 * n) as f64;
        assert!((mean - 1.0).abs() < 0.01);
        let a = rayleigh_gains(3, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let b = rayleigh_gains(3, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(Gains::unit(2, 3).h.iter().all(|h| *h == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn phase_recoverable_without_noise() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = PilotPattern::all();
        let f = build_frame(&[], &c, &p, 30, 1).unwrap();
        let traj = crate::channel::sample_phase_trajectories(30, 1, 1, 0.0, 0.0, &mut rng);
        let rx = apply_channel(&f, &c, &traj, &Gains::unit(1, 1), 0.0, &mut rng).unwrap();
        for k in 0..30 {
            let est = (rx.sample(k, 0) * c.point(f.symbol(k, 0)).conj()).arg();
            assert!(crate::circmath::wrap(est - traj.link(k, 0, 0)).abs() < 1e-12);
        }
    }
}
