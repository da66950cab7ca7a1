//! Extended Kalman smoother over the link phases, one filter per receive
//! antenna with the `N_t` link phases of that antenna as state.
//!
//! The measurement model linearizes
//! `r_k^(n) = Σ_m h^(m,n) c̄_k^(m) e^{jθ^(m,n)_k} + w̃` around the predicted
//! phases, with `w̃` absorbing the soft-symbol uncertainty:
//! `Var w̃ = N_0 + Σ_m |h^(m,n)|² σ²_c`. Real and imaginary parts are
//! stacked into a 2-D real measurement.

pub mod linalg;

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::channel::{Constellation, ReceivedFrame};
use crate::circmath::wrap;
use crate::spa::JointSymbolBelief;
use crate::{Error, Result};
use linalg::{solve_complex, Mat, MAX_DIM};

/// Below this magnitude a soft symbol carries no phase information.
const SKIP_MAGNITUDE: f64 = 1e-6;
/// Variance floor for data soft symbols, relative to unit symbol energy.
const VAR_FLOOR: f64 = 1e-8;
/// Variance of a phase uniform on the circle.
const UNIFORM_VAR: f64 = PI * PI / 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftSymbol {
    pub mean: Complex64,
    pub var: f64,
}

impl SoftSymbol {
    pub fn known(c: Complex64) -> Self {
        SoftSymbol { mean: c, var: 0.0 }
    }
}

/// Mean and variance of a pmf over the constellation.
pub fn soft_stats(pmf: &[f64], constellation: &Constellation) -> SoftSymbol {
    let mut mean = Complex64::new(0.0, 0.0);
    let mut e2 = 0.0;
    for (p, c) in pmf.iter().zip(constellation.points()) {
        mean += c * *p;
        e2 += c.norm_sqr() * *p;
    }
    let var = (e2 - mean.norm_sqr()).max(VAR_FLOOR);
    SoftSymbol { mean, var }
}

/// Per-antenna soft symbols from a joint belief's marginals.
pub fn soft_stats_belief(belief: &JointSymbolBelief, constellation: &Constellation) -> Vec<SoftSymbol> {
    (0..belief.nt).map(|m| soft_stats(&belief.marginal(m), constellation)).collect()
}

/// Random-walk process model for the link phases seen by one receive
/// antenna: identity transition, `Q = σ²_t I + σ²_r 11ᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessModel {
    pub nt: usize,
    pub q: Mat,
}

pub fn process_model(nt: usize, var_t: f64, var_r: f64) -> Result<ProcessModel> {
    if nt == 0 || nt > MAX_DIM {
        return Err(Error::Dimension(format!("smoother supports 1..={MAX_DIM} transmit antennas")));
    }
    let mut q = Mat::zeros(nt, nt);
    for i in 0..nt {
        for j in 0..nt {
            q[(i, j)] = var_r + if i == j { var_t } else { 0.0 };
        }
    }
    Ok(ProcessModel { nt, q })
}

/// Prior for the first index: per-link mean (`mean[m * nr + n]`) and a
/// common diagonal variance.
#[derive(Clone, Debug, PartialEq)]
pub struct EksInit {
    pub mean: Vec<f64>,
    pub var: f64,
}

/// Least-squares link phases from the first `preamble` (known) symbols,
/// ignoring phase drift across the preamble. Links that cannot be resolved
/// start at zero. The prior variance stays at that of a uniform phase; the
/// fit only supplies the linearization point.
pub fn preamble_init(rx: &ReceivedFrame, soft: &[SoftSymbol], preamble: usize) -> EksInit {
    let (nt, nr) = (rx.gains.nt, rx.gains.nr);
    let mut mean = vec![0.0; nt * nr];
    let p = preamble.min(rx.len);
    if p >= nt {
        for n in 0..nr {
            let mut a = vec![Complex64::new(0.0, 0.0); nt * nt];
            let mut b = vec![Complex64::new(0.0, 0.0); nt];
            for k in 0..p {
                let g: Vec<Complex64> =
                    (0..nt).map(|m| rx.gains.get(m, n) * soft[k * nt + m].mean).collect();
                for i in 0..nt {
                    b[i] += g[i].conj() * rx.sample(k, n);
                    for j in 0..nt {
                        a[i * nt + j] += g[i].conj() * g[j];
                    }
                }
            }
            if let Some(x) = solve_complex(nt, a, b) {
                for m in 0..nt {
                    mean[m * nr + n] = x[m].arg();
                }
            }
        }
    }
    EksInit { mean, var: UNIFORM_VAR }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SmootherDiagnostics {
    /// Covariances that needed symmetrize-and-jitter repair.
    pub repairs: u64,
    /// Measurement updates skipped for lack of symbol information.
    pub skipped: u64,
}

impl std::ops::AddAssign for SmootherDiagnostics {
    fn add_assign(&mut self, o: Self) {
        self.repairs += o.repairs;
        self.skipped += o.skipped;
    }
}

/// Forward-pass output for one receive antenna.
#[derive(Clone, Debug)]
pub struct AntennaTrack {
    pub pred_mean: Vec<[f64; MAX_DIM]>,
    pub pred_cov: Vec<Mat>,
    pub filt_mean: Vec<[f64; MAX_DIM]>,
    pub filt_cov: Vec<Mat>,
}

#[derive(Clone, Debug)]
pub struct FilterTrack {
    pub len: usize,
    pub nt: usize,
    pub nr: usize,
    pub model: ProcessModel,
    pub antennas: Vec<AntennaTrack>,
    pub diagnostics: SmootherDiagnostics,
}

impl FilterTrack {
    /// Filtered estimates packaged like a smoother output.
    pub fn filtered(&self) -> PhasePosterior {
        let mut post = PhasePosterior::new(self.len, self.nt, self.nr);
        for (n, a) in self.antennas.iter().enumerate() {
            for k in 0..self.len {
                post.store(k, n, &a.filt_mean[k], &a.filt_cov[k]);
            }
        }
        post
    }
}

/// Gaussian link-phase posterior: wrapped means `theta[(k*nt + m)*nr + n]`
/// and per-antenna covariances `cov[(k*nr + n)*nt*nt ..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePosterior {
    pub len: usize,
    pub nt: usize,
    pub nr: usize,
    pub theta: Vec<f64>,
    pub cov: Vec<f64>,
}

impl PhasePosterior {
    pub fn new(len: usize, nt: usize, nr: usize) -> Self {
        PhasePosterior {
            len,
            nt,
            nr,
            theta: vec![0.0; len * nt * nr],
            cov: vec![0.0; len * nr * nt * nt],
        }
    }

    #[inline]
    pub fn theta(&self, k: usize, m: usize, n: usize) -> f64 {
        self.theta[(k * self.nt + m) * self.nr + n]
    }

    #[inline]
    pub fn p(&self, k: usize, n: usize, m: usize, l: usize) -> f64 {
        self.cov[((k * self.nr + n) * self.nt + m) * self.nt + l]
    }

    pub fn cov_mat(&self, k: usize, n: usize) -> Mat {
        let nt = self.nt;
        let base = (k * self.nr + n) * nt * nt;
        Mat::from_rows(nt, nt, &self.cov[base..base + nt * nt])
    }

    fn store(&mut self, k: usize, n: usize, mean: &[f64; MAX_DIM], cov: &Mat) {
        let nt = self.nt;
        for m in 0..nt {
            self.theta[(k * nt + m) * self.nr + n] = wrap(mean[m]);
        }
        let base = (k * self.nr + n) * nt * nt;
        for i in 0..nt {
            for j in 0..nt {
                self.cov[base + i * nt + j] = cov[(i, j)];
            }
        }
    }
}

/// Symmetrizes and, if Cholesky fails, adds growing diagonal jitter.
/// Returns whether a repair was needed.
fn repair(p: &mut Mat) -> bool {
    p.symmetrize();
    if p.cholesky().is_some() {
        return false;
    }
    let n = p.rows;
    let scale = (0..n).map(|i| p[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let mut jitter = 1e-12 * scale;
    for _ in 0..60 {
        let mut q = *p;
        for i in 0..n {
            q[(i, i)] += jitter;
        }
        if q.cholesky().is_some() {
            *p = q;
            return true;
        }
        jitter *= 4.0;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[(i, j)] = 0.0;
            }
        }
        p[(i, i)] = p[(i, i)].abs().max(1e-12);
    }
    true
}

/// Extended Kalman filter over every receive antenna.
pub fn ekf_forward(
    rx: &ReceivedFrame,
    soft: &[SoftSymbol],
    model: &ProcessModel,
    init: &EksInit,
) -> Result<FilterTrack> {
    let (len, nt, nr) = (rx.len, rx.gains.nt, rx.gains.nr);
    if soft.len() != len * nt || model.nt != nt || init.mean.len() != nt * nr {
        return Err(Error::Dimension("smoother inputs disagree in shape".into()));
    }
    let mut diag = SmootherDiagnostics::default();
    let mut antennas = Vec::with_capacity(nr);
    for n in 0..nr {
        let mut tr = AntennaTrack {
            pred_mean: Vec::with_capacity(len),
            pred_cov: Vec::with_capacity(len),
            filt_mean: Vec::with_capacity(len),
            filt_cov: Vec::with_capacity(len),
        };
        let mut x = [0.0; MAX_DIM];
        for m in 0..nt {
            x[m] = init.mean[m * nr + n];
        }
        let mut p = Mat::identity(nt).scale(init.var);
        for k in 0..len {
            if k > 0 {
                p = p.add(&model.q);
            }
            tr.pred_mean.push(x);
            tr.pred_cov.push(p);

            let syms = &soft[k * nt..(k + 1) * nt];
            if syms.iter().all(|s| s.mean.norm() < SKIP_MAGNITUDE) {
                diag.skipped += 1;
            } else {
                let mut s = Complex64::new(0.0, 0.0);
                let mut h = Mat::zeros(2, nt);
                let mut noise = rx.n0;
                for (m, sym) in syms.iter().enumerate() {
                    let g = rx.gains.get(m, n);
                    let v = g * sym.mean * Complex64::from_polar(1.0, x[m]);
                    s += v;
                    h[(0, m)] = -v.im;
                    h[(1, m)] = v.re;
                    noise += g.norm_sqr() * sym.var;
                }
                let rho = 0.5 * noise;
                let e = rx.sample(k, n) - s;
                let pht = p.mul(&h.transpose());
                let mut sm = h.mul(&pht);
                sm[(0, 0)] += rho;
                sm[(1, 1)] += rho;
                let det = sm[(0, 0)] * sm[(1, 1)] - sm[(0, 1)] * sm[(1, 0)];
                if !(det > 0.0) || !det.is_finite() {
                    return Err(Error::Numerical { index: k, msg: "singular innovation covariance".into() });
                }
                let sinv = Mat::from_rows(
                    2,
                    2,
                    &[sm[(1, 1)] / det, -sm[(0, 1)] / det, -sm[(1, 0)] / det, sm[(0, 0)] / det],
                );
                let kg = pht.mul(&sinv);
                for m in 0..nt {
                    x[m] += kg[(m, 0)] * e.re + kg[(m, 1)] * e.im;
                }
                let ikh = Mat::identity(nt).sub(&kg.mul(&h));
                p = ikh.mul(&p).mul(&ikh.transpose()).add(&kg.mul(&kg.transpose()).scale(rho));
            }
            if repair(&mut p) {
                diag.repairs += 1;
                log::debug!("covariance repaired at k={k}, antenna {n}");
            }
            if x[..nt].iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical { index: k, msg: "non-finite phase estimate".into() });
            }
            tr.filt_mean.push(x);
            tr.filt_cov.push(p);
        }
        antennas.push(tr);
    }
    Ok(FilterTrack { len, nt, nr, model: *model, antennas, diagnostics: diag })
}

/// Rauch-Tung-Striebel backward pass.
pub fn rts_backward(track: &FilterTrack) -> Result<(PhasePosterior, SmootherDiagnostics)> {
    let (len, nt) = (track.len, track.nt);
    let mut post = PhasePosterior::new(len, nt, track.nr);
    let mut diag = SmootherDiagnostics::default();
    for (n, a) in track.antennas.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let mut xs = a.filt_mean[len - 1];
        let mut ps = a.filt_cov[len - 1];
        post.store(len - 1, n, &xs, &ps);
        for k in (0..len - 1).rev() {
            let inv = a.pred_cov[k + 1]
                .inv_spd()
                .ok_or(Error::Numerical { index: k, msg: "predicted covariance not invertible".into() })?;
            let c = a.filt_cov[k].mul(&inv);
            let mut x = a.filt_mean[k];
            for i in 0..nt {
                for j in 0..nt {
                    x[i] += c[(i, j)] * (xs[j] - a.pred_mean[k + 1][j]);
                }
            }
            let mut p = a.filt_cov[k].add(&c.mul(&ps.sub(&a.pred_cov[k + 1])).mul(&c.transpose()));
            if repair(&mut p) {
                diag.repairs += 1;
            }
            xs = x;
            ps = p;
            post.store(k, n, &xs, &ps);
        }
    }
    Ok((post, diag))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmootherOptions {
    pub var_t: f64,
    pub var_r: f64,
    pub preamble: usize,
    /// Feed the filter zero symbol variance (strict variational form).
    pub zero_symbol_variance: bool,
}

/// Filter then smooth a frame given per-index soft symbols
/// (`soft[k * nt + m]`).
pub fn smooth(
    rx: &ReceivedFrame,
    soft: &[SoftSymbol],
    opts: &SmootherOptions,
) -> Result<(PhasePosterior, SmootherDiagnostics)> {
    let model = process_model(rx.gains.nt, opts.var_t, opts.var_r)?;
    let owned;
    let soft = if opts.zero_symbol_variance {
        owned = soft.iter().map(|s| SoftSymbol { mean: s.mean, var: 0.0 }).collect::<Vec<_>>();
        &owned[..]
    } else {
        soft
    };
    let init = preamble_init(rx, soft, opts.preamble);
    let track = ekf_forward(rx, soft, &model, &init)?;
    let (post, mut diag) = rts_backward(&track)?;
    diag += track.diagnostics;
    Ok((post, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bpsk() -> Constellation {
        Constellation::new(ConstellationKind::Bpsk)
    }

    #[test]
    fn soft_stats_examples() {
        let c = bpsk();
        let s = soft_stats(&[1.0, 0.0], &c);
        assert_eq!(s.mean, Complex64::new(1.0, 0.0));
        assert!(s.var <= VAR_FLOOR);
        let s = soft_stats(&[0.5, 0.5], &c);
        assert!(s.mean.norm() < 1e-15 && (s.var - 1.0).abs() < 1e-15);
        let s = soft_stats(&[0.9, 0.1], &c);
        assert!((s.mean.re - 0.8).abs() < 1e-12 && (s.var - 0.36).abs() < 1e-12);
    }

    #[test]
    fn process_model_examples() {
        let m = process_model(3, 0.01, 0.0).unwrap();
        assert_eq!(m.q[(0, 1)], 0.0);
        let s = (4f64).to_radians().powi(2);
        let m = process_model(2, s, s).unwrap();
        assert!((m.q[(0, 0)] - 2.0 * s).abs() < 1e-18 && (m.q[(0, 1)] - s).abs() < 1e-18);
        assert!(process_model(9, s, s).is_err());
    }

    #[test]
    fn sampled_link_increments_match_q() {
        let s = (4f64).to_radians().powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let len = 1_000_001;
        let t = sample_phase_trajectories(len, 2, 1, s, s, &mut rng);
        let (mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0);
        for k in 1..len {
            let d0 = t.link(k, 0, 0) - t.link(k - 1, 0, 0);
            let d1 = t.link(k, 1, 0) - t.link(k - 1, 1, 0);
            c00 += d0 * d0;
            c01 += d0 * d1;
            c11 += d1 * d1;
        }
        let n = (len - 1) as f64;
        let q = process_model(2, s, s).unwrap().q;
        assert!((c00 / n / q[(0, 0)] - 1.0).abs() < 0.02);
        assert!((c11 / n / q[(1, 1)] - 1.0).abs() < 0.02);
        assert!((c01 / n / q[(0, 1)] - 1.0).abs() < 0.02);
    }

    fn pilot_frame(len: usize, nt: usize, nr: usize, var: f64, n0: f64, seed: u64) -> (ReceivedFrame, Vec<SoftSymbol>, PhaseTrajectory) {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = build_frame(&[], &c, &PilotPattern::all(), len, nt).unwrap();
        let t = sample_phase_trajectories(len, nt, nr, var, var, &mut rng);
        let rx = apply_channel(&f, &c, &t, &Gains::unit(nt, nr), n0, &mut rng).unwrap();
        let soft = f.symbols.iter().map(|i| SoftSymbol::known(c.point(*i))).collect();
        (rx, soft, t)
    }

    #[test]
    fn siso_converges_to_true_phase() {
        let (rx, soft, t) = pilot_frame(10, 1, 1, 0.0, 1e-10, 12);
        let model = process_model(1, 0.0, 0.0).unwrap();
        let init = preamble_init(&rx, &soft, 10);
        let track = ekf_forward(&rx, &soft, &model, &init).unwrap();
        let f = track.filtered();
        let err = wrap(f.theta(9, 0, 0) - t.link(9, 0, 0)).abs();
        assert!(err < (0.1f64).to_radians(), "{}", err.to_degrees());
    }

    #[test]
    fn uninformative_symbol_only_predicts() {
        let (rx, mut soft, _) = pilot_frame(3, 1, 1, 0.0, 0.1, 13);
        soft[1] = SoftSymbol { mean: Complex64::new(0.0, 0.0), var: 1.0 };
        let model = process_model(1, 0.01, 0.0).unwrap();
        let init = preamble_init(&rx, &soft, 0);
        let track = ekf_forward(&rx, &soft, &model, &init).unwrap();
        let a = &track.antennas[0];
        assert!((a.filt_cov[1][(0, 0)] - a.filt_cov[0][(0, 0)] - 0.01).abs() < 1e-15);
        assert_eq!(a.filt_mean[1], a.filt_mean[0]);
        assert_eq!(track.diagnostics.skipped, 1);
    }

    #[test]
    fn single_step_smoother_equals_filter() {
        let (rx, soft, _) = pilot_frame(1, 2, 2, 0.0, 0.1, 14);
        let model = process_model(2, 0.01, 0.01).unwrap();
        let init = preamble_init(&rx, &soft, 1);
        let track = ekf_forward(&rx, &soft, &model, &init).unwrap();
        let (s, _) = rts_backward(&track).unwrap();
        assert_eq!(s, track.filtered());
    }

    #[test]
    fn smoothing_reduces_variance_on_sparse_pilots() {
        let c = bpsk();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let pat = PilotPattern::from_name("1/20").unwrap();
        let len = 400;
        let bits: Vec<u8> = (0..payload_bits(&pat, len, 2, 1)).map(|i| (i % 3 == 0) as u8).collect();
        let f = build_frame(&bits, &c, &pat, len, 2).unwrap();
        let s = (4f64).to_radians().powi(2);
        let t = sample_phase_trajectories(len, 2, 1, s, s, &mut rng);
        let rx = apply_channel(&f, &c, &t, &Gains::unit(2, 1), 0.1, &mut rng).unwrap();
        let soft: Vec<SoftSymbol> = (0..len * 2)
            .map(|i| {
                if f.pilot_mask[i / 2] {
                    SoftSymbol::known(c.point(f.symbols[i]))
                } else {
                    SoftSymbol { mean: Complex64::new(0.0, 0.0), var: 1.0 }
                }
            })
            .collect();
        let model = process_model(2, s, s).unwrap();
        let init = preamble_init(&rx, &soft, 10);
        let track = ekf_forward(&rx, &soft, &model, &init).unwrap();
        let (sm, _) = rts_backward(&track).unwrap();
        let fl = track.filtered();
        let data: Vec<usize> = f.data_positions().filter(|k| *k < len - 1).collect();
        let strict = data.iter().filter(|k| sm.p(**k, 0, 0, 0) < fl.p(**k, 0, 0, 0)).count();
        assert!(strict as f64 >= 0.9 * data.len() as f64);
        let avg = |p: &PhasePosterior| (0..len).map(|k| p.p(k, 0, 0, 0) + p.p(k, 0, 1, 1)).sum::<f64>();
        assert!(avg(&sm) <= avg(&fl));
        for k in 0..len {
            let e = sm.cov_mat(k, 0).sym_eigenvalues();
            assert!(e.iter().all(|v| *v >= -1e-10));
            assert!((sm.p(k, 0, 0, 1) - sm.p(k, 0, 1, 0)).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_covariance() {
        let (rx, soft, _) = pilot_frame(60, 2, 1, (4f64).to_radians().powi(2), 0.05, 16);
        let opts = SmootherOptions {
            var_t: (4f64).to_radians().powi(2),
            var_r: (4f64).to_radians().powi(2),
            preamble: 10,
            zero_symbol_variance: false,
        };
        let (a, _) = smooth(&rx, &soft, &opts).unwrap();
        let phi = 0.7;
        let mut rot = rx.clone();
        rot.r.iter_mut().for_each(|r| *r *= Complex64::from_polar(1.0, phi));
        let (b, _) = smooth(&rot, &soft, &opts).unwrap();
        for k in 0..60 {
            for m in 0..2 {
                let d = wrap(b.theta(k, m, 0) - a.theta(k, m, 0) - phi).abs();
                assert!(d < (0.2f64).to_radians(), "k={k}: {}", d.to_degrees());
            }
        }
    }
}
