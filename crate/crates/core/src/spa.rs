//! SPA-MAP: forward/backward Tikhonov message recursions over the link
//! phases and the resulting per-symbol posterior.
//!
//! A message over the oscillator phases is carried as
//!
//! ```text
//! exp Re[ Σ_n Σ_m a^(m,n) e^{-j(θt_m + θr_n)} - Σ_{m<l} ã^(m,l) e^{-j(θt_m - θt_l)} ]
//! ```
//!
//! Known channel gains enter as effective per-link symbols `h^(m,n) c^(m)`.

use num_complex::Complex64;

use crate::channel::{Constellation, Gains, ReceivedFrame};
use crate::circmath::{bessel_i1_over_i0, ln_i0, ln_i0_scaled, logsumexp, BivariateTikhonovParam};
use crate::smoother::linalg::Mat;
use crate::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Index of the unordered transmit pair `(m, l)`, `m < l`, in row order.
#[inline]
pub fn pair_index(m: usize, l: usize, nt: usize) -> usize {
    debug_assert!(m < l && l < nt);
    m * (2 * nt - m - 1) / 2 + (l - m - 1)
}

#[inline]
pub fn pair_count(nt: usize) -> usize {
    nt * (nt - 1) / 2
}

/// Per-antenna symbol pmfs, `p[m * size + i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolPrior {
    pub nt: usize,
    pub size: usize,
    pub p: Vec<f64>,
}

impl SymbolPrior {
    pub fn uniform(nt: usize, size: usize) -> Self {
        SymbolPrior { nt, size, p: vec![1.0 / size as f64; nt * size] }
    }

    /// Point masses at the given per-antenna indices.
    pub fn delta(indices: &[usize], size: usize) -> Self {
        let mut p = vec![0.0; indices.len() * size];
        for (m, i) in indices.iter().enumerate() {
            p[m * size + i] = 1.0;
        }
        SymbolPrior { nt: indices.len(), size, p }
    }

    pub fn from_rows(nt: usize, size: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != nt * size {
            return Err(Error::Dimension(format!("prior needs {} entries", nt * size)));
        }
        for row in p.chunks(size) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|x| !(*x >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("prior row is not a pmf (sum {s})")));
            }
        }
        Ok(SymbolPrior { nt, size, p })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.p[m * self.size..(m + 1) * self.size]
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.size as f64;
        self.p.iter().all(|x| (x - u).abs() < 1e-15)
    }
}

/// Moment-matched Gaussian summary of a symbol prior: per-antenna mean
/// `alpha` and energy `beta`, and per-receive-antenna innovation variance
/// `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMoments {
    pub alpha: Vec<Complex64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

pub fn prior_moments(
    prior: &SymbolPrior,
    constellation: &Constellation,
    gains: &Gains,
    n0: f64,
) -> PriorMoments {
    let nt = prior.nt;
    let mut alpha = vec![ZERO; nt];
    let mut beta = vec![0.0; nt];
    for m in 0..nt {
        for (i, p) in prior.row(m).iter().enumerate() {
            let c = constellation.point(i);
            alpha[m] += c * *p;
            beta[m] += c.norm_sqr() * *p;
        }
    }
    let gamma = (0..gains.nr)
        .map(|n| {
            let mut g = n0;
            for m in 0..nt {
                let h2 = gains.get(m, n).norm_sqr();
                g += h2 * (beta[m] - alpha[m].norm_sqr());
            }
            g
        })
        .collect();
    PriorMoments { alpha, beta, gamma }
}

/// Tikhonov message parameters: per-link `a[m * nr + n]` and per-pair
/// cross terms `at[pair_index(m, l)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TikhonovMessageState {
    pub nt: usize,
    pub nr: usize,
    pub a: Vec<Complex64>,
    pub at: Vec<Complex64>,
}

impl TikhonovMessageState {
    /// Uniform message.
    pub fn zero(nt: usize, nr: usize) -> Self {
        TikhonovMessageState { nt, nr, a: vec![ZERO; nt * nr], at: vec![ZERO; pair_count(nt)] }
    }

    #[inline]
    pub fn link(&self, m: usize, n: usize) -> Complex64 {
        self.a[m * self.nr + n]
    }

    #[inline]
    pub fn cross(&self, m: usize, l: usize) -> Complex64 {
        self.at[pair_index(m, l, self.nt)]
    }

    /// Unnormalized log message at the given oscillator phases.
    pub fn log_kernel(&self, theta_t: &[f64], theta_r: &[f64]) -> f64 {
        let re = |z: Complex64, t: f64| z.re * t.cos() + z.im * t.sin();
        let mut s = 0.0;
        for m in 0..self.nt {
            for n in 0..self.nr {
                s += re(self.link(m, n), theta_t[m] + theta_r[n]);
            }
            for l in m + 1..self.nt {
                s -= re(self.cross(m, l), theta_t[m] - theta_t[l]);
            }
        }
        s
    }

    /// Largest violation, in radians, of `∠ã^(m,l) = ∠a^(m,n) - ∠a^(l,n)`
    /// over pairs and receive antennas; `None` when every cross term is
    /// negligible.
    pub fn constraint_residual(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for m in 0..self.nt {
            for l in m + 1..self.nt {
                let c = self.cross(m, l);
                if c.norm() < 1e-12 {
                    continue;
                }
                for n in 0..self.nr {
                    let (am, al) = (self.link(m, n), self.link(l, n));
                    if am.norm() < 1e-12 || al.norm() < 1e-12 {
                        continue;
                    }
                    let d = crate::circmath::wrap(c.arg() - (am.arg() - al.arg())).abs();
                    worst = Some(worst.map_or(d, |w: f64| w.max(d)));
                }
            }
        }
        worst
    }

    fn check_finite(&self, k: usize) -> Result<()> {
        let ok = self.a.iter().chain(&self.at).all(|z| z.re.is_finite() && z.im.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Numerical { index: k, msg: "non-finite Tikhonov message".into() })
        }
    }
}

/// Observation factor parameters `x^(m,n) = (2/γ_n) r_n (h α_m)^*` and
/// `x̃^(m,l) = Σ_n (2/γ_n) (h α_l)(h α_m)^*`, laid out like a message.
pub fn pd_params(
    r: &[Complex64],
    moments: &PriorMoments,
    gains: &Gains,
) -> Result<TikhonovMessageState> {
    let (nt, nr) = (gains.nt, gains.nr);
    let mut x = TikhonovMessageState::zero(nt, nr);
    for n in 0..nr {
        let g = moments.gamma[n];
        if !(g > 0.0) {
            return Err(Error::Domain(format!("innovation variance must be positive, got {g}")));
        }
        let s = 2.0 / g;
        for m in 0..nt {
            let em = gains.get(m, n) * moments.alpha[m];
            x.a[m * nr + n] = r[n] * em.conj() * s;
            for l in m + 1..nt {
                let el = gains.get(l, n) * moments.alpha[l];
                x.at[pair_index(m, l, nt)] += el * em.conj() * s;
            }
        }
    }
    Ok(x)
}

/// 2×1 observation factor as a bivariate Tikhonov parameter.
pub fn pd_params_2x1(r: Complex64, moments: &PriorMoments) -> Result<BivariateTikhonovParam> {
    let x = pd_params(&[r], moments, &Gains::unit(2, 1))?;
    BivariateTikhonovParam::new(x.a[0], x.a[1], x.at[0].norm())
}

/// Absorbs the observation at a neighbouring index into `prev` and
/// propagates it through the Wiener phase step.
fn propagate(
    prev: &TikhonovMessageState,
    r: &[Complex64],
    moments: &PriorMoments,
    gains: &Gains,
    var_t: f64,
    var_r: f64,
    k: usize,
) -> Result<TikhonovMessageState> {
    let (nt, nr) = (prev.nt, prev.nr);
    let x = pd_params(r, moments, gains)?;
    let mut abar: Vec<Complex64> = prev.a.iter().zip(&x.a).map(|(a, b)| a + b).collect();
    let atbar: Vec<Complex64> = prev.at.iter().zip(&x.at).map(|(a, b)| a + b).collect();

    for n in 0..nr {
        let s: f64 = (0..nt).map(|m| abar[m * nr + n].norm()).sum();
        let d = 1.0 + var_r * s;
        for m in 0..nt {
            abar[m * nr + n] /= d;
        }
    }
    let mut dt = vec![1.0; nt];
    for (m, d) in dt.iter_mut().enumerate() {
        let own: f64 = (0..nr).map(|n| abar[m * nr + n].norm()).sum();
        let cross: f64 = (0..nt)
            .filter(|l| *l != m)
            .map(|l| atbar[pair_index(m.min(l), m.max(l), nt)].norm())
            .sum();
        *d = 1.0 + var_t * (own - cross).abs();
    }
    let mut out = TikhonovMessageState::zero(nt, nr);
    for m in 0..nt {
        for n in 0..nr {
            out.a[m * nr + n] = abar[m * nr + n] / dt[m];
        }
        for l in m + 1..nt {
            let p = pair_index(m, l, nt);
            out.at[p] = atbar[p] / (dt[m] * dt[l]);
        }
    }
    out.check_finite(k)?;
    Ok(out)
}

/// Forward message at `k` from the message at `k-1` and the observation
/// `r_{k-1}`.
pub fn forward_step(
    prev: &TikhonovMessageState,
    r_prev: &[Complex64],
    moments_prev: &PriorMoments,
    gains: &Gains,
    var_t: f64,
    var_r: f64,
    k: usize,
) -> Result<TikhonovMessageState> {
    propagate(prev, r_prev, moments_prev, gains, var_t, var_r, k)
}

/// Backward message at `k` from the message at `k+1` and the observation
/// `r_{k+1}`.
pub fn backward_step(
    next: &TikhonovMessageState,
    r_next: &[Complex64],
    moments_next: &PriorMoments,
    gains: &Gains,
    var_t: f64,
    var_r: f64,
    k: usize,
) -> Result<TikhonovMessageState> {
    propagate(next, r_next, moments_next, gains, var_t, var_r, k)
}

/// Normalized log pmf over the joint transmit vector. Candidate `idx`
/// encodes antenna `m`'s point index as base-`size` digit `m` (antenna 0
/// least significant).
#[derive(Clone, Debug, PartialEq)]
pub struct JointSymbolBelief {
    pub nt: usize,
    pub size: usize,
    logp: Vec<f64>,
}

impl JointSymbolBelief {
    /// Normalizes arbitrary log weights. Falls back to uniform if every
    /// weight is `-inf` or NaN.
    pub fn from_log(nt: usize, size: usize, mut logp: Vec<f64>) -> Self {
        debug_assert_eq!(logp.len(), size.pow(nt as u32));
        for v in logp.iter_mut() {
            if v.is_nan() {
                *v = f64::NEG_INFINITY;
            }
        }
        let z = logsumexp(&logp);
        if z.is_finite() {
            logp.iter_mut().for_each(|v| *v -= z);
        } else {
            let u = -(logp.len() as f64).ln();
            logp.iter_mut().for_each(|v| *v = u);
        }
        JointSymbolBelief { nt, size, logp }
    }

    pub fn uniform(nt: usize, size: usize) -> Self {
        Self::from_log(nt, size, vec![0.0; size.pow(nt as u32)])
    }

    pub fn delta(indices: &[usize], size: usize) -> Self {
        let nt = indices.len();
        let mut logp = vec![f64::NEG_INFINITY; size.pow(nt as u32)];
        logp[encode(indices, size)] = 0.0;
        JointSymbolBelief { nt, size, logp }
    }

    pub fn log_pmf(&self) -> &[f64] {
        &self.logp
    }

    pub fn candidates(&self) -> usize {
        self.logp.len()
    }

    /// Per-antenna marginal pmf.
    pub fn marginal(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        let div = self.size.pow(m as u32);
        for (idx, lp) in self.logp.iter().enumerate() {
            out[(idx / div) % self.size] += lp.exp();
        }
        out
    }

    /// Most likely candidate, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.logp.iter().enumerate() {
            if *v > self.logp[best] {
                best = i;
            }
        }
        best
    }

    pub fn decision(&self) -> Vec<usize> {
        decode(self.argmax(), self.nt, self.size)
    }

    /// Product with an independent per-antenna prior, renormalized.
    pub fn with_prior(&self, prior: &SymbolPrior) -> Self {
        let lp = log_prior_table(prior);
        let v = self
            .logp
            .iter()
            .enumerate()
            .map(|(idx, l)| l + candidate_log_prior(&lp, idx, self.nt, self.size))
            .collect();
        Self::from_log(self.nt, self.size, v)
    }
}

#[inline]
pub fn encode(indices: &[usize], size: usize) -> usize {
    indices.iter().rev().fold(0, |acc, i| acc * size + i)
}

pub fn decode(mut idx: usize, nt: usize, size: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(nt);
    for _ in 0..nt {
        out.push(idx % size);
        idx /= size;
    }
    out
}

pub(crate) fn log_prior_table(prior: &SymbolPrior) -> Vec<f64> {
    prior.p.iter().map(|p| p.ln()).collect()
}

#[inline]
pub(crate) fn candidate_log_prior(table: &[f64], mut idx: usize, nt: usize, size: usize) -> f64 {
    let mut s = 0.0;
    for m in 0..nt {
        s += table[m * size + idx % size];
        idx /= size;
    }
    s
}

/// How the pairwise cross terms enter the joint symbol posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CrossTerm {
    /// A separate `ln I0(|z̃|)` factor per transmit pair, as if the cross
    /// phase were independent of the link phases.
    Factorized,
    /// `-Re[z̃ e^{-jψ}]` evaluated at the relative transmit phase
    /// `ψ = ∠Σ_n z^(m,n) z^(l,n)*` that the link terms favour.
    Aligned,
    /// Transmit phases integrated numerically: receive phases in closed
    /// form, then trapezoid quadrature over the relative phase for two
    /// transmit antennas, or a sum over local maxima with von Mises widths
    /// for more.
    #[default]
    Integrated,
}

const QUAD_NODES_PER_ROOT: f64 = 6.0;
const QUAD_NODES_MIN: usize = 16;
const PROFILE_SWEEPS: usize = 12;

/// `ln (1/2π) ∫ Π_n I0(|z_1n + z_2n e^{jψ}|) e^{-Re[z̃ e^{-jψ}]} dψ` by the
/// trapezoid rule, with the node count scaled to the sharpest factor.
fn relative_phase_quadrature(z: &[Complex64], zt: Complex64, nr: usize, buf: &mut Vec<f64>) -> f64 {
    let k: f64 = (0..nr).map(|n| z[n].norm().min(z[nr + n].norm())).sum::<f64>() + zt.norm();
    quadrature_with_nodes(z, zt, nr, quadrature_nodes(k), buf)
}

/// Trapezoid nodes for total relative-phase concentration `k`: the
/// integrand is a periodic bump of width about `1/sqrt(k)`.
#[inline]
fn quadrature_nodes(k: f64) -> usize {
    ((QUAD_NODES_PER_ROOT * k.sqrt()) as usize + QUAD_NODES_MIN).min(4096)
}

fn quadrature_with_nodes(z: &[Complex64], zt: Complex64, nr: usize, nodes: usize, buf: &mut Vec<f64>) -> f64 {
    let step = Complex64::from_polar(1.0, std::f64::consts::TAU / nodes as f64);
    let mut w = Complex64::new(1.0, 0.0);
    buf.clear();
    for i in 0..nodes {
        if i % 64 == 0 {
            w = Complex64::from_polar(1.0, std::f64::consts::TAU * i as f64 / nodes as f64);
        }
        let mut v = -(zt * w.conj()).re;
        for n in 0..nr {
            v += ln_i0((z[n] + z[nr + n] * w).norm_sqr().sqrt());
        }
        buf.push(v);
        w *= step;
    }
    logsumexp(buf) - (nodes as f64).ln()
}

#[inline]
fn unit(z: Complex64) -> Complex64 {
    let n = z.norm();
    if n > 0.0 {
        z / n
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// `ln ∫ exp(G(θ)) dθ` over the transmit phases, with
/// `G(θ) = Σ_n ln I0(|Σ_m z_mn e^{-jθ_m}|) - Σ_{m<l} Re[z̃_ml e^{-j(θ_m-θ_l)}]`
/// (receive phases already integrated). Each local maximum found from a
/// few starting points contributes its peak value and a von Mises width
/// `I0(κ) e^{-κ}` per principal curvature κ.
fn profiled_value(z: &[Complex64], zt: &[Complex64], nt: usize, nr: usize) -> f64 {
    let recv = |rot: &[Complex64], n: usize| -> Complex64 { (0..nt).map(|m| z[m * nr + n] * rot[m]).sum() };
    let value = |rot: &[Complex64]| -> f64 {
        let mut v = 0.0;
        for n in 0..nr {
            v += ln_i0(recv(rot, n).norm());
        }
        for m in 0..nt {
            for l in m + 1..nt {
                v -= (zt[pair_index(m, l, nt)] * rot[m] * rot[l].conj()).re;
            }
        }
        v
    };
    // rot[m] holds e^{-jθ_m}.
    let mut aligned = vec![Complex64::new(1.0, 0.0); nt];
    if nt == 1 {
        return value(&aligned);
    }
    for (m, a) in aligned.iter_mut().enumerate().skip(1) {
        let w: Complex64 = (0..nr).map(|n| z[m * nr + n] * z[n].conj()).sum();
        *a = unit(w).conj();
    }
    let weight: Vec<f64> = (0..nt)
        .map(|m| {
            let own: f64 = (0..nr).map(|n| z[m * nr + n].norm()).sum();
            let cross: f64 = (0..nt).filter(|l| *l != m).map(|l| zt[pair_index(m.min(l), m.max(l), nt)].norm()).sum();
            own + cross
        })
        .collect();
    let mut modes: Vec<Vec<Complex64>> = Vec::new();
    let mut logs = Vec::new();
    for start in 0..nt {
        let mut rot = aligned.clone();
        if start > 0 {
            rot[start] = -rot[start];
        }
        // Fixed-point iteration of the stationarity condition, one
        // transmit phase at a time; y holds the per-receiver sums.
        let mut y: Vec<Complex64> = (0..nr).map(|n| recv(&rot, n)).collect();
        for _ in 0..PROFILE_SWEEPS {
            let mut moved: f64 = 0.0;
            for m in 0..nt {
                let mut c = ZERO;
                for (n, yn) in y.iter().enumerate() {
                    let a = yn.norm();
                    if a > 0.0 {
                        c += z[m * nr + n] * yn.conj() * (bessel_i1_over_i0(a) / a);
                    }
                }
                for l in 0..nt {
                    if l > m {
                        c -= zt[pair_index(m, l, nt)] * rot[l].conj();
                    } else if l < m {
                        c -= zt[pair_index(l, m, nt)].conj() * rot[l].conj();
                    }
                }
                let new = unit(c).conj();
                let d = new - rot[m];
                moved = moved.max(d.norm_sqr());
                for (n, yn) in y.iter_mut().enumerate() {
                    *yn += z[m * nr + n] * d;
                }
                rot[m] = new;
            }
            if moved < 1e-20 {
                break;
            }
        }
        let r0 = rot[0].conj();
        rot.iter_mut().for_each(|x| *x *= r0);
        // Phases of antennas that barely enter G are arbitrary; they do not
        // tell modes apart.
        if modes.iter().any(|q| (0..nt).all(|m| (q[m] - rot[m]).norm() * weight[m] / (1.0 + weight[m]) < 1e-2)) {
            continue;
        }
        logs.push(value(&rot) + width(&rot, &value));
        modes.push(rot);
    }
    logsumexp(&logs)
}

/// `Σ ln(I0(κ) e^{-κ})` over the principal curvatures of `-G` at `rot`
/// with respect to the phases of antennas 1..nt.
fn width(rot: &[Complex64], value: &dyn Fn(&[Complex64]) -> f64) -> f64 {
    let d = rot.len() - 1;
    let h = 1e-3;
    let peak = value(rot);
    let mut hess = Mat::zeros(d, d);
    let mut probe = rot.to_vec();
    let mut shifted = |da: (usize, f64), db: (usize, f64)| -> f64 {
        probe.copy_from_slice(rot);
        probe[da.0] *= Complex64::from_polar(1.0, -da.1);
        probe[db.0] *= Complex64::from_polar(1.0, -db.1);
        value(&probe)
    };
    for a in 0..d {
        for b in a..d {
            let (ia, ib) = (a + 1, b + 1);
            let x = if a == b {
                (shifted((ia, h), (ib, 0.0)) - 2.0 * peak + shifted((ia, -h), (ib, 0.0))) / (h * h)
            } else {
                (shifted((ia, h), (ib, h)) - shifted((ia, h), (ib, -h)) - shifted((ia, -h), (ib, h))
                    + shifted((ia, -h), (ib, -h)))
                    / (4.0 * h * h)
            };
            hess[(a, b)] = -x;
            hess[(b, a)] = -x;
        }
    }
    hess.sym_eigenvalues().into_iter().map(|k| ln_i0_scaled(k.max(0.0))).sum()
}

/// Extrinsic symbol posterior at one index from the forward and backward
/// messages and the current observation:
///
/// ```text
/// -Σ_n Σ_m |h c_m|²/N0 + Σ_n ln I0(Σ_m |z^(m,n)|) + Σ_{m<l} cross(z̃^(m,l))
/// ```
pub fn joint_symbol_posterior(
    fwd: &TikhonovMessageState,
    bwd: &TikhonovMessageState,
    r: &[Complex64],
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
    rule: CrossTerm,
) -> JointSymbolBelief {
    let (nt, nr) = (fwd.nt, fwd.nr);
    let size = constellation.size();
    let s = 2.0 / n0;
    // link[(m * nr + n) * size + i] = a_f + a_b + (2/N0) r_n (h c_i)^*
    let mut link = vec![ZERO; nt * nr * size];
    let mut energy = vec![0.0; nt * size];
    for m in 0..nt {
        for n in 0..nr {
            let base = fwd.link(m, n) + bwd.link(m, n);
            let h = gains.get(m, n);
            for i in 0..size {
                let e = h * constellation.point(i);
                link[(m * nr + n) * size + i] = base + r[n] * e.conj() * s;
                energy[m * size + i] += e.norm_sqr() / n0;
            }
        }
    }
    // cross[(p * size + j) * size + i] for antenna m at point i, l at point j
    let pairs = pair_count(nt);
    let mut cross = vec![0.0; pairs * size * size];
    let mut zt_tab = vec![ZERO; pairs * size * size];
    for m in 0..nt {
        for l in m + 1..nt {
            let p = pair_index(m, l, nt);
            let base = fwd.at[p] + bwd.at[p];
            for j in 0..size {
                for i in 0..size {
                    let mut z = base;
                    let mut w = ZERO;
                    for n in 0..nr {
                        let em = gains.get(m, n) * constellation.point(i);
                        let el = gains.get(l, n) * constellation.point(j);
                        z += el * em.conj() * s;
                        w += link[(m * nr + n) * size + i] * link[(l * nr + n) * size + j].conj();
                    }
                    zt_tab[(p * size + j) * size + i] = z;
                    cross[(p * size + j) * size + i] = match rule {
                        CrossTerm::Integrated => 0.0,
                        CrossTerm::Factorized => ln_i0(z.norm()),
                        CrossTerm::Aligned => {
                            let wn = w.norm();
                            if wn > 0.0 {
                                -(z * w.conj()).re / wn
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
        }
    }
    let total = size.pow(nt as u32);
    let mut digits = vec![0usize; nt];
    let mut logp = Vec::with_capacity(total);
    let mut zc = vec![ZERO; nt * nr];
    let mut ztc = vec![ZERO; pairs];
    let mut buf = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        for d in digits.iter_mut() {
            *d = rem % size;
            rem /= size;
        }
        let mut v = 0.0;
        for m in 0..nt {
            v -= energy[m * size + digits[m]];
        }
        if rule == CrossTerm::Integrated {
            for m in 0..nt {
                for n in 0..nr {
                    zc[m * nr + n] = link[(m * nr + n) * size + digits[m]];
                }
                for l in m + 1..nt {
                    let p = pair_index(m, l, nt);
                    ztc[p] = zt_tab[(p * size + digits[l]) * size + digits[m]];
                }
            }
            let t = if nt == 2 {
                relative_phase_quadrature(&zc, ztc[0], nr, &mut buf)
            } else {
                profiled_value(&zc, &ztc, nt, nr)
            };
            logp.push(v + t);
            continue;
        }
        for n in 0..nr {
            let mut mag = 0.0;
            for m in 0..nt {
                mag += link[(m * nr + n) * size + digits[m]].norm();
            }
            v += ln_i0(mag);
        }
        for m in 0..nt {
            for l in m + 1..nt {
                let p = pair_index(m, l, nt);
                v += cross[(p * size + digits[l]) * size + digits[m]];
            }
        }
        logp.push(v);
    }
    JointSymbolBelief::from_log(nt, size, logp)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaParams {
    pub var_t: f64,
    pub var_r: f64,
    pub cross: CrossTerm,
}

/// Forward and backward messages for every index of a frame.
pub fn spa_messages(
    rx: &ReceivedFrame,
    priors: &[SymbolPrior],
    constellation: &Constellation,
    params: SpaParams,
) -> Result<(Vec<TikhonovMessageState>, Vec<TikhonovMessageState>)> {
    let len = rx.len;
    let (nt, nr) = (rx.gains.nt, rx.gains.nr);
    if priors.len() != len {
        return Err(Error::Dimension(format!("{} priors for {len} symbols", priors.len())));
    }
    let moments: Vec<PriorMoments> =
        priors.iter().map(|p| prior_moments(p, constellation, &rx.gains, rx.n0)).collect();
    let mut fwd = Vec::with_capacity(len);
    fwd.push(TikhonovMessageState::zero(nt, nr));
    for k in 1..len {
        let next = forward_step(
            &fwd[k - 1],
            rx.row(k - 1),
            &moments[k - 1],
            &rx.gains,
            params.var_t,
            params.var_r,
            k,
        )?;
        fwd.push(next);
    }
    let mut bwd = vec![TikhonovMessageState::zero(nt, nr); len];
    for k in (0..len.saturating_sub(1)).rev() {
        bwd[k] = backward_step(
            &bwd[k + 1],
            rx.row(k + 1),
            &moments[k + 1],
            &rx.gains,
            params.var_t,
            params.var_r,
            k,
        )?;
    }
    Ok((fwd, bwd))
}

/// One pass of SPA-MAP: moments, forward and backward recursions, and the
/// extrinsic symbol posteriors. Prior refresh is left to the caller.
pub fn spa_map_run(
    rx: &ReceivedFrame,
    priors: &[SymbolPrior],
    constellation: &Constellation,
    params: SpaParams,
) -> Result<Vec<JointSymbolBelief>> {
    let (fwd, bwd) = spa_messages(rx, priors, constellation, params)?;
    Ok((0..rx.len)
        .map(|k| joint_symbol_posterior(&fwd[k], &bwd[k], rx.row(k), &rx.gains, rx.n0, constellation, params.cross))
        .collect())
}
