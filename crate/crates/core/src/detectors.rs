//! Symbol detectors driven by the smoothed Gaussian phase posterior
//! (Gauss-MAP, EUC-MAP, VB-MAP), the smoother/detector iteration, and the
//! common entry point for every receiver kind.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{Constellation, Gains, ReceivedFrame};
use crate::circmath::{ln_i0_scaled, wrap};
use crate::smoother::{smooth, soft_stats, PhasePosterior, SmootherDiagnostics, SmootherOptions, SoftSymbol};
use crate::spa::{pair_index, spa_map_run, CrossTerm, JointSymbolBelief, SpaParams, SymbolPrior};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "spa-map")]
    SpaMap,
    #[serde(rename = "gauss-map")]
    GaussMap,
    #[serde(rename = "euc-map")]
    EucMap,
    #[serde(rename = "vb-map")]
    VbMap,
    #[serde(rename = "genie-spa-map")]
    GenieSpaMap,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::SpaMap,
        DetectorKind::GaussMap,
        DetectorKind::EucMap,
        DetectorKind::VbMap,
        DetectorKind::GenieSpaMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::SpaMap => "spa-map",
            DetectorKind::GaussMap => "gauss-map",
            DetectorKind::EucMap => "euc-map",
            DetectorKind::VbMap => "vb-map",
            DetectorKind::GenieSpaMap => "genie-spa-map",
        }
    }

    pub fn uses_smoother(self) -> bool {
        matches!(self, DetectorKind::GaussMap | DetectorKind::EucMap | DetectorKind::VbMap)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown detector {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectorDiagnostics {
    /// Gauss-MAP Bessel arguments clamped at zero.
    pub clamped: u64,
    /// Covariance pairs with positive correlation (|ũ| set to 0).
    pub utilde_fallback: u64,
    pub smoother: SmootherDiagnostics,
}

impl std::ops::AddAssign for DetectorDiagnostics {
    fn add_assign(&mut self, o: Self) {
        self.clamped += o.clamped;
        self.utilde_fallback += o.utilde_fallback;
        self.smoother += o.smoother;
    }
}

/// Cross-correlation magnitude `|ũ|` matching a 2×2 covariance block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UtildeSolve {
    pub p11: f64,
    pub p22: f64,
    pub p12: f64,
    pub u: f64,
    /// `P12 > 0` admits no nonnegative root; `u` was set to 0.
    pub fallback: bool,
}

impl UtildeSolve {
    /// `P12 + |ũ| / sqrt((1/P11 - |ũ|)(1/P22 - |ũ|))`.
    pub fn residual(&self) -> f64 {
        let (a, b) = (1.0 / self.p11, 1.0 / self.p22);
        self.p12 + self.u / ((a - self.u) * (b - self.u)).sqrt()
    }
}

/// Solves `P12 = -u / sqrt((1/P11 - u)(1/P22 - u))` for `u ≥ 0`.
///
/// Squaring gives `(q - 1)u² - q(a + b)u + qab = 0` with `q = P12²`,
/// `a = 1/P11`, `b = 1/P22`; the root in `[0, min(a, b))` is taken in the
/// cancellation-free form.
pub fn solve_u_tilde(p11: f64, p22: f64, p12: f64) -> Result<UtildeSolve> {
    if !(p11 > 0.0 && p22 > 0.0) || !p12.is_finite() {
        return Err(Error::Domain(format!("bad covariance block ({p11}, {p22}, {p12})")));
    }
    if p12 > 0.0 {
        return Ok(UtildeSolve { p11, p22, p12, u: 0.0, fallback: true });
    }
    let (a, b) = (1.0 / p11, 1.0 / p22);
    let q = p12 * p12;
    let disc = q * q * (a - b) * (a - b) + 4.0 * q * a * b;
    let den = q * (a + b) + disc.sqrt();
    let u = if den > 0.0 { 2.0 * q * a * b / den } else { 0.0 };
    Ok(UtildeSolve { p11, p22, p12, u, fallback: false })
}

/// Euclidean detector treating the phase estimates as exact.
pub fn euc_map_belief(
    r: &[Complex64],
    post: &PhasePosterior,
    k: usize,
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
) -> JointSymbolBelief {
    vb_like(r, post, k, gains, n0, constellation, false)
}

/// Variational detector: expected log-likelihood under the Gaussian phase
/// posterior, to second order,
/// `-(1/N0) Σ_n [ |r - Σ_m g e^{jθ̂}|² + Σ_m |g_m|² P_mm + Σ_{m≠l} g_m g_l^* P_ml e^{j(θ̂_m - θ̂_l)} ]`
/// with `g_m = h^(m,n) c_m`.
pub fn vb_belief(
    r: &[Complex64],
    post: &PhasePosterior,
    k: usize,
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
) -> JointSymbolBelief {
    vb_like(r, post, k, gains, n0, constellation, true)
}

fn vb_like(
    r: &[Complex64],
    post: &PhasePosterior,
    k: usize,
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
    with_covariance: bool,
) -> JointSymbolBelief {
    let (nt, nr) = (post.nt, post.nr);
    let size = constellation.size();
    // Rotated effective symbols g e^{jθ̂} per (m, n, i).
    let mut rot = vec![Complex64::new(0.0, 0.0); nt * nr * size];
    for m in 0..nt {
        for n in 0..nr {
            let e = gains.get(m, n) * Complex64::from_polar(1.0, post.theta(k, m, n));
            for i in 0..size {
                rot[(m * nr + n) * size + i] = e * constellation.point(i);
            }
        }
    }
    let total = size.pow(nt as u32);
    let mut digits = vec![0usize; nt];
    let mut logp = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        for d in digits.iter_mut() {
            *d = rem % size;
            rem /= size;
        }
        let mut v = 0.0;
        for n in 0..nr {
            let mut s = r[n];
            for m in 0..nt {
                s -= rot[(m * nr + n) * size + digits[m]];
            }
            v += s.norm_sqr();
            if with_covariance {
                for m in 0..nt {
                    let gm = rot[(m * nr + n) * size + digits[m]];
                    v += gm.norm_sqr() * post.p(k, n, m, m);
                    for l in 0..nt {
                        if l != m {
                            let gl = rot[(l * nr + n) * size + digits[l]];
                            v += (gm * gl.conj()).re * post.p(k, n, m, l);
                        }
                    }
                }
            }
        }
        logp.push(-v / n0);
    }
    JointSymbolBelief::from_log(nt, size, logp)
}

/// Smoother-detector: marginalizes the current likelihood against the
/// Gaussian phase posterior mapped to a Tikhonov form,
/// `-Σ_n Σ_m |g|²/N0 + Σ_n ln I0(max(0, Σ_m |u^(m,n)| - Σ_{m<l} Re[ũ^(m,l,n) e^{-j(θ̂_m - θ̂_l)}]))`
/// with `u^(m,n) = (2/N0) r_n g_m^* + e^{jθ̂}/P_mm` and
/// `ũ^(m,l,n) = (2/N0) g_l g_m^* + |ũ| e^{j(θ̂_m - θ̂_l)}`.
pub fn gauss_map_belief(
    r: &[Complex64],
    post: &PhasePosterior,
    k: usize,
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
    diag: &mut DetectorDiagnostics,
) -> Result<JointSymbolBelief> {
    let (nt, nr) = (post.nt, post.nr);
    let size = constellation.size();
    let s2 = 2.0 / n0;
    // Per receive antenna: common offset Σ 1/P_mm - Σ |ũ|, which cancels
    // across candidates, and the candidate-dependent remainder built from
    // the tables below.
    let mut offset = vec![0.0; nr];
    let mut own = vec![0.0; nt * nr * size];
    let mut energy = vec![0.0; nt * size];
    let pairs = nt * (nt.saturating_sub(1)) / 2;
    let mut cross = vec![0.0; pairs * nr * size * size];
    for n in 0..nr {
        for m in 0..nt {
            let pmm = post.p(k, n, m, m);
            let big = 1.0 / pmm;
            offset[n] += big;
            let th = post.theta(k, m, n);
            let h = gains.get(m, n);
            for i in 0..size {
                let g = h * constellation.point(i);
                // |big + v| - big without cancellation, v = (2/N0) r g^* e^{-jθ̂}.
                let v = r[n] * g.conj() * s2 * Complex64::from_polar(1.0, -th);
                let mag = (big + v).norm();
                own[(m * nr + n) * size + i] = (2.0 * big * v.re + v.norm_sqr()) / (mag + big);
                energy[m * size + i] += g.norm_sqr() / n0;
            }
            for l in m + 1..nt {
                let sol = solve_u_tilde(pmm, post.p(k, n, l, l), post.p(k, n, m, l))?;
                if sol.fallback {
                    diag.utilde_fallback += 1;
                }
                offset[n] -= sol.u;
                let dth = post.theta(k, m, n) - post.theta(k, l, n);
                let rot = Complex64::from_polar(1.0, -dth);
                let p = pair_index(m, l, nt);
                for j in 0..size {
                    let gl = gains.get(l, n) * constellation.point(j);
                    for i in 0..size {
                        let gm = h * constellation.point(i);
                        cross[((p * nr + n) * size + j) * size + i] = (gl * gm.conj() * s2 * rot).re;
                    }
                }
            }
        }
    }
    let total = size.pow(nt as u32);
    let mut digits = vec![0usize; nt];
    let mut logp = Vec::with_capacity(total);
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
        for n in 0..nr {
            let mut delta = 0.0;
            for m in 0..nt {
                delta += own[(m * nr + n) * size + digits[m]];
                for l in m + 1..nt {
                    let p = pair_index(m, l, nt);
                    delta -= cross[((p * nr + n) * size + digits[l]) * size + digits[m]];
                }
            }
            let x = offset[n] + delta;
            // ln I0(x) - offset, evaluated without forming the large offset.
            v += if x > 0.0 {
                delta + ln_i0_scaled(x)
            } else {
                diag.clamped += 1;
                -offset[n]
            };
        }
        logp.push(v);
    }
    Ok(JointSymbolBelief::from_log(nt, size, logp))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorParams {
    pub var_t: f64,
    pub var_r: f64,
    /// Smoother/detector rounds for the smoother-based receivers.
    pub n_iters: usize,
    /// Leading pilots used to initialize the smoother.
    pub preamble: usize,
    pub zero_symbol_variance: bool,
}

fn soft_from(belief: Option<&JointSymbolBelief>, prior: &SymbolPrior, c: &Constellation) -> Vec<SoftSymbol> {
    match belief {
        Some(b) => {
            let app = b.with_prior(prior);
            (0..prior.nt).map(|m| soft_stats(&app.marginal(m), c)).collect()
        }
        None => (0..prior.nt).map(|m| soft_stats(prior.row(m), c)).collect(),
    }
}

/// Alternates the smoother and the detector of `kind`. The first smoother
/// pass sees only the priors (pilots exact, uniform data gives (0, Es)).
/// VB-MAP starts from an EUC-MAP pass. Returns extrinsic beliefs and the
/// final phase posterior.
pub fn iterate(
    rx: &ReceivedFrame,
    kind: DetectorKind,
    priors: &[SymbolPrior],
    constellation: &Constellation,
    params: &DetectorParams,
) -> Result<(Vec<JointSymbolBelief>, PhasePosterior, DetectorDiagnostics)> {
    if !kind.uses_smoother() {
        return Err(Error::Config(format!("{kind} does not use the smoother")));
    }
    let len = rx.len;
    if priors.len() != len {
        return Err(Error::Dimension(format!("{} priors for {len} symbols", priors.len())));
    }
    let opts = SmootherOptions {
        var_t: params.var_t,
        var_r: params.var_r,
        preamble: params.preamble,
        zero_symbol_variance: params.zero_symbol_variance,
    };
    let mut diag = DetectorDiagnostics::default();
    let mut beliefs: Option<Vec<JointSymbolBelief>> = None;
    let mut last_post = None;
    for it in 0..params.n_iters.max(1) {
        let soft: Vec<SoftSymbol> = (0..len)
            .flat_map(|k| soft_from(beliefs.as_ref().map(|b| &b[k]), &priors[k], constellation))
            .collect();
        let (post, sd) = smooth(rx, &soft, &opts)?;
        diag.smoother += sd;
        let op = match kind {
            DetectorKind::VbMap if it == 0 => DetectorKind::EucMap,
            other => other,
        };
        let mut out = Vec::with_capacity(len);
        for k in 0..len {
            let r = rx.row(k);
            let b = match op {
                DetectorKind::EucMap => euc_map_belief(r, &post, k, &rx.gains, rx.n0, constellation),
                DetectorKind::VbMap => vb_belief(r, &post, k, &rx.gains, rx.n0, constellation),
                _ => gauss_map_belief(r, &post, k, &rx.gains, rx.n0, constellation, &mut diag)?,
            };
            out.push(b);
        }
        beliefs = Some(out);
        last_post = Some(post);
    }
    Ok((beliefs.expect("at least one round"), last_post.expect("at least one round"), diag))
}

/// Runs any receiver on a frame. `priors` must hold point masses at pilot
/// positions. The genie receiver needs the transmitted symbol indices.
pub fn detect(
    kind: DetectorKind,
    rx: &ReceivedFrame,
    priors: &[SymbolPrior],
    constellation: &Constellation,
    params: &DetectorParams,
    truth: Option<&[usize]>,
) -> Result<(Vec<JointSymbolBelief>, DetectorDiagnostics)> {
    let spa = SpaParams { var_t: params.var_t, var_r: params.var_r, cross: CrossTerm::default() };
    match kind {
        DetectorKind::SpaMap => Ok((spa_map_run(rx, priors, constellation, spa)?, Default::default())),
        DetectorKind::GenieSpaMap => {
            let truth = truth.ok_or_else(|| Error::Config("genie receiver needs the true symbols".into()))?;
            let nt = rx.gains.nt;
            let genie: Vec<SymbolPrior> = truth
                .chunks(nt)
                .map(|s| SymbolPrior::delta(s, constellation.size()))
                .collect();
            Ok((spa_map_run(rx, &genie, constellation, spa)?, Default::default()))
        }
        _ => {
            let (b, _, d) = iterate(rx, kind, priors, constellation, params)?;
            Ok((b, d))
        }
    }
}

/// Largest absolute per-candidate log-pmf difference after removing the
/// mean offset; used for fixed-point checks.
pub fn max_pmf_change(a: &[JointSymbolBelief], b: &[JointSymbolBelief]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.log_pmf().iter().zip(y.log_pmf()).map(|(p, q)| (p.exp() - q.exp()).abs()))
        .fold(0.0, f64::max)
}

/// Mean phase error helper for diagnostics: wrapped error of the smoothed
/// estimate against a reference, in radians.
pub fn phase_error(post: &PhasePosterior, k: usize, m: usize, n: usize, truth: f64) -> f64 {
    wrap(post.theta(k, m, n) - truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ConstellationKind;
    use crate::circmath::logsumexp;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_post(theta: &[f64], cov: &[f64], nt: usize) -> PhasePosterior {
        let mut p = PhasePosterior::new(1, nt, 1);
        p.theta.copy_from_slice(theta);
        p.cov.copy_from_slice(cov);
        p
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DetectorKind::ALL {
            assert_eq!(k.name().parse::<DetectorKind>().unwrap(), k);
            let j = serde_json::to_string(&k).unwrap();
            assert_eq!(j, format!("\"{}\"", k.name()));
        }
        assert!("mmse".parse::<DetectorKind>().is_err());
    }

    #[test]
    fn utilde_examples() {
        let s = solve_u_tilde(0.1, 0.2, 0.0).unwrap();
        assert_eq!(s.u, 0.0);
        let s = solve_u_tilde(0.1, 0.1, -0.05).unwrap();
        assert!((s.u - 0.476_190_476_190_476).abs() < 1e-9);
        // Symmetric closed form u = P12 / (p (P12 - 1)).
        assert!((s.u - (-0.05) / (0.1 * (-0.05 - 1.0))).abs() < 1e-12);
        assert!(s.residual().abs() < 1e-12);
        let s = solve_u_tilde(0.1, 0.1, 0.01).unwrap();
        assert!(s.fallback && s.u == 0.0);
        assert!(solve_u_tilde(0.0, 0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn utilde_back_substitutes(p11 in 1e-6f64..2.0, p22 in 1e-6f64..2.0, rho in 0.0f64..0.999) {
            let p12 = -rho * (p11 * p22).sqrt();
            let s = solve_u_tilde(p11, p22, p12).unwrap();
            prop_assert!(s.u >= 0.0 && s.u < (1.0 / p11).min(1.0 / p22));
            prop_assert!(s.residual().abs() <= 1e-9 * (1.0 + p12.abs()));
        }
    }

    #[test]
    fn vb_equals_euc_at_zero_covariance() {
        let qam = Constellation::new(ConstellationKind::Qam16);
        let post = single_post(&[0.3, -1.2], &[0.0; 4], 2);
        let g = Gains::unit(2, 1);
        let r = [c(0.4, -0.2)];
        let a = vb_belief(&r, &post, 0, &g, 0.2, &qam);
        let b = euc_map_belief(&r, &post, 0, &g, 0.2, &qam);
        for (x, y) in a.log_pmf().iter().zip(b.log_pmf()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn euc_decides_truth_without_noise() {
        let qpsk = Constellation::new(ConstellationKind::Qpsk);
        let g = Gains::unit(2, 2);
        let th = [0.4, -0.3, 2.0, 1.0];
        let post = PhasePosterior { len: 1, nt: 2, nr: 2, theta: th.to_vec(), cov: vec![0.0; 8] };
        let sent = [3, 1];
        let r: Vec<Complex64> = (0..2)
            .map(|n| (0..2).map(|m| qpsk.point(sent[m]) * Complex64::from_polar(1.0, post.theta(0, m, n))).sum())
            .collect();
        let b = euc_map_belief(&r, &post, 0, &g, 1e-6, &qpsk);
        assert_eq!(b.decision(), sent.to_vec());
    }

    #[test]
    fn gauss_map_agrees_with_euc_in_small_covariance_limit() {
        let qpsk = Constellation::new(ConstellationKind::Qpsk);
        let g = Gains::unit(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut agree = 0;
        let trials = 2000;
        for _ in 0..trials {
            let th = [rng.random::<f64>() * 6.0 - 3.0, rng.random::<f64>() * 6.0 - 3.0];
            let post = single_post(&th, &[1e-12, 0.0, 0.0, 1e-12], 2);
            let r = [c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)];
            let mut d = DetectorDiagnostics::default();
            let a = gauss_map_belief(&r, &post, 0, &g, 0.3, &qpsk, &mut d).unwrap();
            let b = euc_map_belief(&r, &post, 0, &g, 0.3, &qpsk);
            agree += (a.argmax() == b.argmax()) as usize;
        }
        assert!(agree as f64 >= 0.999 * trials as f64, "{agree}");
    }

    #[test]
    fn gauss_map_symmetric_inputs() {
        let bpsk = Constellation::new(ConstellationKind::Bpsk);
        let post = single_post(&[0.2], &[0.01], 1);
        let mut d = DetectorDiagnostics::default();
        let b = gauss_map_belief(&[c(0.0, 0.0)], &post, 0, &Gains::unit(1, 1), 0.5, &bpsk, &mut d).unwrap();
        assert!((b.log_pmf()[0] - b.log_pmf()[1]).abs() < 1e-12);
    }

    #[test]
    fn vb_cross_term_is_real_and_normalized() {
        let qam = Constellation::new(ConstellationKind::Qam16);
        let post = single_post(&[0.3, -1.2], &[0.01, -0.004, -0.004, 0.02], 2);
        let b = vb_belief(&[c(0.1, 0.5)], &post, 0, &Gains::unit(2, 1), 0.4, &qam);
        assert!(logsumexp(b.log_pmf()).abs() < 1e-10);
        assert!(b.log_pmf().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn vb_penalizes_energetic_symbols_under_uncertainty() {
        let qam = Constellation::new(ConstellationKind::Qam16);
        let sharp = single_post(&[0.0], &[0.0], 1);
        let loose = single_post(&[0.0], &[0.05], 1);
        let g = Gains::unit(1, 1);
        let r = [c(0.0, 0.0)];
        let a = vb_belief(&r, &sharp, 0, &g, 0.5, &qam);
        let b = vb_belief(&r, &loose, 0, &g, 0.5, &qam);
        // Outer corner (index 10: +3+3j) loses mass relative to inner (15: +1+1j).
        let ratio = |x: &JointSymbolBelief| x.log_pmf()[10] - x.log_pmf()[15];
        assert!(ratio(&b) < ratio(&a));
    }
}
