//! Brute-force references for the message recursions, the smoother and
//! the detectors, and the named self-checks built on them.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{
    apply_channel, build_frame, pilot_index, sample_phase_trajectories, Constellation, ConstellationKind,
    FrameLayout, Gains, PilotPattern, ReceivedFrame,
};
use crate::coding::pilot_priors;
use crate::circmath::grid::GridDensity;
use crate::circmath::{
    bessel_i1_over_i0, gaussian_smear, ln_i0, logsumexp, wrap, TikhonovParam, WrappedAngle,
};
use crate::detectors::{euc_map_belief, gauss_map_belief, solve_u_tilde, vb_belief, DetectorDiagnostics};
use crate::smoother::linalg::Mat;
use crate::smoother::{ekf_forward, process_model, rts_backward, EksInit, PhasePosterior, SoftSymbol};
use crate::spa::{
    forward_step, joint_symbol_posterior, prior_moments, spa_messages, CrossTerm, JointSymbolBelief, SpaParams,
    SymbolPrior, TikhonovMessageState,
};
use crate::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Hermite rule for
/// `∫ f(x) e^{-x²} dx`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..(n + 1) / 2 {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[f(θ)]` for `θ ~ N(mean, var)` by Gauss-Hermite quadrature.
pub fn gaussian_expectation(mean: f64, var: f64, rule: &(Vec<f64>, Vec<f64>), f: impl Fn(f64) -> f64) -> f64 {
    let s = (2.0 * var).sqrt();
    rule.0.iter().zip(&rule.1).map(|(x, w)| w * f(mean + s * x)).sum::<f64>() / PI.sqrt()
}

/// Single-transmitter log pmf from the exact expectation of the
/// log-likelihood under the Gaussian phase posterior.
pub fn expected_loglik_log_pmf(
    r: &[Complex64],
    post: &PhasePosterior,
    k: usize,
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
    rule: &(Vec<f64>, Vec<f64>),
) -> Result<Vec<f64>> {
    if post.nt != 1 {
        return Err(Error::Dimension("quadrature reference needs one transmit antenna".into()));
    }
    let mut out: Vec<f64> = (0..constellation.size())
        .map(|i| {
            (0..post.nr)
                .map(|n| {
                    let g = gains.get(0, n) * constellation.point(i);
                    gaussian_expectation(post.theta(k, 0, n), post.p(k, n, 0, 0), rule, |t| {
                        -(r[n] - g * Complex64::from_polar(1.0, t)).norm_sqr() / n0
                    })
                })
                .sum()
        })
        .collect();
    let z = logsumexp(&out);
    out.iter_mut().for_each(|v| *v -= z);
    Ok(out)
}

/// Symbol posterior `∫ p(r | c, θ) N(θ; θ̂, P) dθ` by direct integration on
/// a `grid × grid` lattice spanning ±8 standard deviations of each link
/// (non-wrapped; meant for small P). At most two transmit antennas.
pub fn gauss_map_grid_belief(
    r: &[Complex64],
    post: &PhasePosterior,
    k: usize,
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
    grid: usize,
) -> Result<JointSymbolBelief> {
    let (nt, nr) = (post.nt, post.nr);
    if nt == 0 || nt > 2 {
        return Err(Error::Dimension("grid reference supports one or two transmit antennas".into()));
    }
    let size = constellation.size();
    let total = size.pow(nt as u32);
    let mut logp = vec![0.0; total];
    for n in 0..nr {
        let cov = post.cov_mat(k, n);
        let inv = cov
            .inv_spd()
            .ok_or_else(|| Error::Numerical { index: k, msg: "posterior block not positive definite".into() })?;
        let sd: Vec<f64> = (0..nt).map(|m| cov[(m, m)].sqrt()).collect();
        let axis = |m: usize, i: usize| -8.0 * sd[m] + 16.0 * sd[m] * i as f64 / (grid - 1) as f64;
        let cells = grid.pow(nt as u32);
        // Log Gaussian weight per cell (constants cancel after normalization).
        let mut lw = Vec::with_capacity(cells);
        let mut rot = Vec::with_capacity(cells * nt);
        for c in 0..cells {
            let d: Vec<f64> = (0..nt).map(|m| axis(m, (c / grid.pow(m as u32)) % grid)).collect();
            let mut q = 0.0;
            for i in 0..nt {
                for j in 0..nt {
                    q += d[i] * inv[(i, j)] * d[j];
                }
            }
            lw.push(-0.5 * q);
            for (m, dm) in d.iter().enumerate() {
                rot.push(gains.get(m, n) * Complex64::from_polar(1.0, post.theta(k, m, n) + dm));
            }
        }
        let mut terms = vec![0.0; cells];
        for (idx, lp) in logp.iter_mut().enumerate() {
            let digits = [idx % size, idx / size];
            for c in 0..cells {
                let mut s = r[n];
                for m in 0..nt {
                    s -= rot[c * nt + m] * constellation.point(digits[m]);
                }
                terms[c] = lw[c] - s.norm_sqr() / n0;
            }
            *lp += logsumexp(&terms);
        }
    }
    Ok(JointSymbolBelief::from_log(nt, size, logp))
}

/// Exact Bayesian filter for two transmit and one receive oscillator on a
/// `n³` lattice over `(θt1, θt2, θr)`.
pub struct GridFilter {
    pub density: GridDensity,
    pub var_t: f64,
    pub var_r: f64,
}

impl GridFilter {
    pub fn new(n: usize, var_t: f64, var_r: f64) -> Result<Self> {
        Ok(GridFilter { density: GridDensity::uniform(3, n)?, var_t, var_r })
    }

    /// Multiplies by the likelihood of one received sample with known
    /// transmitted points.
    pub fn observe(&mut self, r: Complex64, g: [Complex64; 2], n0: f64) {
        self.density.multiply_log(|t| {
            let s = r - g[0] * Complex64::from_polar(1.0, t[0] + t[2]) - g[1] * Complex64::from_polar(1.0, t[1] + t[2]);
            -s.norm_sqr() / n0
        });
    }

    pub fn predict(&mut self) {
        self.density.convolve_wrapped_gaussian(0, self.var_t);
        self.density.convolve_wrapped_gaussian(1, self.var_t);
        self.density.convolve_wrapped_gaussian(2, self.var_r);
    }

    /// Joint density of the two link phases.
    pub fn links(&self) -> Result<GridDensity> {
        self.density.link_phase_marginal()
    }
}

/// One comparison of the SPA forward message against the grid filter.
#[derive(Clone, Copy, Debug)]
pub struct SpaGridSample {
    pub kl: f64,
    /// Largest circular-mean error over both links, radians.
    pub mean_error: f64,
}

/// Runs `steps` known-pilot updates of a 2×1 BPSK link with unit gains and
/// compares the forward message after the last update with the grid
/// density of the link phases.
pub fn spa_vs_grid_frame<R: Rng + ?Sized>(
    steps: usize,
    sigma: f64,
    n0: f64,
    grid: usize,
    rng: &mut R,
) -> Result<SpaGridSample> {
    let bpsk = Constellation::new(ConstellationKind::Bpsk);
    let gains = Gains::unit(2, 1);
    let var = sigma * sigma;
    let mut tt = [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU];
    let mut tr = rng.random::<f64>() * TAU;
    let mut filter = GridFilter::new(grid, var, var)?;
    let mut state = TikhonovMessageState::zero(2, 1);
    let s = (n0 / 2.0).sqrt();
    for k in 0..steps {
        let idx = [pilot_index(k, 0, 2), pilot_index(k, 1, 2)];
        let c = [bpsk.point(idx[0]), bpsk.point(idx[1])];
        let w = Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s);
        let r = c[0] * Complex64::from_polar(1.0, tt[0] + tr) + c[1] * Complex64::from_polar(1.0, tt[1] + tr) + w;
        filter.observe(r, c, n0);
        filter.predict();
        let mom = prior_moments(&SymbolPrior::delta(&idx, 2), &bpsk, &gains, n0);
        state = forward_step(&state, &[r], &mom, &gains, var, var, k + 1)?;
        for t in tt.iter_mut() {
            *t += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        tr += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    let exact = filter.links()?;
    let approx = GridDensity::from_log_kernel(2, grid, |t| state.log_kernel(t, &[0.0]))?;
    let kl = exact.kl_divergence(&approx);
    let mean_error = (0..2)
        .map(|a| wrap(exact.circular_mean(a) - approx.circular_mean(a)).abs())
        .fold(0.0, f64::max);
    Ok(SpaGridSample { kl, mean_error })
}

/// Joint symbol posterior of a 2×1 link from the product of the forward
/// and backward messages and the likelihood of `r`. The common phase is
/// integrated in closed form and the relative transmit phase on `points`
/// uniform nodes.
#[allow(clippy::too_many_arguments)]
pub fn spa_posterior_quadrature(
    fwd: &TikhonovMessageState,
    bwd: &TikhonovMessageState,
    r: Complex64,
    gains: &Gains,
    n0: f64,
    constellation: &Constellation,
    points: usize,
) -> Result<JointSymbolBelief> {
    if fwd.nt != 2 || fwd.nr != 1 {
        return Err(Error::Dimension("quadrature reference is for two transmit and one receive antenna".into()));
    }
    let size = constellation.size();
    let s = 2.0 / n0;
    let mut terms = vec![0.0; points];
    let mut logp = Vec::with_capacity(size * size);
    for idx in 0..size * size {
        let e = [gains.get(0, 0) * constellation.point(idx % size), gains.get(1, 0) * constellation.point(idx / size)];
        let z1 = fwd.a[0] + bwd.a[0] + r * e[0].conj() * s;
        let z2 = fwd.a[1] + bwd.a[1] + r * e[1].conj() * s;
        let zt = fwd.at[0] + bwd.at[0] + e[1] * e[0].conj() * s;
        for (i, t) in terms.iter_mut().enumerate() {
            let psi = TAU * i as f64 / points as f64;
            let w = Complex64::from_polar(1.0, psi);
            *t = -(zt * w.conj()).re + ln_i0((z1 + z2 * w).norm());
        }
        logp.push(logsumexp(&terms) - (e[0].norm_sqr() + e[1].norm_sqr()) / n0);
    }
    Ok(JointSymbolBelief::from_log(2, size, logp))
}

fn total_variation(a: &JointSymbolBelief, b: &JointSymbolBelief) -> f64 {
    0.5 * a.log_pmf().iter().zip(b.log_pmf()).map(|(x, y)| (x.exp() - y.exp()).abs()).sum::<f64>()
}

/// Linear Kalman filter and RTS smoother for one receive antenna with the
/// measurement model linearized at zero phase. Returns smoothed means and
/// covariances per index.
pub fn linear_rts_reference(
    rx: &ReceivedFrame,
    soft: &[SoftSymbol],
    q: &Mat,
    n: usize,
    init_var: f64,
) -> (Vec<Vec<f64>>, Vec<Mat>) {
    let (len, nt) = (rx.len, rx.gains.nt);
    let mut x = vec![0.0; nt];
    let mut p = Mat::identity(nt).scale(init_var);
    let (mut xp, mut pp, mut xf, mut pf) = (vec![], vec![], vec![], vec![]);
    for k in 0..len {
        if k > 0 {
            p = p.add(q);
        }
        xp.push(x.clone());
        pp.push(p);
        let mut h = Mat::zeros(2, nt);
        let mut pred = Complex64::new(0.0, 0.0);
        let mut noise = rx.n0;
        for m in 0..nt {
            let g = rx.gains.get(m, n) * soft[k * nt + m].mean;
            h[(0, m)] = -g.im;
            h[(1, m)] = g.re;
            pred += g * Complex64::new(1.0, x[m]);
            noise += rx.gains.get(m, n).norm_sqr() * soft[k * nt + m].var;
        }
        let e = rx.sample(k, n) - pred;
        let mut s = h.mul(&p).mul(&h.transpose());
        s[(0, 0)] += 0.5 * noise;
        s[(1, 1)] += 0.5 * noise;
        let kg = p.mul(&h.transpose()).mul(&s.inv_spd().expect("innovation covariance"));
        for m in 0..nt {
            x[m] += kg[(m, 0)] * e.re + kg[(m, 1)] * e.im;
        }
        p = Mat::identity(nt).sub(&kg.mul(&h)).mul(&p);
        p.symmetrize();
        xf.push(x.clone());
        pf.push(p);
    }
    let mut xs = xf.clone();
    let mut ps = pf.clone();
    for k in (0..len.saturating_sub(1)).rev() {
        let c = pf[k].mul(&pp[k + 1].inv_spd().expect("predicted covariance"));
        for i in 0..nt {
            let mut d = 0.0;
            for j in 0..nt {
                d += c[(i, j)] * (xs[k + 1][j] - xp[k + 1][j]);
            }
            xs[k][i] = xf[k][i] + d;
        }
        ps[k] = pf[k].add(&c.mul(&ps[k + 1].sub(&pp[k + 1])).mul(&c.transpose()));
    }
    (xs, ps)
}

/// Concentration `κ` with `I1(κ)/I0(κ) = rho`, by bisection.
pub fn concentration_from_resultant(rho: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while bessel_i1_over_i0(hi) < rho {
        hi *= 2.0;
        if hi > 1e12 {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_i1_over_i0(mid) < rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub label: String,
    pub measured: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub lines: Vec<CheckLine>,
}

impl OracleReport {
    fn new(name: &str) -> Self {
        OracleReport { name: name.to_string(), lines: Vec::new() }
    }

    /// Records `measured <= limit`.
    fn at_most(&mut self, label: impl Into<String>, measured: f64, limit: f64) {
        let pass = measured <= limit;
        self.lines.push(CheckLine { label: label.into(), measured, limit, pass });
    }

    /// Informational line, never fails.
    fn info(&mut self, label: impl Into<String>, measured: f64) {
        self.lines.push(CheckLine { label: label.into(), measured, limit: f64::INFINITY, pass: true });
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}] {}", if self.passed() { "PASS" } else { "FAIL" }, self.name)?;
        for l in &self.lines {
            if l.limit.is_finite() {
                let tag = if l.pass { "ok  " } else { "FAIL" };
                writeln!(f, "  {tag} {}: {:.3e} (limit {:.3e})", l.label, l.measured, l.limit)?;
            } else {
                writeln!(f, "  info {}: {:.3e}", l.label, l.measured)?;
            }
        }
        Ok(())
    }
}

pub const CHECK_NAMES: [&str; 9] = [
    "tikhonov-norm",
    "smear-vs-grid",
    "spa-vs-grid",
    "spa-posterior",
    "gaussmap-vs-grid",
    "vb-vs-quadrature",
    "eks-vs-kalman",
    "i0-accuracy",
    "utilde-residual",
];

pub fn run_check(name: &str, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "tikhonov-norm" => Ok(check_tikhonov_norm()),
        "smear-vs-grid" => check_smear(),
        "spa-vs-grid" => check_spa(&mut rng),
        "spa-posterior" => check_spa_posterior(&mut rng),
        "gaussmap-vs-grid" => check_gauss_map(&mut rng),
        "vb-vs-quadrature" => check_vb(&mut rng),
        "eks-vs-kalman" => check_eks(&mut rng),
        "i0-accuracy" => Ok(check_i0()),
        "utilde-residual" => check_utilde(&mut rng),
        _ => Err(Error::Config(format!("unknown oracle check {name:?}; known: {}", CHECK_NAMES.join(", ")))),
    }
}

fn check_tikhonov_norm() -> OracleReport {
    let mut rep = OracleReport::new("tikhonov-norm");
    let n = 8192;
    let mut worst: f64 = 0.0;
    for &kappa in &[0.0, 0.3, 1.0, 5.0, 30.0, 200.0, 1e3] {
        let p = TikhonovParam::new(Complex64::from_polar(kappa, 0.7)).expect("finite");
        let s: f64 = (0..n)
            .map(|i| p.log_pdf(WrappedAngle::new(TAU * i as f64 / n as f64)).exp())
            .sum::<f64>()
            * TAU
            / n as f64;
        worst = worst.max((s - 1.0).abs());
    }
    rep.at_most("max |∫p - 1| over κ ≤ 1e3", worst, 1e-9);
    rep
}

fn check_i0() -> OracleReport {
    let mut rep = OracleReport::new("i0-accuracy");
    // Plain power series I0(x) = Σ (x²/4)^k / (k!)², then ln.
    let series = |x: f64| {
        let q = 0.25 * x * x;
        let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
        while term > 1e-18 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum.ln()
    };
    let mut worst: f64 = 0.0;
    let mut x: f64 = 0.01;
    while x <= 30.0 {
        let want = series(x);
        worst = worst.max(((ln_i0(x) - want) / want).abs());
        x *= 1.03;
    }
    rep.at_most("max relative error of ln I0, 0.01 ≤ x ≤ 30", worst, 1e-10);
    rep
}

fn check_smear() -> Result<OracleReport> {
    let mut rep = OracleReport::new("smear-vs-grid");
    let n = 2048;
    let mut worst: f64 = 0.0;
    for &kappa in &[0.5, 2.0, 5.0, 10.0, 20.0, 50.0] {
        for &deg in &[0.5f64, 1.0, 2.0, 3.0, 4.0] {
            let var = deg.to_radians().powi(2);
            let z = Complex64::from_polar(kappa, 0.4);
            let mut g = GridDensity::from_log_kernel(1, n, |t| z.re * t[0].cos() + z.im * t[0].sin())?;
            g.convolve_wrapped_gaussian(0, var);
            let m = g.marginal(0);
            let res: Complex64 = m.iter().enumerate().map(|(i, p)| Complex64::from_polar(*p, g.angle(i))).sum();
            let fitted = concentration_from_resultant(res.norm());
            let got = gaussian_smear(z, var).norm();
            worst = worst.max((got - fitted).abs() / fitted);
        }
    }
    rep.at_most("max relative concentration error, σ ≤ 4°", worst, 0.05);
    Ok(rep)
}

fn check_spa<R: Rng + ?Sized>(rng: &mut R) -> Result<OracleReport> {
    let mut rep = OracleReport::new("spa-vs-grid");
    let frames = 50;
    let n0 = 0.1;
    let mut kl = Vec::with_capacity(frames);
    let mut err = Vec::with_capacity(frames);
    for _ in 0..frames {
        let s = spa_vs_grid_frame(5, 4f64.to_radians(), n0, 128, rng)?;
        kl.push(s.kl);
        err.push(s.mean_error.to_degrees());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    rep.at_most("mean KL(grid || message) over 50 frames", mean(&kl), 0.05);
    rep.at_most("mean circular-mean error, degrees", mean(&err), 0.5);
    rep.info("max KL", kl.iter().copied().fold(0.0, f64::max));
    rep.info("max circular-mean error, degrees", err.iter().copied().fold(0.0, f64::max));
    Ok(rep)
}

/// Total variation of the integrated, aligned and factorized posteriors
/// against quadrature on random 2×1 QPSK frames with pilot-only priors.
fn spa_posterior_tv<R: Rng + ?Sized>(rng: &mut R, ebn0_db: f64, frames: usize) -> Result<[Vec<f64>; 3]> {
    let qpsk = Constellation::new(ConstellationKind::Qpsk);
    let pattern = PilotPattern::from_name("1/20")?;
    let len = 60;
    let var = 4f64.to_radians().powi(2);
    // Two bits per symbol.
    let n0 = 1.0 / (2.0 * 10f64.powf(ebn0_db / 10.0));
    let layout = FrameLayout::new(&pattern, len, 2, &qpsk)?;
    let priors = pilot_priors(&layout, &qpsk);
    let mut out: [Vec<f64>; 3] = Default::default();
    let rules = [CrossTerm::Integrated, CrossTerm::Aligned, CrossTerm::Factorized];
    for _ in 0..frames {
        let bits: Vec<u8> = (0..layout.payload_bits(2)).map(|_| rng.random_range(0..2u8)).collect();
        let frame = build_frame(&bits, &qpsk, &pattern, len, 2)?;
        let gains = Gains::unit(2, 1);
        let traj = sample_phase_trajectories(len, 2, 1, var, var, rng);
        let rx = apply_channel(&frame, &qpsk, &traj, &gains, n0, rng)?;
        let params = SpaParams { var_t: var, var_r: var, cross: CrossTerm::Integrated };
        let (fwd, bwd) = spa_messages(&rx, &priors, &qpsk, params)?;
        for k in layout.data_positions() {
            let r = rx.row(k)[0];
            let want = spa_posterior_quadrature(&fwd[k], &bwd[k], r, &gains, n0, &qpsk, 4096)?;
            for (rule, tv) in rules.iter().zip(out.iter_mut()) {
                let got = joint_symbol_posterior(&fwd[k], &bwd[k], &[r], &gains, n0, &qpsk, *rule);
                tv.push(total_variation(&got, &want));
            }
        }
    }
    Ok(out)
}

fn check_spa_posterior<R: Rng + ?Sized>(rng: &mut R) -> Result<OracleReport> {
    let mut rep = OracleReport::new("spa-posterior");
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let [integrated, aligned, factorized] = spa_posterior_tv(rng, 10.0, 20)?;
    rep.at_most("max total variation, 2×1 QPSK, σ = 4°, 10 dB", max(&integrated), 2e-2);
    rep.info("mean total variation", mean(&integrated));
    rep.info("mean total variation, aligned cross term", mean(&aligned));
    rep.info("mean total variation, factorized cross term", mean(&factorized));
    let [strong, _, factorized] = spa_posterior_tv(rng, 20.0, 20)?;
    rep.at_most("max total variation at 20 dB", max(&strong), 2e-2);
    rep.info("mean total variation at 20 dB", mean(&strong));
    rep.info("mean total variation at 20 dB, factorized cross term", mean(&factorized));
    Ok(rep)
}

/// A random 2×2 link-phase covariance with standard deviations in
/// `[0.5°, max_deg]` and correlation drawn from `rho`.
fn random_cov<R: Rng + ?Sized>(rng: &mut R, max_deg: f64, rho: std::ops::Range<f64>) -> [f64; 4] {
    let s1 = rng.random_range(0.5..max_deg).to_radians();
    let s2 = rng.random_range(0.5..max_deg).to_radians();
    let rho = rng.random_range(rho);
    [s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2]
}

/// Total variation between Gauss-MAP and the grid integral for one random
/// 2×1 BPSK draw.
fn gauss_map_draw<R: Rng + ?Sized>(
    rng: &mut R,
    rho: std::ops::Range<f64>,
    diag: &mut DetectorDiagnostics,
) -> Result<f64> {
    let bpsk = Constellation::new(ConstellationKind::Bpsk);
    let gains = Gains::unit(2, 1);
    let ebn0: f64 = rng.random_range(4.0..16.0);
    let n0 = 1.0 / 10f64.powf(ebn0 / 10.0);
    let cov = random_cov(rng, 6.0, rho);
    let th = [rng.random::<f64>() * TAU - PI, rng.random::<f64>() * TAU - PI];
    let post = PhasePosterior { len: 1, nt: 2, nr: 1, theta: th.to_vec(), cov: cov.to_vec() };
    // True phases drawn from the posterior, random transmitted pair.
    let l = Mat::from_rows(2, 2, &cov).cholesky().expect("positive definite");
    let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let truth = [th[0] + l[(0, 0)] * z[0], th[1] + l[(1, 0)] * z[0] + l[(1, 1)] * z[1]];
    let c = [bpsk.point(rng.random_range(0..2)), bpsk.point(rng.random_range(0..2))];
    let s = (n0 / 2.0).sqrt();
    let r = c[0] * Complex64::from_polar(1.0, truth[0])
        + c[1] * Complex64::from_polar(1.0, truth[1])
        + Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s);
    let got = gauss_map_belief(&[r], &post, 0, &gains, n0, &bpsk, diag)?;
    let want = gauss_map_grid_belief(&[r], &post, 0, &gains, n0, &bpsk, 256)?;
    Ok(total_variation(&got, &want))
}

fn check_gauss_map<R: Rng + ?Sized>(rng: &mut R) -> Result<OracleReport> {
    let mut rep = OracleReport::new("gaussmap-vs-grid");
    let mut diag = DetectorDiagnostics::default();
    let draws = 100;
    let mut tv = Vec::with_capacity(draws);
    for _ in 0..draws {
        tv.push(gauss_map_draw(rng, -0.9..0.0, &mut diag)?);
    }
    rep.at_most("max total variation, 100 draws, σ ≤ 6°, P12 ≤ 0", tv.iter().copied().fold(0.0, f64::max), 2e-2);
    rep.info("mean total variation", tv.iter().sum::<f64>() / draws as f64);
    let mut worst_pos: f64 = 0.0;
    for _ in 0..draws {
        worst_pos = worst_pos.max(gauss_map_draw(rng, 0.05..0.9, &mut diag)?);
    }
    rep.info("max total variation with P12 > 0 (|ũ| set to 0)", worst_pos);
    rep.info("clamped Bessel arguments", diag.clamped as f64);
    Ok(rep)
}

fn check_vb<R: Rng + ?Sized>(rng: &mut R) -> Result<OracleReport> {
    let mut rep = OracleReport::new("vb-vs-quadrature");
    let qam = Constellation::new(ConstellationKind::Qam16);
    let rule = gauss_hermite(40);

    let mut zero_gap: f64 = 0.0;
    for _ in 0..200 {
        let gains = Gains::unit(2, 2);
        let th: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * TAU - PI).collect();
        let post = PhasePosterior { len: 1, nt: 2, nr: 2, theta: th, cov: vec![0.0; 8] };
        let r: Vec<Complex64> = (0..2).map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let a = vb_belief(&r, &post, 0, &gains, 0.3, &qam);
        let b = euc_map_belief(&r, &post, 0, &gains, 0.3, &qam);
        for (x, y) in a.log_pmf().iter().zip(b.log_pmf()) {
            zero_gap = zero_gap.max((x - y).abs());
        }
    }
    rep.at_most("max |VB - EUC| log-pmf at P = 0", zero_gap, 0.0);

    let worst = |rng: &mut R, max_deg: f64| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let n0: f64 = rng.random_range(0.5..2.0);
            let sd = rng.random_range(0.0..max_deg).to_radians();
            let th = rng.random::<f64>() * TAU - PI;
            let post = PhasePosterior { len: 1, nt: 1, nr: 1, theta: vec![th], cov: vec![sd * sd] };
            let c = qam.point(rng.random_range(0..16));
            let s = (n0 / 2.0).sqrt();
            let r = c * Complex64::from_polar(1.0, th + sd * rng.sample::<f64, _>(StandardNormal))
                + Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s);
            let gains = Gains::unit(1, 1);
            let got = vb_belief(&[r], &post, 0, &gains, n0, &qam);
            let want = expected_loglik_log_pmf(&[r], &post, 0, &gains, n0, &qam, &rule)?;
            for (x, y) in got.log_pmf().iter().zip(&want) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    };
    let small = worst(rng, 0.5)?;
    rep.at_most("max log-pmf error vs Gauss-Hermite, 16-QAM, σ_θ ≤ 0.5°, N0 ∈ [0.5, 2]", small, 1e-3);
    let large = worst(rng, 4.0)?;
    rep.info("same at σ_θ ≤ 4° (second-order expansion error)", large);
    Ok(rep)
}

fn check_eks<R: Rng + ?Sized>(rng: &mut R) -> Result<OracleReport> {
    let mut rep = OracleReport::new("eks-vs-kalman");
    let bpsk = Constellation::new(ConstellationKind::Qpsk);
    let (len, nt, nr) = (40, 2, 1);
    let tiny = 1e-7;
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for _ in 0..20 {
        let gains = Gains::unit(nt, nr);
        let n0 = 0.05;
        let mut theta = [0.0f64; 2];
        let mut r = Vec::with_capacity(len);
        let mut soft = Vec::with_capacity(len * nt);
        for _ in 0..len {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, t) in theta.iter_mut().enumerate() {
                let c = bpsk.point(rng.random_range(0..4));
                soft.push(SoftSymbol::known(c));
                acc += gains.get(m, 0) * c * Complex64::from_polar(1.0, *t);
                *t += tiny * rng.sample::<f64, _>(StandardNormal);
            }
            let s = 1e-5;
            r.push(acc + Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s));
        }
        let rx = ReceivedFrame { len, nr, r, n0, gains };
        let var = tiny * tiny;
        let model = process_model(nt, var, var)?;
        let init = EksInit { mean: vec![0.0; nt * nr], var: 1.0 };
        let track = ekf_forward(&rx, &soft, &model, &init)?;
        let (post, _) = rts_backward(&track)?;
        let (xs, ps) = linear_rts_reference(&rx, &soft, &model.q, 0, 1.0);
        for k in 0..len {
            for m in 0..nt {
                worst_mean = worst_mean.max(wrap(post.theta(k, m, 0) - xs[k][m]).abs());
                for l in 0..nt {
                    worst_cov = worst_cov.max((post.p(k, 0, m, l) - ps[k][(m, l)]).abs());
                }
            }
        }
    }
    rep.at_most("max |θ̂_EKS - θ̂_RTS| in the linear regime", worst_mean, 1e-8);
    rep.at_most("max |P_EKS - P_RTS|", worst_cov, 1e-8);
    Ok(rep)
}

fn check_utilde<R: Rng + ?Sized>(rng: &mut R) -> Result<OracleReport> {
    let mut rep = OracleReport::new("utilde-residual");
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p11: f64 = rng.random_range(1e-6..2.0);
        let p22: f64 = rng.random_range(1e-6..2.0);
        let rho: f64 = rng.random_range(0.0..1.0);
        let s = solve_u_tilde(p11, p22, -rho * (p11 * p22).sqrt())?;
        worst = worst.max(s.residual().abs());
    }
    rep.at_most("max back-substitution residual over 1e4 draws", worst, 1e-9);
    let s = solve_u_tilde(0.1, 0.1, -0.05)?;
    rep.at_most("|u(0.1, 0.1, -0.05) - 0.476190476|", (s.u - 0.476_190_476).abs(), 1e-9);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_moments() {
        let rule = gauss_hermite(20);
        let m0: f64 = rule.1.iter().sum();
        assert!((m0 - PI.sqrt()).abs() < 1e-12);
        let m2: f64 = rule.0.iter().zip(&rule.1).map(|(x, w)| w * x * x).sum();
        assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12);
        // E[cos θ] for θ ~ N(μ, v) is cos μ · e^{-v/2}.
        let e = gaussian_expectation(0.3, 0.2, &rule, f64::cos);
        assert!((e - 0.3f64.cos() * (-0.1f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn concentration_inverse() {
        for &k in &[0.01, 1.0, 7.5, 300.0] {
            assert!((concentration_from_resultant(bessel_i1_over_i0(k)) - k).abs() < 1e-8 * k.max(1.0));
        }
    }

    #[test]
    fn spa_message_is_exact_without_phase_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let s = spa_vs_grid_frame(5, 0.0, 0.1, 64, &mut rng).unwrap();
            assert!(s.kl < 1e-9 && s.mean_error < 1e-9, "{s:?}");
        }
    }

    #[test]
    fn vb_penalty_sign_matches_quadrature() {
        // The covariance terms enter as a penalty; the opposite sign lands
        // further from the exact expectation once P is not negligible.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let qam = Constellation::new(ConstellationKind::Qam16);
        let rule = gauss_hermite(40);
        let gains = Gains::unit(1, 1);
        let (mut err_pen, mut err_flip) = (0.0, 0.0);
        for _ in 0..300 {
            let n0: f64 = rng.random_range(0.5..2.0);
            let var = 3f64.to_radians().powi(2);
            let th = rng.random::<f64>() * TAU - PI;
            let c = qam.point(rng.random_range(0..16));
            let s = (n0 / 2.0).sqrt();
            let r = c * Complex64::from_polar(1.0, th + var.sqrt() * rng.sample::<f64, _>(StandardNormal))
                + Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s);
            let post = PhasePosterior { len: 1, nt: 1, nr: 1, theta: vec![th], cov: vec![var] };
            let want = expected_loglik_log_pmf(&[r], &post, 0, &gains, n0, &qam, &rule).unwrap();
            let pen = vb_belief(&[r], &post, 0, &gains, n0, &qam);
            let flip: Vec<f64> = (0..16)
                .map(|i| {
                    let g = qam.point(i) * Complex64::from_polar(1.0, th);
                    -((r - g).norm_sqr() - g.norm_sqr() * var) / n0
                })
                .collect();
            let flip = JointSymbolBelief::from_log(1, 16, flip);
            for i in 0..16 {
                err_pen += (pen.log_pmf()[i] - want[i]).abs();
                err_flip += (flip.log_pmf()[i] - want[i]).abs();
            }
        }
        assert!(err_pen < err_flip, "{err_pen} vs {err_flip}");
    }

    #[test]
    fn spa_posterior_without_messages_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gains = Gains::unit(2, 1);
        let zero = TikhonovMessageState::zero(2, 1);
        for kind in [ConstellationKind::Bpsk, ConstellationKind::Qpsk, ConstellationKind::Qam16] {
            let c = Constellation::new(kind);
            for _ in 0..5 {
                let n0 = rng.random_range(0.05..0.5);
                let r = Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                let want = spa_posterior_quadrature(&zero, &zero, r, &gains, n0, &c, 4096).unwrap();
                let got = joint_symbol_posterior(&zero, &zero, &[r], &gains, n0, &c, CrossTerm::Integrated);
                let tv = total_variation(&got, &want);
                assert!(tv <= 1e-2, "{kind:?} {tv}");
            }
        }
    }

    #[test]
    fn unknown_check_is_an_error() {
        assert!(run_check("nope", 0).is_err());
    }

    #[test]
    fn cheap_checks_pass() {
        for name in ["tikhonov-norm", "i0-accuracy", "utilde-residual", "eks-vs-kalman"] {
            let rep = run_check(name, 1).unwrap();
            assert!(rep.passed(), "{rep}");
        }
    }
}
