//! Circular statistics and Bessel numerics.
//!
//! Tikhonov (von Mises) densities are kept as raw complex parameters
//! `z`, with density `exp(Re[z e^{-jθ}]) / (2π I0(|z|))`. Nothing here
//! evaluates `I0` directly; everything goes through [`ln_i0`] so that
//! concentrations in the millions stay finite.

pub mod grid;

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use grid::{grid_phase_posterior, GridDensity};

/// Switch point to the asymptotic expansion.
const SERIES_LIMIT: f64 = 30.0;
/// Below this the power series is used directly; between the two, a
/// Chebyshev interpolant of the series.
const CHEB_LO: f64 = 2.0;
const CHEB_DEG: usize = 16;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Wraps an angle into `[-π, π)`.
#[inline]
pub fn wrap(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(TAU) - PI;
    if x >= PI {
        x -= TAU;
    }
    x
}

/// An angle stored in `[-π, π)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct WrappedAngle(f64);

impl WrappedAngle {
    pub fn new(radians: f64) -> Self {
        WrappedAngle(wrap(radians))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Shortest signed distance `self - other` on the circle.
    pub fn diff(self, other: WrappedAngle) -> f64 {
        wrap(self.0 - other.0)
    }

    /// Unsigned arc length between the two angles, in `[0, π]`.
    pub fn distance(self, other: WrappedAngle) -> f64 {
        self.diff(other).abs()
    }
}

impl std::ops::Add for WrappedAngle {
    type Output = WrappedAngle;
    fn add(self, rhs: Self) -> Self {
        WrappedAngle::new(self.0 + rhs.0)
    }
}

impl std::ops::Sub for WrappedAngle {
    type Output = WrappedAngle;
    fn sub(self, rhs: Self) -> Self {
        WrappedAngle::new(self.0 - rhs.0)
    }
}

/// `ln I0(x)` with input validation.
pub fn log_bessel_i0(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("log_bessel_i0 requires finite x >= 0, got {x}")));
    }
    Ok(ln_i0(x))
}

/// `ln I0(x)` for finite `x >= 0`. Unchecked hot-path variant of
/// [`log_bessel_i0`].
#[inline]
pub fn ln_i0(x: f64) -> f64 {
    if x <= CHEB_LO {
        ln_i0_series(x)
    } else if x <= SERIES_LIMIT {
        tables().ln_i0.eval(x)
    } else {
        x - 0.5 * (TAU * x).ln() + tables().ln_tail.eval_inv(x)
    }
}

fn ln_i0_series(x: f64) -> f64 {
    // I0(x) - 1 = sum_{k>=1} (x/2)^{2k} / (k!)^2, summed separately so
    // ln_1p keeps full relative precision near zero.
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut tail = 0.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        tail += term;
        if term <= tail * 1e-17 {
            break;
        }
        k += 1.0;
    }
    tail.ln_1p()
}

/// Piecewise Chebyshev interpolant of degree `CHEB_DEG` on unit pieces
/// starting at `lo`.
struct Cheb {
    lo: f64,
    coef: Vec<[f64; CHEB_DEG + 1]>,
}

impl Cheb {
    fn build(lo: f64, pieces: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = CHEB_DEG + 1;
        let coef = (0..pieces)
            .map(|p| {
                let mid = lo + p as f64 + 0.5;
                let fx: Vec<f64> =
                    (0..n).map(|j| f(mid + 0.5 * (PI * (j as f64 + 0.5) / n as f64).cos())).collect();
                let mut c = [0.0; CHEB_DEG + 1];
                for (k, ck) in c.iter_mut().enumerate() {
                    let s: f64 = fx
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                        .sum();
                    *ck = 2.0 * s / n as f64;
                }
                c[0] *= 0.5;
                c
            })
            .collect();
        Cheb { lo, coef }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let p = ((x - self.lo).max(0.0) as usize).min(self.coef.len() - 1);
        let t = 2.0 * (x - self.lo - p as f64) - 1.0;
        let c = &self.coef[p];
        // Clenshaw recurrence.
        let (mut b1, mut b2) = (0.0, 0.0);
        for &ck in c[1..].iter().rev() {
            let b0 = 2.0 * t * b1 - b2 + ck;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + c[0]
    }

    /// Tail tables are built on `u = SERIES_LIMIT / x` in `[0, 1]`.
    #[inline]
    fn eval_inv(&self, x: f64) -> f64 {
        self.eval(SERIES_LIMIT / x)
    }
}

struct Tables {
    ln_i0: Cheb,
    i1_over_i0: Cheb,
    /// `ln` of the asymptotic bracket of I0, in `u = SERIES_LIMIT / x`.
    ln_tail: Cheb,
    /// `I1/I0` from the asymptotic brackets, in `u`.
    ratio_tail: Cheb,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let pieces = (SERIES_LIMIT - CHEB_LO) as usize;
        // The bracket at u = 0 is exactly 1.
        let at = |u: f64, f: &dyn Fn(f64) -> f64, limit: f64| if u == 0.0 { limit } else { f(SERIES_LIMIT / u) };
        Tables {
            ln_i0: Cheb::build(CHEB_LO, pieces, ln_i0_series),
            i1_over_i0: Cheb::build(CHEB_LO, pieces, i1_over_i0_series),
            ln_tail: Cheb::build(0.0, 1, |u| at(u, &|x| asymptotic_correction(0.0, x).ln(), 0.0)),
            ratio_tail: Cheb::build(0.0, 1, |u| {
                at(u, &|x| asymptotic_correction(1.0, x) / asymptotic_correction(0.0, x), 1.0)
            }),
        }
    })
}

/// `ln I0(x) - x`, accurate for large arguments where `ln_i0` would lose
/// the small remainder to cancellation.
#[inline]
pub fn ln_i0_scaled(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        ln_i0(x) - x
    } else {
        -0.5 * (TAU * x).ln() + tables().ln_tail.eval_inv(x)
    }
}

/// `1 + sum_k prod_j (-(4ν² - (2j-1)²)) / (k! (8x)^k)`, the bracket in
/// `I_ν(x) ~ e^x / sqrt(2πx) * [...]`.
fn asymptotic_correction(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * (odd * odd - mu) / (kf * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Mean resultant length of a Tikhonov density with concentration `x`,
/// i.e. `I1(x) / I0(x)`.
pub fn bessel_i1_over_i0(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if x <= CHEB_LO {
        i1_over_i0_series(x)
    } else if x <= SERIES_LIMIT {
        tables().i1_over_i0.eval(x)
    } else {
        tables().ratio_tail.eval_inv(x)
    }
}

fn i1_over_i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut t0, mut t1) = (1.0, 0.5 * x);
    let (mut s0, mut s1) = (t0, t1);
    let mut k = 1.0;
    loop {
        t0 *= q / (k * k);
        t1 *= q / (k * (k + 1.0));
        s0 += t0;
        s1 += t1;
        if t0 <= s0 * 1e-17 && t1 <= s1 * 1e-17 {
            break;
        }
        k += 1.0;
    }
    s1 / s0
}

/// Univariate Tikhonov parameter.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TikhonovParam {
    pub z: Complex64,
}

impl TikhonovParam {
    pub fn new(z: Complex64) -> Result<Self> {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::Domain(format!("non-finite Tikhonov parameter {z}")));
        }
        Ok(TikhonovParam { z })
    }

    pub fn mean_direction(&self) -> WrappedAngle {
        WrappedAngle::new(self.z.arg())
    }

    pub fn concentration(&self) -> f64 {
        self.z.norm()
    }

    pub fn log_pdf(&self, theta: WrappedAngle) -> f64 {
        tikhonov_log_pdf(self, theta)
    }
}

pub fn tikhonov_log_pdf(p: &TikhonovParam, theta: WrappedAngle) -> f64 {
    let t = theta.value();
    p.z.re * t.cos() + p.z.im * t.sin() - LN_2PI - ln_i0(p.z.norm())
}

/// Cosine-variant bivariate Tikhonov parameter:
/// `exp Re[z1 e^{-jθ1} + z2 e^{-jθ2} - z3 e^{-j(θ1-θ2)}]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BivariateTikhonovParam {
    pub z1: Complex64,
    pub z2: Complex64,
    pub z3: Complex64,
}

impl BivariateTikhonovParam {
    /// Builds the parameter with `∠z3 = ∠z1 - ∠z2` imposed on the
    /// correlation magnitude `z3_abs`.
    pub fn new(z1: Complex64, z2: Complex64, z3_abs: f64) -> Result<Self> {
        if !(z3_abs.is_finite() && z3_abs >= 0.0) {
            return Err(Error::Domain(format!("bad correlation magnitude {z3_abs}")));
        }
        for z in [z1, z2] {
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Domain(format!("non-finite Tikhonov parameter {z}")));
            }
        }
        let z3 = Complex64::from_polar(z3_abs, z1.arg() - z2.arg());
        Ok(BivariateTikhonovParam { z1, z2, z3 })
    }

    /// Unnormalized log density.
    pub fn log_kernel(&self, theta1: f64, theta2: f64) -> f64 {
        let e = |z: Complex64, t: f64| z.re * t.cos() + z.im * t.sin();
        e(self.z1, theta1) + e(self.z2, theta2) - e(self.z3, theta1 - theta2)
    }
}

/// Circular convolution of a Tikhonov factor with a zero-mean wrapped
/// Gaussian of variance `var`, approximated as a Tikhonov of reduced
/// concentration.
#[inline]
pub fn gaussian_smear(z: Complex64, var: f64) -> Complex64 {
    z / (1.0 + z.norm() * var)
}

/// Tikhonov parameter matching a Gaussian of the given mean and variance.
pub fn gauss_to_tikhonov(mean: WrappedAngle, var: f64) -> Result<TikhonovParam> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Domain(format!("variance must be positive, got {var}")));
    }
    Ok(TikhonovParam { z: Complex64::from_polar(1.0 / var, mean.value()) })
}

/// Numerically stable `ln Σ exp(v)`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // (1/π) ∫_0^π e^{x(cos t - 1)} dt, trapezoid rule; exponentially
    // convergent for this periodic integrand.
    fn i0_scaled_quadrature(x: f64, n: usize) -> f64 {
        let h = PI / n as f64;
        let mut s = 0.5 * (1.0 + (-2.0 * x).exp());
        for i in 1..n {
            s += (x * ((i as f64 * h).cos() - 1.0)).exp();
        }
        s * h / PI
    }

    fn ln_i0_oracle(x: f64) -> f64 {
        if x < 0.05 {
            // Maclaurin series of ln I0.
            let y = x * x;
            y / 4.0 - y * y / 64.0 + y * y * y / 576.0 - 11.0 * y.powi(4) / 49152.0
        } else {
            x + i0_scaled_quadrature(x, 20_000).ln()
        }
    }

    #[test]
    fn ln_i0_trivial_and_listed_values() {
        assert_eq!(log_bessel_i0(0.0).unwrap(), 0.0);
        assert!((log_bessel_i0(1.0).unwrap() - 0.235_914_358_507_178_6).abs() < 1e-14);
        let eps = log_bessel_i0(700.0).unwrap() - (700.0 - 0.5 * (TAU * 700.0).ln());
        assert!(eps > 0.0 && eps < 2e-4, "eps = {eps}");
    }

    #[test]
    fn ln_i0_rejects_bad_input() {
        assert!(log_bessel_i0(-1.0).is_err());
        assert!(log_bessel_i0(f64::NAN).is_err());
        assert!(log_bessel_i0(f64::INFINITY).is_err());
    }

    #[test]
    fn ln_i0_series_branch_matches_quadrature() {
        let mut x = 0.001;
        while x <= 30.0 {
            let got = ln_i0(x);
            let want = ln_i0_oracle(x);
            assert!(((got - want) / want).abs() < 1e-10, "x={x} got {got} want {want}");
            x *= 1.07;
        }
    }

    #[test]
    fn ln_i0_asymptotic_branch_matches_quadrature() {
        for &x in &[30.0001, 31.0, 45.0, 100.0, 700.0, 5e3, 1e4] {
            let got = ln_i0(x);
            let want = ln_i0_oracle(x);
            assert!(((got - want) / want).abs() < 1e-12, "x={x}");
        }
        assert!(ln_i0(1e8).is_finite());
    }

    #[test]
    fn interpolants_track_the_series() {
        let mut x = CHEB_LO;
        while x <= SERIES_LIMIT {
            let (a, b) = (ln_i0(x), ln_i0_series(x));
            assert!(((a - b) / b).abs() < 1e-14, "x={x}: {a} vs {b}");
            let (a, b) = (bessel_i1_over_i0(x), i1_over_i0_series(x));
            assert!((a - b).abs() < 1e-14, "x={x}: {a} vs {b}");
            x += 0.0123;
        }
        let mut x = SERIES_LIMIT * 1.0001;
        while x < 1e7 {
            let (a, b) = (ln_i0_scaled(x), -0.5 * (TAU * x).ln() + asymptotic_correction(0.0, x).ln());
            assert!((a - b).abs() < 1e-14, "x={x}: {a} vs {b}");
            let b = asymptotic_correction(1.0, x) / asymptotic_correction(0.0, x);
            assert!((bessel_i1_over_i0(x) - b).abs() < 1e-14, "x={x}");
            x *= 1.013;
        }
    }

    #[test]
    fn ln_i0_seam_is_continuous() {
        let below = ln_i0(30.0);
        let above = ln_i0(30.0 + 1e-12);
        assert!(((above - below) / below).abs() < 1e-12);
    }

    #[test]
    fn ln_i0_scaled_matches_quadrature() {
        for &x in &[0.5, 29.0, 31.0, 1e3, 1e5] {
            let want = i0_scaled_quadrature(x, 200_000).ln();
            assert!((ln_i0_scaled(x) - want).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn i1_over_i0_matches_quadrature() {
        // I1/I0 = ∫cos t e^{x cos t} / ∫ e^{x cos t}
        for &x in &[0.1, 1.0, 5.0, 29.0, 31.0, 200.0] {
            let n = 20_000;
            let h = PI / n as f64;
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..=n {
                let t = i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let e = (x * (t.cos() - 1.0)).exp();
                a += w * t.cos() * e;
                b += w * e;
            }
            assert!((bessel_i1_over_i0(x) - a / b).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn tikhonov_examples() {
        let p = TikhonovParam::new(Complex64::new(0.0, 0.0)).unwrap();
        assert!((p.log_pdf(WrappedAngle::new(1.3)) + LN_2PI).abs() < 1e-15);
        let p = TikhonovParam::new(Complex64::new(5.0, 0.0)).unwrap();
        let want = 5.0 - LN_2PI - ln_i0(5.0);
        assert!((p.log_pdf(WrappedAngle::new(0.0)) - want).abs() < 1e-14);
    }

    #[test]
    fn tikhonov_normalizes_on_4096_grid() {
        for &r in &[0.0, 0.5, 5.0, 50.0, 500.0] {
            let p = TikhonovParam::new(Complex64::from_polar(r, 0.7)).unwrap();
            let n = 4096;
            let h = TAU / n as f64;
            let s: f64 = (0..n).map(|i| p.log_pdf(WrappedAngle::new(i as f64 * h)).exp()).sum();
            assert!((s * h - 1.0).abs() < 1e-9, "|z|={r}: {}", s * h);
        }
    }

    #[test]
    fn smear_examples() {
        let z = Complex64::new(4.0, 0.0);
        assert_eq!(gaussian_smear(z, 0.0), z);
        assert!((gaussian_smear(z, 0.1).re - 2.857_142_857_142_857).abs() < 1e-12);
    }

    #[test]
    fn gauss_to_tikhonov_examples() {
        let z = gauss_to_tikhonov(WrappedAngle::new(0.0), 1.0).unwrap().z;
        assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let z = gauss_to_tikhonov(WrappedAngle::new(PI / 2.0), 0.01).unwrap().z;
        assert!((z - Complex64::new(0.0, 100.0)).norm() < 1e-12);
        assert!(gauss_to_tikhonov(WrappedAngle::new(0.0), 0.0).is_err());
        assert!(gauss_to_tikhonov(WrappedAngle::new(0.0), -1.0).is_err());
    }

    #[test]
    fn gauss_to_tikhonov_circular_variance() {
        // For a Gaussian of variance v the mean resultant length is
        // e^{-v/2}, so 2(1 - R) ≈ v. Compare the Tikhonov's 2(1 - I1/I0).
        let mut v = 0.001;
        while v <= 0.05 {
            let z = gauss_to_tikhonov(WrappedAngle::new(0.3), v).unwrap();
            let cv = 2.0 * (1.0 - bessel_i1_over_i0(z.concentration()));
            assert!(((cv - v) / v).abs() < 0.03, "v={v} cv={cv}");
            v += 0.001;
        }
    }

    #[test]
    fn bivariate_constraint_is_enforced() {
        let z1 = Complex64::from_polar(3.0, 2.5);
        let z2 = Complex64::from_polar(1.5, -2.9);
        let p = BivariateTikhonovParam::new(z1, z2, 0.7).unwrap();
        assert!(wrap(p.z3.arg() - (z1.arg() - z2.arg())).abs() < 1e-12);
        assert!((p.z3.norm() - 0.7).abs() < 1e-12);
        assert!(BivariateTikhonovParam::new(z1, z2, -1.0).is_err());
    }

    #[test]
    fn logsumexp_handles_extremes() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_periodic(a in -1e4f64..1e4) {
            let w = wrap(a);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert_eq!(wrap(w), w);
            prop_assert!((wrap(a + TAU) - w).abs() < 1e-9 || (wrap(a + TAU) - w).abs() > TAU - 1e-9);
        }

        #[test]
        fn circle_distance_is_symmetric(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (x, y) = (WrappedAngle::new(a), WrappedAngle::new(b));
            prop_assert!((x.distance(y) - y.distance(x)).abs() < 1e-12);
            prop_assert!(x.distance(y) <= PI);
        }

        #[test]
        fn smear_contracts(r in 0.0f64..1e6, phi in -PI..PI, var in 0.0f64..1.0) {
            let z = Complex64::from_polar(r, phi);
            let s = gaussian_smear(z, var);
            prop_assert!(s.norm() <= z.norm() * (1.0 + 1e-15));
            if r > 1e-6 {
                prop_assert!(wrap(s.arg() - z.arg()).abs() < 1e-9);
            }
        }

        #[test]
        fn ln_i0_is_monotone(x in 0.0f64..1e5, dx in 1e-6f64..10.0) {
            prop_assert!(ln_i0(x + dx) >= ln_i0(x));
        }
    }
}
