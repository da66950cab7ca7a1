//! Brute-force densities on uniform tensor grids over `[0, 2π)^d`.
//!
//! Only meant as a reference for the message recursions: the cost is
//! `grid_size^d`, so `d` is capped at 3.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

const MAX_DIMS: usize = 3;

/// Normalized probability masses on a `n^dims` grid, axis 0 slowest.
#[derive(Clone, Debug)]
pub struct GridDensity {
    dims: usize,
    n: usize,
    p: Vec<f64>,
}

/// Evaluates the product of the given log-density factors on the grid and
/// normalizes it.
pub fn grid_phase_posterior(
    factors: &[&dyn Fn(&[f64]) -> f64],
    dims: usize,
    grid_size: usize,
) -> Result<GridDensity> {
    check_shape(dims, grid_size)?;
    let mut g = GridDensity::uniform(dims, grid_size)?;
    g.multiply_log(|t| factors.iter().map(|f| f(t)).sum());
    Ok(g)
}

fn check_shape(dims: usize, n: usize) -> Result<()> {
    if dims == 0 || dims > MAX_DIMS {
        return Err(Error::Domain(format!("grid supports 1..={MAX_DIMS} angles, got {dims}")));
    }
    if n < 64 {
        return Err(Error::Domain(format!("grid size must be >= 64, got {n}")));
    }
    Ok(())
}

impl GridDensity {
    pub fn uniform(dims: usize, n: usize) -> Result<Self> {
        check_shape(dims, n)?;
        let len = n.pow(dims as u32);
        Ok(GridDensity { dims, n, p: vec![1.0 / len as f64; len] })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn masses(&self) -> &[f64] {
        &self.p
    }

    pub fn angle(&self, i: usize) -> f64 {
        TAU * i as f64 / self.n as f64
    }

    fn coords(&self, mut idx: usize, out: &mut [f64; MAX_DIMS]) {
        for d in (0..self.dims).rev() {
            out[d] = self.angle(idx % self.n);
            idx /= self.n;
        }
    }

    /// Multiplies by `exp(f(θ))` and renormalizes.
    pub fn multiply_log(&mut self, f: impl Fn(&[f64]) -> f64) {
        let mut t = [0.0; MAX_DIMS];
        let mut logs = Vec::with_capacity(self.p.len());
        for i in 0..self.p.len() {
            self.coords(i, &mut t);
            let lp = if self.p[i] > 0.0 { self.p[i].ln() } else { f64::NEG_INFINITY };
            logs.push(lp + f(&t[..self.dims]));
        }
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (p, l) in self.p.iter_mut().zip(&logs) {
            *p = (l - m).exp();
        }
        self.normalize();
    }

    fn normalize(&mut self) {
        let s: f64 = self.p.iter().sum();
        self.p.iter_mut().for_each(|p| *p /= s);
    }

    /// Circular convolution along `axis` with a zero-mean wrapped Gaussian
    /// of variance `var`, applied to the trigonometric interpolant (exact
    /// for band-limited densities).
    pub fn convolve_wrapped_gaussian(&mut self, axis: usize, var: f64) {
        assert!(axis < self.dims);
        if var == 0.0 {
            return;
        }
        let n = self.n;
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let gain: Vec<f64> = (0..n)
            .map(|k| {
                let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                (-0.5 * f * f * var).exp() / n as f64
            })
            .collect();
        let stride = n.pow((self.dims - 1 - axis) as u32);
        let outer = self.p.len() / (n * stride);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(self.p[base + j * stride], 0.0);
                }
                fwd.process(&mut buf);
                for (b, g) in buf.iter_mut().zip(&gain) {
                    *b *= g;
                }
                inv.process(&mut buf);
                for (j, b) in buf.iter().enumerate() {
                    self.p[base + j * stride] = b.re.max(0.0);
                }
            }
        }
        self.normalize();
    }

    /// One-dimensional marginal along `axis`.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        assert!(axis < self.dims);
        let n = self.n;
        let stride = n.pow((self.dims - 1 - axis) as u32);
        let mut m = vec![0.0; n];
        for (i, p) in self.p.iter().enumerate() {
            m[(i / stride) % n] += p;
        }
        m
    }

    /// Circular mean direction of the marginal along `axis`.
    pub fn circular_mean(&self, axis: usize) -> f64 {
        let m = self.marginal(axis);
        let s: Complex64 = m
            .iter()
            .enumerate()
            .map(|(i, p)| Complex64::from_polar(*p, self.angle(i)))
            .sum();
        s.arg()
    }

    /// For a 3-D grid over `(θt1, θt2, θr)`, the joint density of the two
    /// link phases `(θt1 + θr, θt2 + θr)`. Exact on the lattice.
    pub fn link_phase_marginal(&self) -> Result<GridDensity> {
        if self.dims != 3 {
            return Err(Error::Dimension("link_phase_marginal needs a 3-D grid".into()));
        }
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for r in 0..n {
                    out[((i + r) % n) * n + (j + r) % n] += self.p[(i * n + j) * n + r];
                }
            }
        }
        Ok(GridDensity { dims: 2, n, p: out })
    }

    /// Builds a density on the same lattice from an unnormalized log kernel.
    pub fn from_log_kernel(dims: usize, n: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut g = GridDensity::uniform(dims, n)?;
        g.multiply_log(f);
        Ok(g)
    }

    /// `KL(self || other)`.
    pub fn kl_divergence(&self, other: &GridDensity) -> f64 {
        assert_eq!(self.p.len(), other.p.len());
        self.p
            .iter()
            .zip(&other.p)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p.ln() - q.max(1e-300).ln()))
            .sum()
    }

    pub fn total_variation(&self, other: &GridDensity) -> f64 {
        0.5 * self.p.iter().zip(&other.p).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}
