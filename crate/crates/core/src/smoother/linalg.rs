//! Stack-allocated dense matrices for the per-antenna smoother, where the
//! state never exceeds `MAX_DIM` link phases.

pub const MAX_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    d: [f64; MAX_DIM * MAX_DIM],
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows <= MAX_DIM && cols <= MAX_DIM, "matrix exceeds {MAX_DIM}x{MAX_DIM}");
        Mat { rows, cols, d: [0.0; MAX_DIM * MAX_DIM] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), rows * cols);
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = v[i * cols + j];
            }
        }
        m
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                v.push(self[(i, j)]);
            }
        }
        v
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows);
        let mut out = Self::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..b.cols {
                    out[(i, j)] += a * b[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, b: &Mat) -> Mat {
        self.zip(b, |x, y| x + y)
    }

    pub fn sub(&self, b: &Mat) -> Mat {
        self.zip(b, |x, y| x - y)
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = *self;
        out.d.iter_mut().for_each(|x| *x *= s);
        out
    }

    fn zip(&self, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!((self.rows, self.cols), (b.rows, b.cols));
        let mut out = *self;
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = f(self[(i, j)], b[(i, j)]);
            }
        }
        out
    }

    pub fn symmetrize(&mut self) {
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    /// Lower Cholesky factor, `None` unless positive definite.
    pub fn cholesky(&self) -> Option<Mat> {
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut s = self[(j, j)];
            for k in 0..j {
                s -= l[(j, k)] * l[(j, k)];
            }
            if !(s > 0.0) {
                return None;
            }
            let d = s.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    /// Inverse of a symmetric positive definite matrix.
    pub fn inv_spd(&self) -> Option<Mat> {
        let l = self.cholesky()?;
        let n = self.rows;
        // Invert L by forward substitution, then A^-1 = L^-T L^-1.
        let mut li = Self::zeros(n, n);
        for j in 0..n {
            li[(j, j)] = 1.0 / l[(j, j)];
            for i in j + 1..n {
                let mut s = 0.0;
                for k in j..i {
                    s -= l[(i, k)] * li[(k, j)];
                }
                li[(i, j)] = s / l[(i, i)];
            }
        }
        let mut out = li.transpose().mul(&li);
        out.symmetrize();
        Some(out)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        let n = self.rows;
        let mut a = *self;
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (a[(q, q)] - a[(p, p)]) / a[(p, q)];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[(k, p)], a[(k, q)]);
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[(i, i)]).collect()
    }
}

/// Solves the complex system `a x = b` (`a` row-major `n × n`) by Gaussian
/// elimination with partial pivoting. `None` if numerically singular.
pub fn solve_complex(
    n: usize,
    mut a: Vec<num_complex::Complex64>,
    mut b: Vec<num_complex::Complex64>,
) -> Option<Vec<num_complex::Complex64>> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n).max_by(|i, j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))?;
        if a[piv * n + col].norm() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / d;
            for j in col..n {
                let v = a[col * n + j];
                a[i * n + j] -= f * v;
            }
            let v = b[col];
            b[i] -= f * v;
        }
    }
    let mut x = vec![num_complex::Complex64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * x[j];
        }
        x[i] = s / a[i * n + i];
    }
    Some(x)
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.d[i * MAX_DIM + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.d[i * MAX_DIM + j]
    }
}
