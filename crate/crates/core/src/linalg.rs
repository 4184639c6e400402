//! Dense complex matrices of order at most 6, stored inline.
//!
//! Hermitian spectra use a closed form for order 1 and 2 and cyclic Jacobi
//! sweeps otherwise, so eigenvalue monitors are reproducible bit for bit.

use num_complex::Complex64 as C64;

pub const MAX_ORDER: usize = 6;
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Copy, PartialEq)]
pub struct Mat {
    n: usize,
    a: [C64; MAX_ORDER * MAX_ORDER],
}

impl std::fmt::Debug for Mat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let rows: Vec<Vec<C64>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)]).collect())
            .collect();
        f.debug_struct("Mat").field("rows", &rows).finish()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.a[i * MAX_ORDER + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.a[i * MAX_ORDER + j]
    }
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        assert!(n <= MAX_ORDER, "matrix order {n} exceeds {MAX_ORDER}");
        Self {
            n,
            a: [ZERO; MAX_ORDER * MAX_ORDER],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        Self::identity(n).scale(C64::new(c, 0.0))
    }

    /// Build from row-major entries.
    pub fn from_rows(n: usize, entries: &[C64]) -> Self {
        assert_eq!(entries.len(), n * n);
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = entries[i * n + j];
            }
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn to_rows(&self) -> Vec<C64> {
        let mut v = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                v.push(self[(i, j)]);
            }
        }
        v
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] * c)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] + o[(i, j)])
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::from_fn(self.n, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.n;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    m[(i, j)] += a * o[(k, j)];
                }
            }
        }
        m
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// `(M + M†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)].conj()))
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max(self[(i, j)].norm());
            }
        }
        m
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self[(i, j)].norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                d = d.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        d
    }

    /// Determinant by LU elimination with partial pivoting.
    pub fn det(&self) -> C64 {
        match self.n {
            0 => ONE,
            1 => self[(0, 0)],
            2 => self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)],
            _ => {
                let mut m = *self;
                let mut det = ONE;
                for c in 0..m.n {
                    let p = (c..m.n)
                        .max_by(|&a, &b| m[(a, c)].norm().total_cmp(&m[(b, c)].norm()))
                        .unwrap();
                    if m[(p, c)] == ZERO {
                        return ZERO;
                    }
                    if p != c {
                        m.swap_rows(p, c);
                        det = -det;
                    }
                    let piv = m[(c, c)];
                    det *= piv;
                    for r in c + 1..m.n {
                        let f = m[(r, c)] / piv;
                        for k in c..m.n {
                            let v = m[(c, k)];
                            m[(r, k)] -= f * v;
                        }
                    }
                }
                det
            }
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for k in 0..self.n {
            self.a.swap(a * MAX_ORDER + k, b * MAX_ORDER + k);
        }
    }

    /// Inverse by Gauss-Jordan elimination; `None` when a pivot vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        match n {
            1 => {
                let d = self[(0, 0)];
                (d != ZERO).then(|| Self::from_rows(1, &[1.0 / d]))
            }
            2 => {
                let d = self.det();
                if d == ZERO {
                    return None;
                }
                Some(Self::from_rows(
                    2,
                    &[self[(1, 1)] / d, -self[(0, 1)] / d, -self[(1, 0)] / d, self[(0, 0)] / d],
                ))
            }
            _ => {
                let mut m = *self;
                let mut inv = Self::identity(n);
                for c in 0..n {
                    let p = (c..n)
                        .max_by(|&a, &b| m[(a, c)].norm().total_cmp(&m[(b, c)].norm()))
                        .unwrap();
                    if m[(p, c)] == ZERO {
                        return None;
                    }
                    m.swap_rows(p, c);
                    inv.swap_rows(p, c);
                    let piv = 1.0 / m[(c, c)];
                    for k in 0..n {
                        m[(c, k)] *= piv;
                        inv[(c, k)] *= piv;
                    }
                    for r in 0..n {
                        if r != c {
                            let f = m[(r, c)];
                            if f != ZERO {
                                for k in 0..n {
                                    let (a, b) = (m[(c, k)], inv[(c, k)]);
                                    m[(r, k)] -= f * a;
                                    inv[(r, k)] -= f * b;
                                }
                            }
                        }
                    }
                }
                Some(inv)
            }
        }
    }

    /// Solve `M x = b`.
    pub fn solve(&self, b: &[C64]) -> Option<Vec<C64>> {
        let inv = self.inverse()?;
        Some(
            (0..self.n)
                .map(|i| (0..self.n).map(|j| inv[(i, j)] * b[j]).sum())
                .collect(),
        )
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = self.hermitian_part();
        let mut ev = match self.n {
            0 => vec![],
            1 => vec![h[(0, 0)].re],
            2 => {
                let (a, d) = (h[(0, 0)].re, h[(1, 1)].re);
                let b = h[(0, 1)].norm();
                let m = 0.5 * (a + d);
                let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                vec![m - r, m + r]
            }
            _ => jacobi_eigenvalues(h),
        };
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_max_eigenvalues(&self) -> (f64, f64) {
        match self.n {
            1 => (self[(0, 0)].re, self[(0, 0)].re),
            2 => {
                let (a, d) = (self[(0, 0)].re, self[(1, 1)].re);
                let b = (0.5 * (self[(0, 1)] + self[(1, 0)].conj())).norm();
                let m = 0.5 * (a + d);
                let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                (m - r, m + r)
            }
            _ => {
                let ev = self.hermitian_eigenvalues();
                (ev[0], ev[ev.len() - 1])
            }
        }
    }
}

/// Cyclic complex Jacobi on a Hermitian matrix.
fn jacobi_eigenvalues(mut a: Mat) -> Vec<f64> {
    let n = a.n;
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                // Rotate in the (p, q) plane to annihilate a[p][q].
                let phase = apq / r;
                let (app, aqq) = (a[(p, p)].re, a[(q, q)].re);
                let theta = 0.5 * (2.0 * r).atan2(aqq - app);
                let (c, s) = (theta.cos(), theta.sin());
                // Columns: col_p' = c col_p - s conj(phase) col_q, col_q' = s phase col_p + c col_q
                let sp = C64::new(s, 0.0) * phase;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - sp.conj() * akq;
                    a[(k, q)] = sp * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - sp * aqk;
                    a[(q, k)] = sp.conj() * apk + c * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
            }
        }
    }
    (0..n).map(|i| a[(i, i)].re).collect()
}

/// Determinant by Laplace expansion along the first row. Exponential cost;
/// an oracle for tests and the `oracle` subcommand only.
pub fn det_cofactor(m: &Mat) -> C64 {
    fn rec(m: &Mat, rows: &[usize], cols: &[usize]) -> C64 {
        if rows.len() == 1 {
            return m[(rows[0], cols[0])];
        }
        let mut acc = ZERO;
        for (c, &col) in cols.iter().enumerate() {
            let sub: Vec<usize> = cols.iter().copied().filter(|&x| x != col).collect();
            let term = m[(rows[0], col)] * rec(m, &rows[1..], &sub);
            if c % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
        acc
    }
    if m.n == 0 {
        return ONE;
    }
    let idx: Vec<usize> = (0..m.n).collect();
    rec(m, &idx, &idx)
}

/// Random Hermitian positive definite matrix `A A† + δ I` from a generator of
/// standard normals.
pub fn random_hpd(n: usize, delta: f64, mut normal: impl FnMut() -> f64) -> Mat {
    let a = Mat::from_fn(n, |_, _| C64::new(normal(), normal()));
    a.mul(&a.adjoint()).add(&Mat::scaled_identity(n, delta))
}
