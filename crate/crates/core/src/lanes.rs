//! Complex arithmetic over a fixed number of grid points at once, laid out so
//! that each operation is a plain loop over `f64` lanes.

use num_complex::Complex64 as C64;
use std::ops::{Add, AddAssign, Mul, Sub, SubAssign};

pub const LANES: usize = 4;

/// Scalar type for the pointwise curvature kernels.
pub trait Cx: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign + SubAssign {
    const ZERO: Self;
    fn conj(self) -> Self;
    fn scale(self, f: f64) -> Self;
}

impl Cx for C64 {
    const ZERO: Self = C64 { re: 0.0, im: 0.0 };

    #[inline(always)]
    fn conj(self) -> Self {
        C64::conj(&self)
    }

    #[inline(always)]
    fn scale(self, f: f64) -> Self {
        f * self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lanes {
    pub re: [f64; LANES],
    pub im: [f64; LANES],
}

impl Lanes {
    #[inline(always)]
    pub fn load(src: &[C64]) -> Self {
        let mut out = Self::ZERO;
        for (k, v) in src[..LANES].iter().enumerate() {
            out.re[k] = v.re;
            out.im[k] = v.im;
        }
        out
    }

    #[inline(always)]
    pub fn get(&self, k: usize) -> C64 {
        C64::new(self.re[k], self.im[k])
    }
}

impl Cx for Lanes {
    const ZERO: Self = Lanes {
        re: [0.0; LANES],
        im: [0.0; LANES],
    };

    #[inline(always)]
    fn conj(mut self) -> Self {
        for v in &mut self.im {
            *v = -*v;
        }
        self
    }

    #[inline(always)]
    fn scale(mut self, f: f64) -> Self {
        for k in 0..LANES {
            self.re[k] *= f;
            self.im[k] *= f;
        }
        self
    }
}

impl Add for Lanes {
    type Output = Self;

    #[inline(always)]
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl Sub for Lanes {
    type Output = Self;

    #[inline(always)]
    fn sub(mut self, o: Self) -> Self {
        self -= o;
        self
    }
}

impl AddAssign for Lanes {
    #[inline(always)]
    fn add_assign(&mut self, o: Self) {
        for k in 0..LANES {
            self.re[k] += o.re[k];
            self.im[k] += o.im[k];
        }
    }
}

impl SubAssign for Lanes {
    #[inline(always)]
    fn sub_assign(&mut self, o: Self) {
        for k in 0..LANES {
            self.re[k] -= o.re[k];
            self.im[k] -= o.im[k];
        }
    }
}

impl Mul for Lanes {
    type Output = Self;

    #[inline(always)]
    fn mul(self, o: Self) -> Self {
        let mut out = Self::ZERO;
        for k in 0..LANES {
            out.re[k] = self.re[k] * o.re[k] - self.im[k] * o.im[k];
            out.im[k] = self.re[k] * o.im[k] + self.im[k] * o.re[k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanes_match_scalar_arithmetic() {
        let a: Vec<C64> = (0..LANES).map(|k| C64::new(k as f64 + 0.5, 1.0 - k as f64)).collect();
        let b: Vec<C64> = (0..LANES).map(|k| C64::new(-0.25 * k as f64, 2.0 + k as f64)).collect();
        let (la, lb) = (Lanes::load(&a), Lanes::load(&b));
        let (p, s, d) = (la * lb.conj(), la + lb, la - lb);
        for k in 0..LANES {
            assert_eq!(p.get(k), a[k] * b[k].conj());
            assert_eq!(s.get(k), a[k] + b[k]);
            assert_eq!(d.get(k), a[k] - b[k]);
        }
    }
}
