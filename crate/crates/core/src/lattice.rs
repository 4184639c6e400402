//! Rectangular periodic lattices discretizing flat tori ℂⁿ/Λ.

use crate::error::{PcfError, Result};
use std::f64::consts::PI;

/// Largest complex dimension accepted. n = 3 runs but is slow at any
/// useful resolution.
pub const MAX_COMPLEX_DIM: usize = 3;

/// Equispaced periodic grid over the real axes `x¹, y¹, …, xⁿ, yⁿ`.
///
/// Complex coordinate `zⁱ` lives on the real axis pair `(2i, 2i + 1)`
/// (zero-based). Storage order is row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLattice {
    n: usize,
    sizes: Vec<usize>,
    periods: Vec<f64>,
}

impl ComplexLattice {
    pub fn new(n: usize, sizes: Vec<usize>, periods: Vec<f64>) -> Result<Self> {
        let mut errs = Vec::new();
        if n == 0 || n > MAX_COMPLEX_DIM {
            errs.push(format!("n must be in 1..={MAX_COMPLEX_DIM}, got {n}"));
        }
        if sizes.len() != 2 * n {
            errs.push(format!("expected {} axis sizes, got {}", 2 * n, sizes.len()));
        }
        if periods.len() != 2 * n {
            errs.push(format!("expected {} periods, got {}", 2 * n, periods.len()));
        }
        for &s in &sizes {
            if s % 2 != 0 {
                errs.push("sizes must be even".to_string());
                break;
            }
        }
        for &s in &sizes {
            if s < 8 {
                errs.push(format!("sizes must be at least 8, got {s}"));
                break;
            }
        }
        for &p in &periods {
            if !(p.is_finite() && p > 0.0) {
                errs.push(format!("periods must be positive, got {p}"));
                break;
            }
        }
        if !errs.is_empty() {
            return Err(PcfError::Lattice(errs.join("; ")));
        }
        Ok(Self { n, sizes, periods })
    }

    /// `N` points per axis and period `L` on every real axis.
    pub fn uniform(n: usize, size: usize, period: f64) -> Result<Self> {
        Self::new(n, vec![size; 2 * n], vec![period; 2 * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.sizes[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.real_dim())
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed mode index for position `j` along an axis of size `size`:
    /// `0, 1, …, N/2, −N/2 + 1, …, −1`.
    pub fn signed_mode(j: usize, size: usize) -> i64 {
        if j <= size / 2 {
            j as i64
        } else {
            j as i64 - size as i64
        }
    }

    /// Wavenumber table `k_a(j) = 2π j / L_a` in standard signed ordering.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let size = self.sizes[axis];
        let scale = 2.0 * PI / self.periods[axis];
        (0..size).map(|j| Self::signed_mode(j, size) as f64 * scale).collect()
    }

    /// Row-major strides (axis 0 slowest).
    pub fn strides(&self) -> Vec<usize> {
        let d = self.real_dim();
        let mut s = vec![1; d];
        for a in (0..d.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.sizes[a + 1];
        }
        s
    }

    /// Multi-index of a flat grid position.
    pub fn unravel(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.real_dim()).rev() {
            out[a] = idx % self.sizes[a];
            idx /= self.sizes[a];
        }
    }

    /// Real coordinates of every grid point, axis by axis.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        let d = self.real_dim();
        let mut coords = vec![Vec::with_capacity(self.len()); d];
        let mut mi = vec![0; d];
        for idx in 0..self.len() {
            self.unravel(idx, &mut mi);
            for a in 0..d {
                coords[a].push(mi[a] as f64 * self.spacing(a));
            }
        }
        coords
    }

    /// Complex axis check shared by the derivative operators.
    pub fn check_complex_axis(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(PcfError::AxisOutOfRange { axis: i, n: self.n });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_and_small_sizes() {
        let err = ComplexLattice::new(1, vec![15, 16], vec![1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("sizes must be even"));
        assert!(ComplexLattice::new(1, vec![6, 16], vec![1.0, 1.0]).is_err());
        assert!(ComplexLattice::new(4, vec![8; 8], vec![1.0; 8]).is_err());
        assert!(ComplexLattice::new(1, vec![8, 8], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn wavenumbers_signed_order() {
        let lat = ComplexLattice::uniform(1, 8, 2.0 * PI).unwrap();
        let k = lat.wavenumbers(0);
        assert_eq!(k, vec![0.0, 1.0, 2.0, 3.0, 4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn unravel_matches_strides() {
        let lat = ComplexLattice::new(1, vec![8, 10], vec![1.0, 2.0]).unwrap();
        let st = lat.strides();
        let mut mi = [0; 2];
        for idx in [0, 7, 13, 79] {
            lat.unravel(idx, &mut mi);
            assert_eq!(mi[0] * st[0] + mi[1] * st[1], idx);
        }
    }
}
