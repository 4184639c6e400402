//! Independent reference computations used to cross-check the spectral and
//! determinant kernels.

use crate::error::Result;
use crate::field::{pointwise, Field};
use crate::flow::{random_pluriclosed_perturbation, Background, FlowState};
use crate::gk::{gk_rhs, random_gk_potential, GkBackground, GkState, ProductLattice};
use crate::hermitian::Geometry;
use crate::lattice::ComplexLattice;
use crate::linalg::det_cofactor;
use crate::spectral::{Grid, Kind};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Fourth-order centered difference along real axis `axis`.
fn fd_axis(field: &Field, values: &[C64], axis: usize) -> Vec<C64> {
    let lat = field.grid().lattice();
    let n = lat.sizes()[axis] as isize;
    let stride = lat.strides()[axis];
    let h = lat.spacing(axis);
    let mut mi = vec![0; lat.real_dim()];
    (0..values.len())
        .map(|p| {
            lat.unravel(p, &mut mi);
            let j = mi[axis] as isize;
            let base = p - mi[axis] * stride;
            let at = |o: isize| values[base + ((j + o).rem_euclid(n) as usize) * stride];
            (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h)
        })
        .collect()
}

/// `∂_i` or `∂_ī` by fourth-order finite differences.
pub fn fd_partial(field: &Field, i: usize, kind: Kind) -> Result<Field> {
    field.grid().lattice().check_complex_axis(i)?;
    let comps = field
        .comps()
        .iter()
        .map(|c| {
            let dx = fd_axis(field, c, 2 * i);
            let dy = fd_axis(field, c, 2 * i + 1);
            let s = match kind {
                Kind::Holo => -1.0,
                Kind::Antiholo => 1.0,
            };
            dx.iter()
                .zip(&dy)
                .map(|(a, b)| 0.5 * (a + C64::new(0.0, s) * b))
                .collect()
        })
        .collect();
    Field::from_comps(field.grid(), field.shape().to_vec(), field.sig(), comps)
}

/// A finite Fourier sum, evaluable anywhere on the torus.
#[derive(Debug, Clone)]
pub struct BandLimited {
    periods: Vec<f64>,
    modes: Vec<(Vec<i64>, C64)>,
}

impl BandLimited {
    /// `count` random modes with every integer index in `[-max_mode, max_mode]`.
    pub fn random(lattice: &ComplexLattice, seed: u64, count: usize, max_mode: i64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = (0..count)
            .map(|_| {
                let m = (0..lattice.real_dim())
                    .map(|_| rng.gen_range(-max_mode..=max_mode))
                    .collect();
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                (m, C64::new(re, im))
            })
            .collect();
        Self {
            periods: lattice.periods().to_vec(),
            modes,
        }
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        self.modes
            .iter()
            .map(|(m, c)| {
                let phase: f64 = m
                    .iter()
                    .zip(x)
                    .zip(&self.periods)
                    .map(|((&k, &xa), &l)| 2.0 * PI * k as f64 * xa / l)
                    .sum();
                c * C64::from_polar(1.0, phase)
            })
            .sum()
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> Field {
        Field::scalar_fn(grid, |x| self.eval(x))
    }
}

/// `∂_i f` or `∂_ī f` at `x` by fourth-order centered differences of step `h`
/// applied to a function defined off the grid.
pub fn fd_partial_at(f: &dyn Fn(&[f64]) -> C64, x: &[f64], i: usize, kind: Kind, h: f64) -> C64 {
    let mut y = x.to_vec();
    let mut axis = |a: usize| {
        let mut at = |o: f64| {
            y[a] = x[a] + o * h;
            let v = f(&y);
            y[a] = x[a];
            v
        };
        (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
    };
    let dx = axis(2 * i);
    let dy = axis(2 * i + 1);
    let s = match kind {
        Kind::Holo => -1.0,
        Kind::Antiholo => 1.0,
    };
    0.5 * (dx + C64::new(0.0, s) * dy)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleEntry {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleEntry {
    fn new(name: &str, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            error,
            tolerance,
            pass: error < tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
    pub pass: bool,
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<28} error {:.3e}  tol {:.0e}  {}",
                e.name,
                e.error,
                e.tolerance,
                if e.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Largest relative gap between spectral `∂_i`, `∂_ī` of a sampled
/// band-limited field and the off-grid difference oracle, checked at every
/// `stride`-th grid point.
pub fn spectral_vs_fd(lattice: ComplexLattice, seed: u64, count: usize, stride: usize) -> Result<f64> {
    let max_mode = (lattice.sizes().iter().min().copied().unwrap_or(0) / 4) as i64;
    let grid = Grid::new(lattice);
    let f = BandLimited::random(grid.lattice(), seed, count, max_mode);
    let field = f.sample(&grid);
    let coords = grid.lattice().coordinates();
    let h = 1e-3 * grid.lattice().min_spacing();
    let eval = |x: &[f64]| f.eval(x);
    let (mut err, mut scale): (f64, f64) = (0.0, 0.0);
    for i in 0..grid.n() {
        for kind in [Kind::Holo, Kind::Antiholo] {
            let d = field.partial(i, kind)?;
            for p in (0..grid.len()).step_by(stride.max(1)) {
                let x: Vec<f64> = coords.iter().map(|c| c[p]).collect();
                let o = fd_partial_at(&eval, &x, i, kind, h);
                err = err.max((d.values()[p] - o).norm());
                scale = scale.max(o.norm());
            }
        }
    }
    Ok(err / scale)
}

/// Largest gap between `gk_rhs` and the log-determinants of the blocks
/// recomputed by cofactor expansion.
pub fn gk_rhs_vs_cofactor(size: usize, seed: u64) -> Result<f64> {
    let pl = ProductLattice::new(
        ComplexLattice::uniform(2, size, PI)?,
        ComplexLattice::uniform(1, size, PI)?,
    )?;
    let grid = Grid::new(pl.combined().clone());
    let bg = GkBackground::identity(2, 1);
    let (u, _, _) = random_gk_potential(&grid, 2, &bg, seed, 0.1, 2.0)?;
    let s = GkState::new(u, 2, bg)?;
    let rhs = gk_rhs(&s)?;
    let (gp, gm) = s.blocks();
    let mut worst: f64 = 0.0;
    for x in 0..grid.len() {
        let o = det_cofactor(&gp.mat_at(x)).re.ln() - det_cofactor(&gm.mat_at(x)).re.ln();
        worst = worst.max((rhs.values()[x].re - o).abs());
    }
    Ok(worst)
}

/// `sup |Q − ½|T|² g|` relative to `sup |Q|` on a seeded surface metric.
pub fn q_half_torsion(size: usize, seed: u64) -> Result<f64> {
    let grid = Grid::new(ComplexLattice::uniform(2, size, PI)?);
    let bg = Background::identity(2);
    let a = random_pluriclosed_perturbation(&grid, &bg, seed, 0.3, 2.0)?;
    let s = FlowState::oneform(a.alpha, bg)?;
    let geo = Geometry::new(&s.g, false);
    let out = pointwise(&grid, vec![2], "", |x, out| {
        let l = geo.local(x);
        let q = l.torsion_q();
        let d = q.sub(&l.g.scale(C64::new(0.5 * l.torsion_norm_sq(), 0.0)));
        out[0] = C64::new(d.max_abs(), 0.0);
        out[1] = C64::new(q.max_abs(), 0.0);
    });
    let sup = |c: usize| out.comp(c).iter().map(|v| v.re).fold(0.0, f64::max);
    Ok(sup(0) / sup(1))
}

/// The oracle cross-checks at their fixed sizes and tolerances.
pub fn run_oracles() -> Result<OracleReport> {
    let entries = vec![
        OracleEntry::new(
            "spectral_vs_fd n=1 N=32",
            spectral_vs_fd(ComplexLattice::uniform(1, 32, 2.0 * PI)?, 1, 40, 1)?,
            1e-6,
        ),
        OracleEntry::new(
            "spectral_vs_fd n=2 N=32",
            spectral_vs_fd(ComplexLattice::uniform(2, 32, 2.0 * PI)?, 2, 12, 61)?,
            1e-6,
        ),
        OracleEntry::new("gk_rhs_vs_cofactor", gk_rhs_vs_cofactor(8, 7)?, 1e-12),
        OracleEntry::new("q_half_torsion_norm", q_half_torsion(12, 3)?, 1e-10),
    ];
    Ok(OracleReport {
        pass: entries.iter().all(|e| e.pass),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ComplexLattice;
    use crate::spectral::Grid;
    use std::f64::consts::PI;

    #[test]
    fn constant_gives_zero() {
        let g = Grid::new(ComplexLattice::uniform(1, 8, 1.0).unwrap());
        let f = Field::scalar_fn(&g, |_| C64::new(2.0, 1.0));
        assert_eq!(fd_partial(&f, 0, Kind::Holo).unwrap().sup_abs(), 0.0);
    }

    #[test]
    fn off_grid_stencil_on_plane_wave() {
        let f = |x: &[f64]| C64::from_polar(1.0, 3.0 * x[0] - 2.0 * x[1]);
        let x = [0.3, 1.1];
        let d = fd_partial_at(&f, &x, 0, Kind::Holo, 1e-3);
        let exact = 0.5 * (C64::new(0.0, 3.0) - C64::new(0.0, 1.0) * C64::new(0.0, -2.0)) * f(&x);
        assert!((d - exact).norm() < 1e-10);
    }

    #[test]
    fn spectral_matches_oracle_on_small_grid() {
        let e = spectral_vs_fd(ComplexLattice::uniform(1, 16, 2.0 * PI).unwrap(), 9, 10, 1).unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn sine_converges_at_fourth_order() {
        let err = |size: usize| {
            let g = Grid::new(ComplexLattice::uniform(1, size, 2.0 * PI).unwrap());
            let f = Field::scalar_fn(&g, |x| C64::new(x[0].sin(), 0.0));
            let d = fd_partial(&f, 0, Kind::Holo).unwrap();
            let exact = Field::scalar_fn(&g, |x| C64::new(0.5 * x[0].cos(), 0.0));
            d.sup_distance(&exact).unwrap()
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e1 / e2 >= 12.0, "ratio {}", e1 / e2);
    }
}
