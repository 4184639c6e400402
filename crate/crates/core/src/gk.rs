//! Commuting generalized Kähler scalar flow on a product torus.
//!
//! The first `k` complex coordinates span the `+` factor and the remaining
//! `l` the `−` factor. Every sign that distinguishes the two factors goes
//! through [`block_sign`].

use crate::diagnostics::{metric_record, DiagnosticsRecord, GkColumns};
use crate::error::{PcfError, PositivityError, Result};
use crate::field::{inf, pointwise, sup, Field, ZERO};
use crate::flow::{Integrator, StepControl};
use crate::hermitian::{complex_hessian, MetricField};
use crate::lattice::ComplexLattice;
use crate::linalg::Mat;
use crate::spectral::Grid;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// Two torus factors and their product grid.
#[derive(Debug, Clone)]
pub struct ProductLattice {
    plus: ComplexLattice,
    minus: ComplexLattice,
    combined: ComplexLattice,
}

impl ProductLattice {
    pub fn new(plus: ComplexLattice, minus: ComplexLattice) -> Result<Self> {
        let sizes = [plus.sizes(), minus.sizes()].concat();
        let periods = [plus.periods(), minus.periods()].concat();
        let combined = ComplexLattice::new(plus.n() + minus.n(), sizes, periods)?;
        Ok(Self { plus, minus, combined })
    }

    pub fn k(&self) -> usize {
        self.plus.n()
    }

    pub fn l(&self) -> usize {
        self.minus.n()
    }

    pub fn plus(&self) -> &ComplexLattice {
        &self.plus
    }

    pub fn minus(&self) -> &ComplexLattice {
        &self.minus
    }

    pub fn combined(&self) -> &ComplexLattice {
        &self.combined
    }
}

/// `+1` on the `+` factor (index `< k`), `−1` on the `−` factor.
pub fn block_sign(k: usize, i: usize) -> f64 {
    if i < k {
        1.0
    } else {
        -1.0
    }
}

fn same_block(k: usize, i: usize, j: usize) -> bool {
    (i < k) == (j < k)
}

/// `□f`: `+∂₊∂̄₊f` on the `+` block, `−∂₋∂̄₋f` on the `−` block, zero
/// between blocks.
pub fn square_operator(f: &Field, k: usize) -> Field {
    let grid = f.grid();
    let n = grid.n();
    let hat = grid.forward(f.values());
    let comps = (0..n * n)
        .map(|c| {
            let (i, j) = (c / n, c % n);
            if same_block(k, i, j) {
                let w = block_sign(k, i);
                grid.derive2_hat(&hat, i, j).into_iter().map(|v| w * v).collect()
            } else {
                vec![ZERO; grid.len()]
            }
        })
        .collect();
    Field::matrix(grid, comps).expect("n×n components")
}

fn log_det_block(h: &Field, what: &str) -> Result<Vec<f64>> {
    let m = MetricField::new(h.clone()).map_err(|e| rename(e, what))?;
    Ok(m.log_det())
}

fn rename(e: PcfError, what: &str) -> PcfError {
    match e {
        PcfError::Positivity(mut p) => {
            p.what = what.to_string();
            PcfError::Positivity(p)
        }
        other => other,
    }
}

/// `χ(h₊, h₋) = ρ⁺(h₊) − ρ⁻(h₊) + ρ⁻(h₋) − ρ⁺(h₋)`, which equals
/// `−□ log(det h₊ / det h₋)`.
pub fn chi_form(h_plus: &Field, h_minus: &Field, k: usize) -> Result<Field> {
    let lp = log_det_block(h_plus, "h+ block")?;
    let lm = log_det_block(h_minus, "h- block")?;
    let grid = h_plus.grid();
    let f = Field::scalar(grid, lp.iter().zip(&lm).map(|(a, b)| C64::new(b - a, 0.0)).collect())?;
    let mut chi = square_operator(&f, k);
    chi.symmetrize();
    Ok(chi)
}

/// Flat background blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GkBackground {
    pub g0_plus: Mat,
    pub g0_minus: Mat,
    pub h_plus: Mat,
    pub h_minus: Mat,
}

impl GkBackground {
    pub fn identity(k: usize, l: usize) -> Self {
        Self {
            g0_plus: Mat::identity(k),
            g0_minus: Mat::identity(l),
            h_plus: Mat::identity(k),
            h_minus: Mat::identity(l),
        }
    }

    fn block(&self, plus: bool) -> (&Mat, &Mat) {
        if plus {
            (&self.g0_plus, &self.h_plus)
        } else {
            (&self.g0_minus, &self.h_minus)
        }
    }

    pub fn assembled_h(&self) -> Mat {
        blockdiag(&self.h_plus, &self.h_minus)
    }

    pub fn assembled_g0(&self) -> Mat {
        blockdiag(&self.g0_plus, &self.g0_minus)
    }
}

fn blockdiag(a: &Mat, b: &Mat) -> Mat {
    let k = a.order();
    Mat::from_fn(k + b.order(), |i, j| match (i < k, j < k) {
        (true, true) => a[(i, j)],
        (false, false) => b[(i - k, j - k)],
        _ => ZERO,
    })
}

#[derive(Debug, Clone)]
pub struct GkState {
    pub t: f64,
    pub u: Field,
    pub k: usize,
    pub background: GkBackground,
    log_det: [Vec<f64>; 2],
    min_eig: [f64; 2],
}

impl GkState {
    /// Validates both blocks of `g⁰ + □u`.
    pub fn new(u: Field, k: usize, background: GkBackground) -> Result<Self> {
        let u = u.map(|v| C64::new(v.re, 0.0));
        let grid = u.grid().clone();
        let n = grid.n();
        if background.g0_plus.order() != k || background.g0_minus.order() + k != n {
            return Err(PcfError::Shape(format!(
                "background blocks {}+{} do not match dimension {n} with k = {k}",
                background.g0_plus.order(),
                background.g0_minus.order()
            )));
        }
        let sq = square_operator(&u, k);
        let g0 = background.assembled_g0();
        let packed = pointwise(&grid, vec![4], "", |x, out| {
            for (b, range) in [0..k, k..n].into_iter().enumerate() {
                let m = Mat::from_fn(range.len(), |i, j| {
                    let (a, c) = (range.start + i, range.start + j);
                    g0[(a, c)] + sq.comp(a * n + c)[x]
                });
                out[2 * b] = C64::new(m.min_max_eigenvalues().0, 0.0);
                out[2 * b + 1] = C64::new(m.det().re, 0.0);
            }
        });
        let mut log_det = [vec![], vec![]];
        let mut min_eig = [0.0; 2];
        for (b, what) in ["g+ block", "g- block"].into_iter().enumerate() {
            let lam: Vec<f64> = packed.comp(2 * b).iter().map(|v| v.re).collect();
            let at = crate::field::argmax(&lam.iter().map(|v| -v).collect::<Vec<_>>());
            if !(lam[at] > 0.0) {
                return Err(PositivityError {
                    what: what.into(),
                    min_eigenvalue: lam[at],
                    floor: 0.0,
                    point: at,
                    t: None,
                }
                .into());
            }
            min_eig[b] = lam[at];
            log_det[b] = packed.comp(2 * b + 1).iter().map(|v| v.re.ln()).collect();
        }
        Ok(Self {
            t: 0.0,
            u,
            k,
            background,
            log_det,
            min_eig,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid()
    }

    /// `g⁰ + □u`, block diagonal.
    pub fn metric(&self) -> Result<MetricField> {
        let g0 = Field::constant_matrix(self.grid(), &self.background.assembled_g0());
        MetricField::new(g0.add(&square_operator(&self.u, self.k))?)
    }

    /// Smallest eigenvalue of each block over the grid.
    pub fn min_eigenvalues(&self) -> [f64; 2] {
        self.min_eig
    }

    /// `(g₊ᵘ, g₋ᵘ)` as block-sized matrix fields.
    pub fn blocks(&self) -> (Field, Field) {
        let n = self.grid().n();
        let k = self.k;
        let g0 = self.background.assembled_g0();
        let sq = square_operator(&self.u, k);
        let pick = |range: std::ops::Range<usize>| {
            let m = range.len();
            let comps = (0..m * m)
                .map(|c| {
                    let (a, b) = (range.start + c / m, range.start + c % m);
                    sq.comp(a * n + b).iter().map(|v| v + g0[(a, b)]).collect()
                })
                .collect();
            Field::from_comps(self.grid(), vec![m, m], "ij̄", comps).expect("block sized")
        };
        (pick(0..k), pick(k..n))
    }
}

/// `u̇ = Σ_± ±(log det g_±ᵘ − log det h_±)`.
pub fn gk_rhs(state: &GkState) -> Result<Field> {
    let k = state.k;
    let bg = &state.background;
    let mut out = vec![0.0; state.grid().len()];
    for (b, first) in [0, k].into_iter().enumerate() {
        let sign = block_sign(k, first);
        let lh = bg.block(first < k).1.det().re.ln();
        for (o, v) in out.iter_mut().zip(&state.log_det[b]) {
            *o += sign * (v - lh);
        }
    }
    Field::scalar_real(state.grid(), &out)
}

fn from_u(state: &GkState, u: Vec<C64>, t: f64) -> Result<GkState> {
    let mut s =
        GkState::new(Field::scalar(state.grid(), u)?, state.k, state.background.clone()).map_err(|e| match e {
            PcfError::Positivity(mut p) => {
                p.t = Some(t);
                PcfError::Positivity(p)
            }
            other => other,
        })?;
    s.t = t;
    Ok(s)
}

fn rhs_values(state: &GkState, dealias: bool) -> Result<Vec<C64>> {
    let mut v = gk_rhs(state)?.into_comps().pop().expect("scalar");
    if dealias {
        state.grid().dealias_values(&mut v);
        for x in v.iter_mut() {
            x.im = 0.0;
        }
    }
    Ok(v)
}

fn axpy(y: &[C64], terms: &[(f64, &[C64])]) -> Vec<C64> {
    (0..y.len())
        .map(|p| terms.iter().fold(y[p], |acc, (w, k)| acc + *w * k[p]))
        .collect()
}

/// `dt = safety · h_min² / (n · sup λ_max(g⁻¹))` for the assembled metric.
pub fn gk_cfl_dt(state: &GkState, ctrl: &StepControl) -> f64 {
    let lat = state.grid().lattice();
    let h = lat.min_spacing();
    let lam = state.min_eig[0].min(state.min_eig[1]);
    ctrl.cfl_safety * h * h * lam / lat.n() as f64
}

pub fn gk_step(state: &GkState, ctrl: &StepControl, dt: f64) -> Result<GkState> {
    let y = state.u.values();
    let t = state.t;
    let f = |s: &GkState| rhs_values(s, ctrl.dealias);
    match ctrl.integrator {
        Integrator::Euler => from_u(state, axpy(y, &[(dt, &f(state)?)]), t + dt),
        Integrator::Rk4 => {
            let k1 = f(state)?;
            let k2 = f(&from_u(state, axpy(y, &[(0.5 * dt, &k1)]), t + 0.5 * dt)?)?;
            let k3 = f(&from_u(state, axpy(y, &[(0.5 * dt, &k2)]), t + 0.5 * dt)?)?;
            let k4 = f(&from_u(state, axpy(y, &[(dt, &k3)]), t + dt)?)?;
            let w = dt / 6.0;
            from_u(
                state,
                axpy(y, &[(w, &k1), (2.0 * w, &k2), (2.0 * w, &k3), (w, &k4)]),
                t + dt,
            )
        }
    }
}

/// Seeded real few-mode potential scaled to `sup|u₀| = amplitude`, halved
/// until both blocks stay positive. Returns the potential, the amplitude
/// used and the number of halvings.
pub fn random_gk_potential(
    grid: &Arc<Grid>,
    k: usize,
    background: &GkBackground,
    seed: u64,
    amplitude: f64,
    max_mode: f64,
) -> Result<(Field, f64, u32)> {
    let lat = grid.lattice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mi = vec![0; lat.real_dim()];
    let mut hat = vec![ZERO; grid.len()];
    for (idx, h) in hat.iter_mut().enumerate() {
        lat.unravel(idx, &mut mi);
        let r2: i64 = mi
            .iter()
            .zip(lat.sizes())
            .map(|(&j, &s)| ComplexLattice::signed_mode(j, s).pow(2))
            .sum();
        if r2 == 0 || (r2 as f64) > max_mode * max_mode {
            continue;
        }
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *h = C64::new(re, im);
    }
    let raw: Vec<C64> = grid.inverse(hat).into_iter().map(|v| C64::new(v.re, 0.0)).collect();
    let size = raw.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if amplitude == 0.0 || size == 0.0 {
        return Ok((Field::zeros(grid, vec![], ""), 0.0, 0));
    }
    let mut amp = amplitude;
    let mut halvings = 0;
    loop {
        let u = Field::scalar(grid, raw.iter().map(|v| v * (amp / size)).collect())?;
        if GkState::new(u.clone(), k, background.clone()).is_ok() {
            return Ok((u, amp, halvings));
        }
        amp *= 0.5;
        halvings += 1;
    }
}

/// Record of a GK state: metric columns of the assembled metric plus the
/// scalar monitors.
pub fn gk_record(state: &GkState, mean0: &[C64]) -> Result<DiagnosticsRecord> {
    let bg = &state.background;
    let mut r = metric_record(state.t, &state.metric()?, &bg.assembled_h(), mean0, None)?;
    let udot = gk_rhs(state)?.real_values();
    let u = state.u.real_values();
    let n = state.grid().n();
    let hess = complex_hessian(&state.u);
    let lap = pointwise(state.grid(), vec![], "", |x, out| {
        let mut s = ZERO;
        for i in 0..n {
            s += hess.comp(i * n + i)[x];
        }
        out[0] = s;
    });
    r.gk = Some(GkColumns {
        sup_abs_udot: udot.iter().map(|v| v.abs()).fold(0.0, f64::max),
        inf_udot: inf(&udot),
        osc_u: sup(&u) - inf(&u),
        min_eig_plus: state.min_eig[0],
        min_eig_minus: state.min_eig[1],
        inf_laplacian_u: inf(&lap.real_values()),
    });
    Ok(r)
}
