//! Pluriclosed flow on the torus in three formulations (metric, one-form
//! potential, split `(β, f)`), explicit time stepping and initial data.

use crate::error::{PcfError, Result};
use crate::field::{pointwise, Field, ZERO};
use crate::hermitian::{complex_hessian, metric_from_oneform, oneform_to_metric_delta, Geometry, Local, MetricField};
use crate::linalg::Mat;
use crate::spectral::{Grid, Kind};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Metric,
    Oneform,
    Split,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::Metric => "metric",
            Formulation::Oneform => "oneform",
            Formulation::Split => "split",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Self::Metric, Self::Oneform, Self::Split].get(c as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Euler,
}

/// Flat background data `(ĝ, h)`; `μ ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub ghat: Mat,
    pub h: Mat,
}

impl Background {
    pub fn identity(n: usize) -> Self {
        Self {
            ghat: Mat::identity(n),
            h: Mat::identity(n),
        }
    }

    /// Positivity floor: `10⁻⁶` times the mean eigenvalue of `ĝ`.
    pub fn positivity_floor(&self) -> f64 {
        1e-6 * self.ghat.trace().re / self.ghat.order() as f64
    }
}

/// Step-size policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    /// Fixed step; `None` uses the CFL bound every step.
    pub dt: Option<f64>,
    pub cfl_safety: f64,
    pub integrator: Integrator,
    pub dealias: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            dt: None,
            cfl_safety: 0.1,
            integrator: Integrator::Rk4,
            dealias: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub formulation: Formulation,
    pub g: MetricField,
    pub alpha: Option<Field>,
    pub beta: Option<Field>,
    pub f: Option<Field>,
    pub background: Background,
    pub normalized: bool,
}

type Vars = Vec<Vec<C64>>;

impl FlowState {
    pub fn metric(g: Field, background: Background, normalized: bool) -> Result<Self> {
        let floor = background.positivity_floor();
        Ok(Self {
            t: 0.0,
            formulation: Formulation::Metric,
            g: MetricField::with_floor(g, floor, "g")?,
            alpha: None,
            beta: None,
            f: None,
            background,
            normalized,
        })
    }

    pub fn oneform(alpha: Field, background: Background) -> Result<Self> {
        let g = metric_of_alpha(&alpha, &background)?;
        Ok(Self {
            t: 0.0,
            formulation: Formulation::Oneform,
            g,
            alpha: Some(alpha),
            beta: None,
            f: None,
            background,
            normalized: false,
        })
    }

    /// Split variables with `α = β − (√−1/2) ∂f`; `f` is real.
    pub fn split(beta: Field, f: Field, background: Background) -> Result<Self> {
        let f = f.map(|v| C64::new(v.re, 0.0));
        let alpha = alpha_from_split(&beta, &f)?;
        let g = metric_of_alpha(&alpha, &background)?;
        Ok(Self {
            t: 0.0,
            formulation: Formulation::Split,
            g,
            alpha: Some(alpha),
            beta: Some(beta),
            f: Some(f),
            background,
            normalized: false,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.g.grid()
    }

    pub fn n(&self) -> usize {
        self.g.n()
    }

    pub fn ghat_field(&self) -> Field {
        Field::constant_matrix(self.grid(), &self.background.ghat)
    }

    pub fn h_field(&self) -> Field {
        Field::constant_matrix(self.grid(), &self.background.h)
    }

    fn vars(&self) -> Vars {
        match self.formulation {
            Formulation::Metric => self.g.field().comps().to_vec(),
            Formulation::Oneform => self.alpha.as_ref().expect("oneform state").comps().to_vec(),
            Formulation::Split => {
                let mut v = self.beta.as_ref().expect("split state").comps().to_vec();
                v.push(self.f.as_ref().expect("split state").values().to_vec());
                v
            }
        }
    }

    fn from_vars(&self, mut v: Vars, t: f64) -> Result<Self> {
        let grid = self.grid().clone();
        let stamp = |e: PcfError| match e {
            PcfError::Positivity(mut p) => {
                p.t = Some(t);
                PcfError::Positivity(p)
            }
            other => other,
        };
        let mut next = match self.formulation {
            Formulation::Metric => {
                let mut s =
                    Self::metric(Field::matrix(&grid, v)?, self.background.clone(), self.normalized).map_err(stamp)?;
                s.normalized = self.normalized;
                s
            }
            Formulation::Oneform => Self::oneform(Field::vector(&grid, v)?, self.background.clone()).map_err(stamp)?,
            Formulation::Split => {
                let f = v.pop().expect("f component");
                Self::split(
                    Field::vector(&grid, v)?,
                    Field::scalar(&grid, f)?,
                    self.background.clone(),
                )
                .map_err(stamp)?
            }
        };
        next.t = t;
        Ok(next)
    }
}

fn metric_of_alpha(alpha: &Field, bg: &Background) -> Result<MetricField> {
    let ghat = Field::constant_matrix(alpha.grid(), &bg.ghat);
    let g = metric_from_oneform(&ghat, alpha, None)?;
    MetricField::with_floor(g, bg.positivity_floor(), "g")
}

/// `α = β − (√−1/2) ∂f`.
pub fn alpha_from_split(beta: &Field, f: &Field) -> Result<Field> {
    let n = beta.grid().n();
    let mut comps = beta.comps().to_vec();
    for (i, c) in comps.iter_mut().enumerate().take(n) {
        let df = f.partial(i, Kind::Holo)?;
        for (a, d) in c.iter_mut().zip(df.values()) {
            *a -= 0.5 * I * d;
        }
    }
    Field::vector(beta.grid(), comps)
}

/// `∂_t g = −S + Q`, minus `g` when normalized.
pub fn pcf_metric_rhs(g: &MetricField, normalized: bool) -> Result<Field> {
    let mut rhs = Geometry::new(g, true).pcf_rhs_field(normalized);
    rhs.symmetrize();
    Ok(rhs)
}

/// `Ψ_i = √−1 g^{q̄ p} (½ ∂_i g_{p q̄} − ∂_p g_{i q̄})` at one point.
pub(crate) fn psi_local(l: &Local) -> [C64; 3] {
    let n = l.n;
    let mut out = [ZERO; 3];
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let mut s = ZERO;
        for p in 0..n {
            for q in 0..n {
                s += l.gi[(q, p)] * (0.5 * l.dg[i][p][q] - l.dg[p][i][q]);
            }
        }
        *o = I * s;
    }
    out
}

/// The one-form velocity as a function of the induced metric (flat `ĝ`, `h`).
pub fn oneform_velocity(g: &MetricField) -> Field {
    let n = g.n();
    let geo = Geometry::new(g, false);
    pointwise(g.grid(), vec![n], "i", |p, out| {
        let v = psi_local(&geo.local(p));
        out.copy_from_slice(&v[..n]);
    })
}

/// `α̇` of the reduced flow over the flat background of `state`.
pub fn reduced_oneform_rhs(alpha: &Field, state: &FlowState) -> Result<Field> {
    let g = metric_of_alpha(alpha, &state.background)?;
    Ok(oneform_velocity(&g))
}

/// `(β̇, ḟ)` of the split system.
///
/// `β̇_i = g^{l̄ k}(∂_k ∂_l̄ β_i − Γ_{k i}^p ∂_l̄ β_p) − g^{l̄ k} g^{q̄ p} T_{i k q̄} ∂_l̄ β_p`,
/// `ḟ = g^{q̄ p} ∂_p ∂_q̄ f + tr_g ĝ + log(det g / det h)`.
pub fn split_system_rhs(beta: &Field, f: &Field, state: &FlowState) -> Result<(Field, Field)> {
    let alpha = alpha_from_split(beta, f)?;
    let g = metric_of_alpha(&alpha, &state.background)?;
    let grid = g.grid().clone();
    let n = g.n();
    let geo = Geometry::new(&g, false);
    let bhat: Vec<Vec<C64>> = beta.comps().iter().map(|c| grid.forward(c)).collect();
    // db[i][l] = ∂_l̄ β_i, ddb[i][k][l] = ∂_k ∂_l̄ β_i
    let mut db = Vec::with_capacity(n * n);
    let mut ddb = Vec::with_capacity(n * n * n);
    for h in &bhat {
        for l in 0..n {
            db.push(grid.derive_hat(h, l, Kind::Antiholo));
        }
        for k in 0..n {
            for l in 0..n {
                ddb.push(grid.derive2_hat(h, k, l));
            }
        }
    }
    let fhat = grid.forward(f.values());
    let mut ddf = Vec::with_capacity(n * n);
    for p in 0..n {
        for q in 0..n {
            ddf.push(grid.derive2_hat(&fhat, p, q));
        }
    }
    let ghat = state.background.ghat;
    let log_det_h = state.background.h.det().re.ln();
    let out = pointwise(&grid, vec![n + 1], "", |x, out| {
        let l = geo.local(x);
        let gam = l.gamma();
        let t = l.torsion();
        for i in 0..n {
            let mut s = ZERO;
            for k in 0..n {
                for ll in 0..n {
                    let mut w = ddb[(i * n + k) * n + ll][x];
                    for p in 0..n {
                        w -= gam[k][i][p] * db[p * n + ll][x];
                        let mut tq = ZERO;
                        for q in 0..n {
                            tq += l.gi[(q, p)] * t[i][k][q];
                        }
                        w -= tq * db[p * n + ll][x];
                    }
                    s += l.gi[(ll, k)] * w;
                }
            }
            out[i] = s;
        }
        let mut fdot = ZERO;
        for p in 0..n {
            for q in 0..n {
                fdot += l.gi[(q, p)] * (ddf[p * n + q][x] + ghat[(p, q)]);
            }
        }
        out[n] = C64::new(fdot.re + l.g.det().re.ln() - log_det_h, 0.0);
    });
    let mut comps = out.into_comps();
    let fdot = comps.pop().expect("f component");
    Ok((Field::vector(&grid, comps)?, Field::scalar(&grid, fdot)?))
}

/// Metric velocity implied by split velocities: `√−1(∂̄β̇ + ∂β̇̄) + ∂∂̄ḟ`.
pub fn split_metric_velocity(beta_dot: &Field, f_dot: &Field) -> Result<Field> {
    oneform_to_metric_delta(beta_dot).add(&complex_hessian(f_dot))
}

/// `dt = safety · h_min² / (n · sup λ_max(g⁻¹))`.
pub fn cfl_dt(g: &MetricField, ctrl: &StepControl) -> f64 {
    let lat = g.grid().lattice();
    let h = lat.min_spacing();
    let inv_max = 1.0 / g.min_eigenvalue();
    ctrl.cfl_safety * h * h / (lat.n() as f64 * inv_max)
}

/// Right-hand side of the active formulation, dealiased if requested.
pub fn evaluate_rhs(state: &FlowState, ctrl: &StepControl) -> Result<Vars> {
    let mut rhs = match state.formulation {
        Formulation::Metric => pcf_metric_rhs(&state.g, state.normalized)?.into_comps(),
        Formulation::Oneform => oneform_velocity(&state.g).into_comps(),
        Formulation::Split => {
            let (b, f) = split_system_rhs(
                state.beta.as_ref().expect("split state"),
                state.f.as_ref().expect("split state"),
                state,
            )?;
            let mut v = b.into_comps();
            v.push(f.into_comps().pop().expect("scalar"));
            v
        }
    };
    if ctrl.dealias && state.formulation == Formulation::Metric {
        state.grid().dealias_hermitian(&mut rhs, state.n());
    } else if ctrl.dealias {
        let grid = state.grid();
        for c in rhs.iter_mut() {
            grid.dealias_values(c);
        }
    }
    if state.formulation == Formulation::Split {
        if let Some(f) = rhs.last_mut() {
            for v in f.iter_mut() {
                v.im = 0.0;
            }
        }
    }
    Ok(rhs)
}

fn combine(y: &Vars, terms: &[(f64, &Vars)]) -> Vars {
    y.iter()
        .enumerate()
        .map(|(c, yc)| {
            let mut out = yc.clone();
            for (w, k) in terms {
                for (o, v) in out.iter_mut().zip(&k[c]) {
                    *o += *w * v;
                }
            }
            out
        })
        .collect()
}

/// One step of size `dt` with the configured integrator.
pub fn step(state: &FlowState, ctrl: &StepControl, dt: f64) -> Result<FlowState> {
    if state.normalized && state.formulation != Formulation::Metric {
        return Err(PcfError::WrongMode("normalized flow runs in metric mode only".into()));
    }
    let y = state.vars();
    let t = state.t;
    match ctrl.integrator {
        Integrator::Euler => {
            let k1 = evaluate_rhs(state, ctrl)?;
            state.from_vars(combine(&y, &[(dt, &k1)]), t + dt)
        }
        Integrator::Rk4 => {
            let k1 = evaluate_rhs(state, ctrl)?;
            let s2 = state.from_vars(combine(&y, &[(0.5 * dt, &k1)]), t + 0.5 * dt)?;
            let k2 = evaluate_rhs(&s2, ctrl)?;
            let s3 = state.from_vars(combine(&y, &[(0.5 * dt, &k2)]), t + 0.5 * dt)?;
            let k3 = evaluate_rhs(&s3, ctrl)?;
            let s4 = state.from_vars(combine(&y, &[(dt, &k3)]), t + dt)?;
            let k4 = evaluate_rhs(&s4, ctrl)?;
            let w = dt / 6.0;
            state.from_vars(
                combine(&y, &[(w, &k1), (2.0 * w, &k2), (2.0 * w, &k3), (w, &k4)]),
                t + dt,
            )
        }
    }
}

/// The step size `ctrl` prescribes at `state`.
pub fn step_size(state: &FlowState, ctrl: &StepControl) -> Result<f64> {
    let bound = cfl_dt(&state.g, ctrl);
    match ctrl.dt {
        None => Ok(bound),
        Some(dt) if dt > 0.0 && dt.is_finite() => Ok(dt),
        Some(dt) => Err(PcfError::Config(vec![format!("dt must be positive, got {dt}")])),
    }
}

/// One step at the size prescribed by `ctrl` (with the RK4 integrator unless
/// `ctrl` says otherwise).
pub fn rk4_step(state: &FlowState, ctrl: &StepControl) -> Result<FlowState> {
    let dt = step_size(state, ctrl)?;
    step(state, ctrl, dt)
}

/// Result of [`random_pluriclosed_perturbation`].
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub alpha: Field,
    /// Amplitude actually used after any halving.
    pub amplitude: f64,
    pub halvings: u32,
}

/// Seeded few-mode `(1,0)`-form.
///
/// Complex Gaussian coefficients fill every nonzero mode whose integer index
/// vector has Euclidean length at most `max_mode`, independently per
/// component. The form is then scaled so that `sup |g_α − ĝ| = amplitude`
/// (largest entry over points and components). If the induced metric is not
/// above the positivity floor the amplitude is halved until it is.
pub fn random_pluriclosed_perturbation(
    grid: &Arc<Grid>,
    background: &Background,
    seed: u64,
    amplitude: f64,
    max_mode: f64,
) -> Result<Perturbation> {
    let n = grid.n();
    let lat = grid.lattice();
    let len = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mi = vec![0; lat.real_dim()];
    let mut hats = vec![vec![ZERO; len]; n];
    for k in 0..len {
        lat.unravel(k, &mut mi);
        let r2: i64 = mi
            .iter()
            .zip(lat.sizes())
            .map(|(&j, &s)| crate::lattice::ComplexLattice::signed_mode(j, s).pow(2))
            .sum();
        if r2 == 0 || (r2 as f64) > max_mode * max_mode {
            continue;
        }
        for h in hats.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            h[k] = C64::new(re, im);
        }
    }
    let comps: Vec<Vec<C64>> = hats.into_iter().map(|h| grid.inverse(h)).collect();
    let raw = Field::vector(grid, comps)?;
    let size = oneform_to_metric_delta(&raw).sup_abs();
    if amplitude == 0.0 || size == 0.0 {
        return Ok(Perturbation {
            alpha: Field::zeros(grid, vec![n], "i"),
            amplitude: 0.0,
            halvings: 0,
        });
    }
    let mut amp = amplitude;
    let mut halvings = 0;
    loop {
        let alpha = raw.scale(C64::new(amp / size, 0.0));
        if metric_of_alpha(&alpha, background).is_ok() {
            return Ok(Perturbation {
                alpha,
                amplitude: amp,
                halvings,
            });
        }
        amp *= 0.5;
        halvings += 1;
    }
}

/// Flat constant metric as a metric-mode state.
pub fn flat_state(grid: &Arc<Grid>, background: Background, formulation: Formulation) -> Result<FlowState> {
    let n = grid.n();
    match formulation {
        Formulation::Metric => FlowState::metric(Field::constant_matrix(grid, &background.ghat), background, false),
        Formulation::Oneform => FlowState::oneform(Field::zeros(grid, vec![n], "i"), background),
        Formulation::Split => FlowState::split(
            Field::zeros(grid, vec![n], "i"),
            Field::zeros(grid, vec![], ""),
            background,
        ),
    }
}
