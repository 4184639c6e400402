//! The Born-Infeld matrix `W`, heat-operator residuals of the evolution
//! identities, and monotone-quantity monitors.
//!
//! Heat residuals are formed from three states `(prev, mid, next)` at equal
//! spacing `Δ`: `(F(next) − F(prev)) / 2Δ − Δ_g F(mid) − RHS(mid)`, where
//! `Δ_g = g^{q̄ p} ∂_p ∂_q̄` acts componentwise.

use crate::error::{PcfError, Result};
use crate::field::{inf, mean, pointwise, pointwise_real, sup, Field, ZERO};
use crate::flow::{FlowState, Formulation};
use crate::hermitian::{oneform_potential, pluriclosed_residual, upsilon_fk, Geometry, Local, MetricField};
use crate::linalg::Mat;
use crate::spectral::Kind;
use crate::tensor::{self, Slot};
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::fmt;

const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const REPORT_SCHEMA: u32 = 1;

/// `W = [[g + β g⁻ᵀ β†, β g⁻ᵀ], [g⁻ᵀ β†, g⁻ᵀ]]`, where `g⁻ᵀ` holds
/// `g^{l̄ k}` at `(k, l)`.
pub fn born_infeld_at(g: &Mat, beta: &Mat) -> Option<Mat> {
    let n = g.order();
    let gt = g.inverse()?.transpose();
    let b = beta.mul(&gt);
    let a = g.add(&b.mul(&beta.adjoint()));
    let c = gt.mul(&beta.adjoint());
    Some(Mat::from_fn(2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => b[(i, j - n)],
        (false, true) => c[(i - n, j)],
        (false, false) => gt[(i - n, j - n)],
    }))
}

/// `φ_{ij} = ∂_i α_j − ∂_j α_i`.
pub fn torsion_potential(alpha: &Field) -> Result<Field> {
    let grid = alpha.grid();
    let n = grid.n();
    let hats: Vec<Vec<C64>> = alpha.comps().iter().map(|c| grid.forward(c)).collect();
    let mut d = Vec::with_capacity(n * n);
    for i in 0..n {
        for h in &hats {
            d.push(grid.derive_hat(h, i, Kind::Holo));
        }
    }
    let comps = (0..n * n)
        .map(|c| {
            let (i, j) = (c / n, c % n);
            d[i * n + j].iter().zip(&d[j * n + i]).map(|(a, b)| a - b).collect()
        })
        .collect();
    Field::from_comps(grid, vec![n, n], "ij", comps)
}

/// `β = √−1 ∂α`.
pub fn beta_from_alpha(alpha: &Field) -> Result<Field> {
    Ok(torsion_potential(alpha)?.scale(I))
}

/// The one-form of a state: carried in one-form and split modes, recovered
/// from `g − ĝ` in metric mode.
pub fn potential_of(state: &FlowState) -> Result<Field> {
    match &state.alpha {
        Some(a) => Ok(a.clone()),
        None => oneform_potential(state.g.field(), &state.ghat_field()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompatibilityReport {
    /// `sup |∂_k̄ β_{ij} − T_{i j k̄}|`.
    pub sup_error: f64,
    pub sup_torsion: f64,
}

#[derive(Debug, Clone)]
pub struct BornInfeldField {
    pub w: Field,
    pub det_error: f64,
    pub hermitian_defect: f64,
    pub min_eigenvalue: f64,
    pub compatibility: Option<CompatibilityReport>,
}

fn antisymmetry_defect(beta: &Field) -> f64 {
    let n = beta.shape()[0];
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for (a, b) in beta.comp(i * n + j).iter().zip(beta.comp(j * n + i)) {
                worst = worst.max((a + b).norm());
            }
        }
    }
    worst
}

pub fn born_infeld_w(g: &MetricField, beta: &Field) -> Result<BornInfeldField> {
    let n = g.n();
    if beta.shape() != [n, n] {
        return Err(PcfError::Shape(format!("beta must be {n}x{n}, got {:?}", beta.shape())));
    }
    let defect = antisymmetry_defect(beta);
    if defect > 1e-10 * (1.0 + beta.sup_abs()) {
        return Err(PcfError::Shape(format!(
            "beta is not antisymmetric (defect {defect:.3e})"
        )));
    }
    let m = 2 * n;
    let w = pointwise(g.grid(), vec![m, m], "W", |p, out| {
        let wm = born_infeld_at(&g.at(p), &beta.mat_at(p)).expect("g validated positive");
        out.copy_from_slice(&wm.to_rows());
    });
    let stats = pointwise(g.grid(), vec![3], "", |p, out| {
        let wm = w.mat_at(p);
        out[0] = C64::new((wm.det() - 1.0).norm(), 0.0);
        out[1] = C64::new(wm.hermitian_defect(), 0.0);
        out[2] = C64::new(wm.min_max_eigenvalues().0, 0.0);
    });
    let col = |c: usize| stats.comp(c).iter().map(|v| v.re).collect::<Vec<_>>();
    Ok(BornInfeldField {
        det_error: sup(&col(0)),
        hermitian_defect: sup(&col(1)),
        min_eigenvalue: inf(&col(2)),
        w,
        compatibility: None,
    })
}

/// `W` from a state, with the compatibility of `∂̄β` against the torsion
/// attached.
pub fn born_infeld_of(state: &FlowState) -> Result<BornInfeldField> {
    let beta = beta_from_alpha(&potential_of(state)?)?;
    let mut w = born_infeld_w(&state.g, &beta)?;
    w.compatibility = Some(compatibility(&state.g, &beta)?);
    Ok(w)
}

pub fn compatibility(g: &MetricField, beta: &Field) -> Result<CompatibilityReport> {
    let grid = g.grid();
    let n = g.n();
    let geo = Geometry::new(g, false);
    let db = antiholo_derivs(beta)?;
    let errs = pointwise(grid, vec![2], "", |x, out| {
        let t = geo.local(x).torsion();
        let (mut e, mut s): (f64, f64) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    e = e.max((db[(i * n + j) * n + k][x] - t[i][j][k]).norm());
                    s = s.max(t[i][j][k].norm());
                }
            }
        }
        out[0] = C64::new(e, 0.0);
        out[1] = C64::new(s, 0.0);
    });
    let col = |c: usize| errs.comp(c).iter().map(|v| v.re).collect::<Vec<_>>();
    Ok(CompatibilityReport {
        sup_error: sup(&col(0)),
        sup_torsion: sup(&col(1)),
    })
}

/// `g^{q̄ p} ∂_p ∂_q̄` applied to every component.
pub fn metric_laplacian(g: &MetricField, f: &Field) -> Field {
    let grid = g.grid();
    let n = g.n();
    let second: Vec<Vec<Vec<C64>>> = f
        .comps()
        .iter()
        .map(|c| {
            let hat = grid.forward(c);
            (0..n * n).map(|pq| grid.derive2_hat(&hat, pq / n, pq % n)).collect()
        })
        .collect();
    pointwise(grid, f.shape().to_vec(), f.sig(), |x, out| {
        let gi = g.inv_at(x);
        for (o, d) in out.iter_mut().zip(&second) {
            let mut s = ZERO;
            for p in 0..n {
                for q in 0..n {
                    s += gi[(q, p)] * d[p * n + q][x];
                }
            }
            *o = s;
        }
    })
}

/// A quantity `F` with a claimed heat equation `(∂_t − Δ_g) F = RHS`.
pub trait HeatQuantity {
    fn name(&self) -> &'static str;
    fn value(&self, s: &FlowState) -> Result<Field>;
    fn rhs(&self, s: &FlowState) -> Result<Field>;
    fn laplacian(&self, s: &FlowState, value: &Field) -> Result<Field> {
        Ok(metric_laplacian(&s.g, value))
    }
}

/// Common spacing of three states.
pub fn triple_spacing(states: &[FlowState]) -> Result<f64> {
    if states.len() != 3 {
        return Err(PcfError::MissingSnapshots(format!(
            "need 3 states, got {}",
            states.len()
        )));
    }
    let d1 = states[1].t - states[0].t;
    let d2 = states[2].t - states[1].t;
    if d1 <= 0.0 || (d1 - d2).abs() > 1e-9 * d1.max(d2) {
        return Err(PcfError::DtMismatch(format!("spacings {d1:e} and {d2:e}")));
    }
    Ok(0.5 * (d1 + d2))
}

pub fn heat_residual(states: &[FlowState], q: &dyn HeatQuantity) -> Result<Field> {
    let dt = triple_spacing(states)?;
    let before = q.value(&states[0])?;
    let mid = q.value(&states[1])?;
    let after = q.value(&states[2])?;
    let lap = q.laplacian(&states[1], &mid)?;
    let rhs = q.rhs(&states[1])?;
    let c = 0.5 / dt;
    let mut out = after.sub(&before)?.scale(C64::new(c, 0.0));
    for ((o, l), r) in out.comps_mut().iter_mut().zip(lap.comps()).zip(rhs.comps()) {
        for ((a, b), d) in o.iter_mut().zip(l).zip(r) {
            *a -= b + d;
        }
    }
    Ok(out)
}

fn real_scalar(s: &FlowState, v: Vec<f64>) -> Field {
    Field::scalar(s.grid(), v.into_iter().map(|x| C64::new(x, 0.0)).collect()).expect("grid sized")
}

/// `log(det g / det h)`, heat RHS `|T|²`.
pub struct VolumeForm;

impl HeatQuantity for VolumeForm {
    fn name(&self) -> &'static str {
        "volume_form"
    }

    fn value(&self, s: &FlowState) -> Result<Field> {
        let lh = s.background.h.det().re.ln();
        Ok(real_scalar(s, s.g.log_det().into_iter().map(|v| v - lh).collect()))
    }

    fn rhs(&self, s: &FlowState) -> Result<Field> {
        let geo = Geometry::new(&s.g, false);
        Ok(real_scalar(s, geo.real_field(|l| l.torsion_norm_sq())))
    }
}

fn trace_with(gi: &Mat, h: &Mat) -> f64 {
    let n = gi.order();
    let mut s = ZERO;
    for i in 0..n {
        for j in 0..n {
            s += gi[(j, i)] * h[(i, j)];
        }
    }
    s.re
}

/// `⟨h, Q⟩ = g^{j̄ k} g^{l̄ i} h_{i j̄} Q_{k l̄}`.
fn pair_h_q(gi: &Mat, h: &Mat, q: &Mat) -> f64 {
    let n = gi.order();
    let mut s = ZERO;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    s += gi[(j, k)] * gi[(l, i)] * h[(i, j)] * q[(k, l)];
                }
            }
        }
    }
    s.re
}

/// `tr_g h`, heat RHS `−|Υ(g, h)|² − ⟨h, Q⟩` (flat `h`).
pub struct TraceH;

impl HeatQuantity for TraceH {
    fn name(&self) -> &'static str {
        "trace_h"
    }

    fn value(&self, s: &FlowState) -> Result<Field> {
        let h = s.background.h;
        let v = pointwise_real(s.grid(), |x| trace_with(&s.g.inv_at(x), &h));
        Ok(real_scalar(s, v))
    }

    fn rhs(&self, s: &FlowState) -> Result<Field> {
        let h = s.background.h;
        let n = s.n();
        let geo = Geometry::new(&s.g, false);
        let v = geo.real_field(|l| {
            let ups = crate::hermitian::flatten3(n, &l.gamma());
            let u2 = tensor::norm_sq(n, &[Slot::L, Slot::L, Slot::U], &ups, &l.gi, &h);
            -u2 - pair_h_q(&l.gi, &h, &l.torsion_q())
        });
        Ok(real_scalar(s, v))
    }
}

fn antiholo_derivs(f: &Field) -> Result<Vec<Vec<C64>>> {
    let grid = f.grid();
    let n = grid.n();
    let mut out = Vec::with_capacity(f.ncomp() * n);
    for c in f.comps() {
        let hat = grid.forward(c);
        for q in 0..n {
            out.push(grid.derive_hat(&hat, q, Kind::Antiholo));
        }
    }
    Ok(out)
}

/// `−g^{q̄ p} g^{s̄ r} (∂_p g_{i s̄} ∂_q̄ φ_{r j} + ∂_p g_{j s̄} ∂_q̄ φ_{i r})`.
fn two_form_rhs(s: &FlowState, phi: &Field) -> Result<Field> {
    let n = s.n();
    let geo = Geometry::new(&s.g, false);
    let dphi = antiholo_derivs(phi)?;
    Ok(pointwise(s.grid(), vec![n, n], "ij", |x, out| {
        let l = geo.local(x);
        let db = |a: usize, b: usize, q: usize| dphi[(a * n + b) * n + q][x];
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for p in 0..n {
                    for q in 0..n {
                        for r in 0..n {
                            for ss in 0..n {
                                let w = l.gi[(q, p)] * l.gi[(ss, r)];
                                acc += w * (l.dg[p][i][ss] * db(r, j, q) + l.dg[p][j][ss] * db(i, r, q));
                            }
                        }
                    }
                }
                out[i * n + j] = -acc;
            }
        }
    }))
}

/// `φ = ∂α`; the Chern Laplacian on `(2,0)`-forms annihilates its heat
/// operator, written here with the coordinate Laplacian.
pub struct TorsionPotential;

impl HeatQuantity for TorsionPotential {
    fn name(&self) -> &'static str {
        "torsion_potential"
    }

    fn value(&self, s: &FlowState) -> Result<Field> {
        torsion_potential(&potential_of(s)?)
    }

    fn rhs(&self, s: &FlowState) -> Result<Field> {
        two_form_rhs(s, &self.value(s)?)
    }
}

fn phi_at(phi: &Field, x: usize) -> Vec<C64> {
    phi.comps().iter().map(|c| c[x]).collect()
}

/// `Q_{a b̄} g^{b̄ i} g^{k̄ a} g^{l̄ j} φ_{ij} conj(φ_{kl})`.
fn pair_q_phi(l: &Local, phi: &[C64]) -> f64 {
    let n = l.n;
    let q = l.torsion_q();
    let gi = &l.gi;
    let mut s = ZERO;
    for a in 0..n {
        for b in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for ll in 0..n {
                            s += q[(a, b)]
                                * gi[(b, i)]
                                * gi[(k, a)]
                                * gi[(ll, j)]
                                * phi[i * n + j]
                                * phi[k * n + ll].conj();
                        }
                    }
                }
            }
        }
    }
    s.re
}

/// `|φ|²`, heat RHS `−|∇φ|² − |T|² − 2⟨Q, φ ⊗ φ̄⟩`.
pub struct PhiNorm;

impl HeatQuantity for PhiNorm {
    fn name(&self) -> &'static str {
        "phi_norm"
    }

    fn value(&self, s: &FlowState) -> Result<Field> {
        let phi = torsion_potential(&potential_of(s)?)?;
        let n = s.n();
        let v = pointwise_real(s.grid(), |x| {
            tensor::norm_sq(n, &[Slot::L, Slot::L], &phi_at(&phi, x), &s.g.inv_at(x), &s.g.at(x))
        });
        Ok(real_scalar(s, v))
    }

    fn rhs(&self, s: &FlowState) -> Result<Field> {
        let phi = torsion_potential(&potential_of(s)?)?;
        let n = s.n();
        let grid = s.grid();
        let geo = Geometry::new(&s.g, false);
        let mut dphi: Vec<Vec<Vec<C64>>> = vec![Vec::with_capacity(n * n); n];
        for c in phi.comps() {
            let hat = grid.forward(c);
            for (p, d) in dphi.iter_mut().enumerate() {
                d.push(grid.derive_hat(&hat, p, Kind::Holo));
            }
        }
        let v = pointwise_real(grid, |x| {
            let l = geo.local(x);
            let ph = phi_at(&phi, x);
            let d: Vec<Vec<C64>> = dphi.iter().map(|v| v.iter().map(|c| c[x]).collect()).collect();
            let cov = tensor::covariant_holo(n, &[Slot::L, Slot::L], &ph, &d, &l.gamma());
            let grad = tensor::norm_sq(n, &[Slot::L, Slot::L, Slot::L], &cov, &l.gi, &l.g);
            -grad - l.torsion_norm_sq() - 2.0 * pair_q_phi(&l, &ph)
        });
        Ok(real_scalar(s, v))
    }
}

/// First-order form of the metric equation:
/// `g^{l̄ k} g^{b̄ a} (∂_i g_{k b̄} ∂_l̄ g_{a j̄}… )`, i.e. `Q − S + Δ_g g`
/// with the second derivatives cancelled.
fn metric_first_order(l: &Local) -> Mat {
    let n = l.n;
    let (gi, dg) = (&l.gi, &l.dg);
    Mat::from_fn(n, |i, j| {
        let mut s = ZERO;
        for k in 0..n {
            for ll in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let w = gi[(ll, k)] * gi[(b, a)];
                        s += w
                            * (dg[i][k][b] * dg[j][ll][a].conj()
                                - dg[i][k][b] * dg[ll][j][a].conj()
                                - dg[k][i][b] * dg[j][ll][a].conj());
                    }
                }
            }
        }
        s
    })
}

/// The coupled `(g, β)` system: both blocks against their first-order
/// right-hand sides.
pub struct GaugeFixedSystem;

impl HeatQuantity for GaugeFixedSystem {
    fn name(&self) -> &'static str {
        "gauge_fixed_system"
    }

    fn value(&self, s: &FlowState) -> Result<Field> {
        let n = s.n();
        let beta = beta_from_alpha(&potential_of(s)?)?;
        let mut comps = s.g.field().comps().to_vec();
        comps.extend_from_slice(beta.comps());
        Field::from_comps(s.grid(), vec![2, n, n], "", comps)
    }

    fn rhs(&self, s: &FlowState) -> Result<Field> {
        let n = s.n();
        let geo = Geometry::new(&s.g, false);
        let gpart = geo.matrix_field("ij̄", metric_first_order);
        let beta = beta_from_alpha(&potential_of(s)?)?;
        let bpart = two_form_rhs(s, &beta)?;
        let mut comps = gpart.into_comps();
        comps.extend(bpart.into_comps());
        Field::from_comps(s.grid(), vec![2, n, n], "", comps)
    }
}

pub fn identities() -> Vec<Box<dyn HeatQuantity>> {
    vec![
        Box::new(VolumeForm),
        Box::new(TraceH),
        Box::new(TorsionPotential),
        Box::new(PhiNorm),
        Box::new(GaugeFixedSystem),
    ]
}

/// Sup-norm residual of every identity on one triple.
pub fn identity_residuals(states: &[FlowState]) -> Result<Vec<(&'static str, f64)>> {
    identities()
        .iter()
        .map(|q| Ok((q.name(), heat_residual(states, q.as_ref())?.sup_abs())))
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SuiteTolerance {
    /// Residuals below this count as exact.
    pub exact: f64,
    /// Required shrink factor when the spacing is halved.
    pub min_ratio: f64,
}

impl Default for SuiteTolerance {
    fn default() -> Self {
        Self {
            exact: 1e-12,
            min_ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityEntry {
    pub name: String,
    pub residual: f64,
    pub refined: Option<f64>,
    pub ratio: Option<f64>,
    pub order: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub schema: u32,
    pub spacing: f64,
    pub entries: Vec<IdentityEntry>,
    pub pass: bool,
}

fn refinement(coarse: f64, fine: Option<f64>, tol: f64, min_ratio: f64) -> (Option<f64>, bool) {
    if coarse < tol && fine.is_none_or(|f| f < tol) {
        return (fine.map(|_| f64::INFINITY), true);
    }
    match fine {
        Some(f) => {
            let r = if f > 0.0 { coarse / f } else { f64::INFINITY };
            (Some(r), r >= min_ratio)
        }
        None => (None, false),
    }
}

/// Residuals of all identities at spacing `Δ` and, if given, `Δ/2`.
pub fn identity_suite(coarse: &[FlowState], fine: Option<&[FlowState]>, tol: SuiteTolerance) -> Result<IdentityReport> {
    let spacing = triple_spacing(coarse)?;
    let c = identity_residuals(coarse)?;
    let f = fine.map(identity_residuals).transpose()?;
    let entries: Vec<IdentityEntry> = c
        .iter()
        .enumerate()
        .map(|(k, &(name, r))| {
            let refined = f.as_ref().map(|v| v[k].1);
            let (ratio, pass) = refinement(r, refined, tol.exact, tol.min_ratio);
            IdentityEntry {
                name: name.to_string(),
                residual: r,
                refined,
                ratio,
                order: ratio.filter(|x| x.is_finite()).map(f64::log2),
                pass,
            }
        })
        .collect();
    Ok(IdentityReport {
        schema: REPORT_SCHEMA,
        spacing,
        pass: entries.iter().all(|e| e.pass),
        entries,
    })
}

/// Pointwise `λ_max` of `(∂_t − Δ_g) W` with the time derivative taken
/// between `before` and `after` (either may coincide with `mid`).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WHeat {
    pub lambda_max: f64,
    pub sup_w: f64,
}

impl WHeat {
    pub fn positive_part(&self) -> f64 {
        self.lambda_max.max(0.0)
    }
}

pub fn w_heat(before: &FlowState, mid: &FlowState, after: &FlowState, sign: f64) -> Result<WHeat> {
    let span = after.t - before.t;
    if span <= 0.0 {
        return Err(PcfError::DtMismatch("W heat residual needs two distinct times".into()));
    }
    let wb = born_infeld_of(before)?.w;
    let wm = born_infeld_of(mid)?.w;
    let wa = born_infeld_of(after)?.w;
    let lap = metric_laplacian(&mid.g, &wm);
    let m = wm.shape()[0];
    let out = pointwise(mid.grid(), vec![2], "", |x, out| {
        let r = Mat::from_fn(m, |i, j| {
            let c = i * m + j;
            sign * ((wa.comp(c)[x] - wb.comp(c)[x]) / span - lap.comp(c)[x])
        });
        out[0] = C64::new(r.min_max_eigenvalues().1, 0.0);
        out[1] = C64::new(wm.mat_at(x).min_max_eigenvalues().1.abs(), 0.0);
    });
    let col = |c: usize| out.comp(c).iter().map(|v| v.re).collect::<Vec<_>>();
    Ok(WHeat {
        lambda_max: sup(&col(0)),
        sup_w: sup(&col(1)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsolutionReport {
    pub schema: u32,
    pub spacing: f64,
    pub positive_part: f64,
    pub refined: Option<f64>,
    pub ratio: Option<f64>,
    pub sup_w: f64,
    /// `C` in the envelope `τ = C·Δ`, fitted as the larger of the two
    /// `positive_part / Δ`.
    pub envelope: Option<f64>,
    /// Ceiling on the finest positive part, relative to `sup ‖W‖`.
    pub relative_bound: f64,
    pub pass: bool,
}

/// Shadow of the matrix subsolution property on one or two triples.
pub fn subsolution_monitor(
    coarse: &[FlowState],
    fine: Option<&[FlowState]>,
    relative_bound: f64,
) -> Result<SubsolutionReport> {
    subsolution_signed(coarse, fine, relative_bound, 1.0)
}

/// As [`subsolution_monitor`] with `W` replaced by `sign·W`.
pub fn subsolution_signed(
    coarse: &[FlowState],
    fine: Option<&[FlowState]>,
    relative_bound: f64,
    sign: f64,
) -> Result<SubsolutionReport> {
    if coarse
        .iter()
        .chain(fine.into_iter().flatten())
        .any(|s| s.formulation == Formulation::Metric)
    {
        return Err(PcfError::WrongMode(
            "the subsolution monitor needs a one-form run".into(),
        ));
    }
    let spacing = triple_spacing(coarse)?;
    let c = w_heat(&coarse[0], &coarse[1], &coarse[2], sign)?;
    let f = match fine {
        Some(v) => {
            let h = triple_spacing(v)?;
            Some((h, w_heat(&v[0], &v[1], &v[2], sign)?))
        }
        None => None,
    };
    let cp = c.positive_part();
    let fp = f.map(|(_, w)| w.positive_part());
    let (ratio, decreasing) = refinement(cp, fp, 1e-12, 2.0);
    let finest = fp.unwrap_or(cp);
    let sup_w = f.map(|(_, w)| w.sup_w).unwrap_or(c.sup_w);
    let envelope = f.map(|(h, w)| (cp / spacing).max(w.positive_part() / h));
    Ok(SubsolutionReport {
        schema: REPORT_SCHEMA,
        spacing,
        positive_part: cp,
        refined: fp,
        ratio,
        sup_w,
        envelope,
        relative_bound,
        pass: decreasing && finest < relative_bound * sup_w,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stats {
    pub sup: f64,
    pub inf: f64,
    pub mean: f64,
}

impl Stats {
    pub fn of(v: &[f64]) -> Self {
        Self {
            sup: sup(v),
            inf: inf(v),
            mean: mean(v),
        }
    }
}

/// Extra columns of generalized Kähler runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GkColumns {
    pub sup_abs_udot: f64,
    pub inf_udot: f64,
    pub osc_u: f64,
    pub min_eig_plus: f64,
    pub min_eig_minus: f64,
    /// `inf Δ₀ u` over the grid, for the lower-bound hypothesis on `√−1∂∂̄u`.
    pub inf_laplacian_u: f64,
}

/// One sampled row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub torsion_sq: Stats,
    pub dalpha_sq: Option<Stats>,
    pub trace_h: Stats,
    pub logdet_ratio: Stats,
    pub fk: Option<Stats>,
    pub pluriclosed_residual: f64,
    pub mean_drift: f64,
    pub detw_error: Option<f64>,
    pub w_heat_pos: Option<f64>,
    pub min_eig_g: f64,
    pub gk: Option<GkColumns>,
}

impl DiagnosticsRecord {
    /// `(name, value)` in the fixed column order.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut c = vec![("t".to_string(), self.t)];
        let mut stats = |name: &str, s: &Stats| {
            c.push((format!("{name}_sup"), s.sup));
            c.push((format!("{name}_inf"), s.inf));
            c.push((format!("{name}_mean"), s.mean));
        };
        stats("torsion_sq", &self.torsion_sq);
        if let Some(s) = &self.dalpha_sq {
            stats("dalpha_sq", s);
        }
        stats("trace_h", &self.trace_h);
        stats("logdet_ratio", &self.logdet_ratio);
        if let Some(s) = &self.fk {
            stats("fk", s);
        }
        c.push(("pluriclosed_residual".into(), self.pluriclosed_residual));
        c.push(("mean_drift".into(), self.mean_drift));
        if let Some(v) = self.detw_error {
            c.push(("detw_error".into(), v));
        }
        if let Some(v) = self.w_heat_pos {
            c.push(("w_heat_lmax_pos".into(), v));
        }
        c.push(("min_eig_g".into(), self.min_eig_g));
        if let Some(g) = &self.gk {
            c.push(("sup_abs_udot".into(), g.sup_abs_udot));
            c.push(("inf_udot".into(), g.inf_udot));
            c.push(("osc_u".into(), g.osc_u));
            c.push(("min_eig_plus".into(), g.min_eig_plus));
            c.push(("min_eig_minus".into(), g.min_eig_minus));
            c.push(("inf_laplacian_u".into(), g.inf_laplacian_u));
        }
        c
    }

    pub fn is_finite(&self) -> bool {
        self.columns().iter().all(|(_, v)| v.is_finite())
    }
}

/// Which optional columns a run records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecordOptions {
    pub potential: bool,
    pub fk_order: Option<usize>,
    pub born_infeld: bool,
    pub w_heat: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            potential: true,
            fk_order: Some(1),
            born_infeld: true,
            w_heat: true,
        }
    }
}

/// Largest componentwise deviation of the lattice mean from `mean0`.
pub fn mean_drift(g: &Field, mean0: &[C64]) -> f64 {
    g.means()
        .iter()
        .zip(mean0)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

/// Metric-only columns of a record; the caller fills potential, `W` and GK
/// columns.
pub fn metric_record(
    t: f64,
    g: &MetricField,
    h: &Mat,
    mean0: &[C64],
    fk_order: Option<usize>,
) -> Result<DiagnosticsRecord> {
    let geo = Geometry::new(g, false);
    let lh = h.det().re.ln();
    let cols = pointwise(g.grid(), vec![3], "", |x, out| {
        let l = geo.local(x);
        out[0] = C64::new(l.torsion_norm_sq(), 0.0);
        out[1] = C64::new(trace_with(&l.gi, h), 0.0);
        out[2] = C64::new(l.g.det().re.ln() - lh, 0.0);
    });
    let col = |c: usize| cols.comp(c).iter().map(|v| v.re).collect::<Vec<_>>();
    let fk = match fk_order {
        Some(k) => {
            let hm = MetricField::constant(g.grid(), h)?;
            Some(Stats::of(&upsilon_fk(g, &hm, k)?.f))
        }
        None => None,
    };
    Ok(DiagnosticsRecord {
        t,
        torsion_sq: Stats::of(&col(0)),
        dalpha_sq: None,
        trace_h: Stats::of(&col(1)),
        logdet_ratio: Stats::of(&col(2)),
        fk,
        pluriclosed_residual: pluriclosed_residual(g.field()),
        mean_drift: mean_drift(g.field(), mean0),
        detw_error: None,
        w_heat_pos: None,
        min_eig_g: g.min_eigenvalue(),
        gk: None,
    })
}

/// Full record of a flow state. `neighbors` are the states used for the
/// time derivative of `W`.
pub fn flow_record(
    state: &FlowState,
    mean0: &[C64],
    opts: &RecordOptions,
    neighbors: Option<(&FlowState, &FlowState)>,
) -> Result<DiagnosticsRecord> {
    let mut r = metric_record(state.t, &state.g, &state.background.h, mean0, opts.fk_order)?;
    if opts.potential {
        r.dalpha_sq = Some(Stats::of(&PhiNorm.value(state)?.real_values()));
    }
    if opts.born_infeld {
        r.detw_error = Some(born_infeld_of(state)?.det_error);
    }
    if opts.w_heat {
        r.w_heat_pos = Some(match neighbors {
            Some((b, a)) if a.t > b.t => w_heat(b, state, a, 1.0)?.positive_part(),
            _ => 0.0,
        });
    }
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorVerdict {
    pub name: String,
    pub worst_violation: f64,
    pub at_t: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotoneReport {
    pub schema: u32,
    pub monitors: Vec<MonitorVerdict>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonotoneTolerance {
    /// Per-step violation relative to `1 + |F|`.
    pub relative: f64,
    /// Absolute bound on the drift of the componentwise mean of `g`.
    pub mean_drift: f64,
}

impl Default for MonotoneTolerance {
    fn default() -> Self {
        Self {
            relative: 1e-10,
            mean_drift: 1e-10,
        }
    }
}

fn monotone(name: &str, v: &[(f64, f64)], nonincreasing: bool, tol: f64) -> MonitorVerdict {
    let mut worst = 0.0;
    let mut at = None;
    for w in v.windows(2) {
        let (a, b) = (w[0].1, w[1].1);
        let rise = if nonincreasing { b - a } else { a - b };
        let rel = rise / (1.0 + a.abs());
        if rel > worst {
            worst = rel;
            at = Some(w[1].0);
        }
    }
    MonitorVerdict {
        name: name.into(),
        worst_violation: worst,
        at_t: at,
        tolerance: tol,
        pass: worst <= tol,
    }
}

pub fn monotone_monitors(records: &[DiagnosticsRecord], tol: MonotoneTolerance) -> MonotoneReport {
    let series = |f: &dyn Fn(&DiagnosticsRecord) -> Option<f64>| -> Option<Vec<(f64, f64)>> {
        records.iter().map(|r| f(r).map(|v| (r.t, v))).collect()
    };
    let mut monitors = vec![];
    if let Some(v) = series(&|r| (r.gk.is_none()).then_some(r.trace_h.sup)) {
        monitors.push(monotone("sup_trace_h", &v, true, tol.relative));
    }
    if let Some(v) = series(&|r| (r.gk.is_none()).then_some(r.logdet_ratio.inf)) {
        monitors.push(monotone("inf_logdet_ratio", &v, false, tol.relative));
    }
    if let Some(v) = series(&|r| r.dalpha_sq.map(|s| s.sup)) {
        monitors.push(monotone("sup_dalpha_sq", &v, true, tol.relative));
    }
    let (drift, at) = records
        .iter()
        .map(|r| (r.mean_drift, r.t))
        .fold((0.0, None), |acc, (d, t)| if d > acc.0 { (d, Some(t)) } else { acc });
    monitors.push(MonitorVerdict {
        name: "mean_drift".into(),
        worst_violation: drift,
        at_t: at,
        tolerance: tol.mean_drift,
        pass: drift <= tol.mean_drift,
    });
    if let Some(v) = series(&|r| r.gk.map(|g| g.sup_abs_udot)) {
        monitors.push(monotone("sup_abs_udot", &v, true, tol.relative));
    }
    MonotoneReport {
        schema: REPORT_SCHEMA,
        pass: monitors.iter().all(|m| m.pass),
        monitors,
    }
}

impl fmt::Display for IdentityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "identity residuals (spacing {:.3e})", self.spacing)?;
        for e in &self.entries {
            write!(f, "  {:<20} {:.3e}", e.name, e.residual)?;
            if let (Some(r), Some(q)) = (e.refined, e.ratio) {
                write!(f, "  refined {r:.3e}  ratio {q:.2}")?;
            }
            writeln!(f, "  {}", if e.pass { "ok" } else { "FAIL" })?;
        }
        Ok(())
    }
}

impl fmt::Display for MonotoneReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "monotone monitors")?;
        for m in &self.monitors {
            writeln!(
                f,
                "  {:<20} worst {:.3e} (tol {:.0e})  {}",
                m.name,
                m.worst_violation,
                m.tolerance,
                if m.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for SubsolutionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W subsolution: positive part {:.3e}", self.positive_part)?;
        if let (Some(r), Some(q)) = (self.refined, self.ratio) {
            write!(f, ", refined {r:.3e}, ratio {q:.2}")?;
        }
        writeln!(
            f,
            ", sup|W| {:.3e}  {}",
            self.sup_w,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}
