//! Chern-connection geometry of Hermitian metrics on the grid.
//!
//! Index conventions: a matrix field `g` stores `g_{i j̄}` at component
//! `i·n + j`; its inverse stores `g^{j̄ i}` at `j·n + i`, so that `g · g⁻¹ = I`
//! as ordinary matrices. First derivatives `dg[p][i][j] = ∂_p g_{i j̄}`,
//! mixed second derivatives `ddg[p][q][i][j] = ∂_p ∂_q̄ g_{i j̄}`.

use crate::error::{PcfError, PositivityError, Result};
use crate::field::{pointwise, pointwise_real, Field, ZERO};
use crate::lanes::{Cx, Lanes, LANES};
use crate::linalg::Mat;
use crate::spectral::{Grid, Kind};
use crate::tensor::{self, Gamma, Slot, MAXN};
use num_complex::Complex64 as C64;
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Hermitian metric field with cached inverse and extreme eigenvalues.
#[derive(Clone, Debug)]
pub struct MetricField {
    g: Field,
    inv: Field,
    lam_min: Vec<f64>,
    lam_max: Vec<f64>,
}

impl MetricField {
    /// Symmetrize and validate `λ_min > 0` everywhere.
    pub fn new(g: Field) -> Result<Self> {
        Self::with_floor(g, 0.0, "g")
    }

    /// Symmetrize and validate `λ_min > floor` everywhere.
    pub fn with_floor(mut g: Field, floor: f64, what: &str) -> Result<Self> {
        if g.shape().len() != 2 {
            return Err(PcfError::Shape(format!(
                "metric must be a matrix field, got {:?}",
                g.shape()
            )));
        }
        g.symmetrize();
        let n = g.shape()[0];
        let grid = g.grid().clone();
        let gref = &g;
        if n <= 2 {
            return Self::small(g, floor, what);
        }
        let packed = pointwise(&grid, vec![n * n + 2], "", |p, out| {
            let m = gref.mat_at(p);
            let (lo, hi) = m.min_max_eigenvalues();
            out[0] = C64::new(lo, 0.0);
            out[1] = C64::new(hi, 0.0);
            if lo > 0.0 {
                let inv = m.inverse().expect("positive definite");
                for j in 0..n {
                    for i in 0..n {
                        out[2 + j * n + i] = inv[(j, i)];
                    }
                }
            }
        });
        let mut comps = packed.into_comps();
        let lam_min: Vec<f64> = comps[0].iter().map(|v| v.re).collect();
        let lam_max: Vec<f64> = comps[1].iter().map(|v| v.re).collect();
        let (mut worst, mut at) = (f64::INFINITY, 0);
        for (p, &l) in lam_min.iter().enumerate() {
            if !(l >= worst) {
                worst = l;
                at = p;
            }
        }
        if !(worst > floor) {
            return Err(PositivityError {
                what: what.to_string(),
                min_eigenvalue: worst,
                floor,
                point: at,
                t: None,
            }
            .into());
        }
        let inv_comps = comps.split_off(2);
        let mut inv = Field::from_comps(&grid, vec![n, n], "j̄i", inv_comps)?;
        inv.symmetrize();
        Ok(Self {
            g,
            inv,
            lam_min,
            lam_max,
        })
    }

    fn small(g: Field, floor: f64, what: &str) -> Result<Self> {
        let n = g.shape()[0];
        let len = g.grid().len();
        let mut lam_min = vec![0.0; len];
        let mut lam_max = vec![0.0; len];
        let mut inv = vec![vec![ZERO; len]; n * n];
        if n == 1 {
            for p in 0..len {
                let a = g.comp(0)[p].re;
                lam_min[p] = a;
                lam_max[p] = a;
                inv[0][p] = C64::new(1.0 / a, 0.0);
            }
        } else {
            let (c00, c01, c11) = (g.comp(0), g.comp(1), g.comp(3));
            let [i00, i01, i10, i11] = &mut inv[..] else {
                unreachable!()
            };
            for p in 0..len {
                let (a, d, b) = (c00[p].re, c11[p].re, c01[p]);
                let m = 0.5 * (a + d);
                let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
                lam_min[p] = m - r;
                lam_max[p] = m + r;
                let det = a * d - b.norm_sqr();
                i00[p] = C64::new(d / det, 0.0);
                i11[p] = C64::new(a / det, 0.0);
                i01[p] = -b / det;
                i10[p] = -b.conj() / det;
            }
        }
        let (mut worst, mut at) = (f64::INFINITY, 0);
        for (p, &l) in lam_min.iter().enumerate() {
            if !(l >= worst) {
                worst = l;
                at = p;
            }
        }
        if !(worst > floor) {
            return Err(PositivityError {
                what: what.to_string(),
                min_eigenvalue: worst,
                floor,
                point: at,
                t: None,
            }
            .into());
        }
        let inv = Field::from_comps(g.grid(), vec![n, n], "j̄i", inv)?;
        Ok(Self {
            g,
            inv,
            lam_min,
            lam_max,
        })
    }

    pub fn constant(grid: &Arc<Grid>, m: &Mat) -> Result<Self> {
        Self::new(Field::constant_matrix(grid, m))
    }

    pub fn field(&self) -> &Field {
        &self.g
    }

    pub fn into_field(self) -> Field {
        self.g
    }

    /// Inverse matrix field, component `j·n + i` = `g^{j̄ i}`.
    pub fn inverse(&self) -> &Field {
        &self.inv
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.g.grid()
    }

    pub fn n(&self) -> usize {
        self.g.shape()[0]
    }

    pub fn min_eigenvalues(&self) -> &[f64] {
        &self.lam_min
    }

    pub fn max_eigenvalues(&self) -> &[f64] {
        &self.lam_max
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::field::inf(&self.lam_min)
    }

    pub fn at(&self, p: usize) -> Mat {
        self.g.mat_at(p)
    }

    pub fn inv_at(&self, p: usize) -> Mat {
        self.inv.mat_at(p)
    }

    /// `log det g` pointwise.
    pub fn log_det(&self) -> Vec<f64> {
        pointwise_real(self.grid(), |p| self.at(p).det().re.ln())
    }
}

/// Everything pointwise geometry needs at one grid point.
#[derive(Clone)]
pub struct Local {
    pub n: usize,
    pub g: Mat,
    pub gi: Mat,
    pub dg: Gamma,
    pub ddg: [[[[C64; MAXN]; MAXN]; MAXN]; MAXN],
}

impl Local {
    pub fn gamma(&self) -> Gamma {
        tensor::christoffel(self.n, &self.gi, &self.dg)
    }

    /// `T[i][j][k] = T_{i j k̄} = ∂_i g_{j k̄} − ∂_j g_{i k̄}`.
    pub fn torsion(&self) -> Gamma {
        let n = self.n;
        let mut t = [[[ZERO; MAXN]; MAXN]; MAXN];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    t[i][j][k] = self.dg[i][j][k] - self.dg[j][i][k];
                }
            }
        }
        t
    }

    pub fn curvature_s(&self) -> Mat {
        match self.n {
            1 => self.with_arrays::<1, _>(|gi, dg, ddg| hermitian_mat(&curvature_s_arr(gi, dg, ddg))),
            2 => self.with_arrays::<2, _>(|gi, dg, ddg| hermitian_mat(&curvature_s_arr(gi, dg, ddg))),
            _ => self.with_arrays::<3, _>(|gi, dg, ddg| hermitian_mat(&curvature_s_arr(gi, dg, ddg))),
        }
    }

    pub fn torsion_q(&self) -> Mat {
        match self.n {
            1 => self.with_arrays::<1, _>(|gi, dg, _| hermitian_mat(&torsion_q_arr(gi, dg))),
            2 => self.with_arrays::<2, _>(|gi, dg, _| hermitian_mat(&torsion_q_arr(gi, dg))),
            _ => self.with_arrays::<3, _>(|gi, dg, _| hermitian_mat(&torsion_q_arr(gi, dg))),
        }
    }

    fn with_arrays<const N: usize, R>(&self, f: impl FnOnce(&Arr2<C64, N>, &Arr3<C64, N>, &Arr4<C64, N>) -> R) -> R {
        let mut gi = [[ZERO; N]; N];
        let mut dg = [[[ZERO; N]; N]; N];
        let mut ddg = [[[[ZERO; N]; N]; N]; N];
        for a in 0..N {
            for b in 0..N {
                gi[a][b] = self.gi[(a, b)];
                for c in 0..N {
                    dg[a][b][c] = self.dg[a][b][c];
                    for d in 0..N {
                        ddg[a][b][c][d] = self.ddg[a][b][c][d];
                    }
                }
            }
        }
        f(&gi, &dg, &ddg)
    }

    /// `|T|²` with full index sums.
    pub fn torsion_norm_sq(&self) -> f64 {
        let t = flatten3(self.n, &self.torsion());
        tensor::norm_sq(self.n, &[Slot::L, Slot::L, Slot::Lb], &t, &self.gi, &self.g)
    }

    /// `−S + Q`.
    pub fn pcf_rhs(&self) -> Mat {
        self.torsion_q().sub(&self.curvature_s())
    }
}

type Arr2<T, const N: usize> = [[T; N]; N];
type Arr3<T, const N: usize> = [[[T; N]; N]; N];
type Arr4<T, const N: usize> = [[[[T; N]; N]; N]; N];

/// `S_{i j̄}` from its upper triangle; `gi[r][c]` holds `g^{r̄ c}`.
#[inline(always)]
fn curvature_s_arr<T: Cx, const N: usize>(gi: &Arr2<T, N>, dg: &Arr3<T, N>, ddg: &Arr4<T, N>) -> Arr2<T, N> {
    // a[p][i][r] = g^{r̄ m} ∂_p g_{i m̄}, b[q][i][r] = g^{q̄ p} a[p][i][r]
    let mut a = [[[T::ZERO; N]; N]; N];
    for p in 0..N {
        for i in 0..N {
            for r in 0..N {
                for m in 0..N {
                    a[p][i][r] += gi[m][r] * dg[p][i][m];
                }
            }
        }
    }
    let mut b = [[[T::ZERO; N]; N]; N];
    for q in 0..N {
        for p in 0..N {
            for i in 0..N {
                for r in 0..N {
                    b[q][i][r] += gi[q][p] * a[p][i][r];
                }
            }
        }
    }
    let mut s = [[T::ZERO; N]; N];
    for i in 0..N {
        for j in i..N {
            let mut v = T::ZERO;
            for p in 0..N {
                for q in 0..N {
                    v -= gi[q][p] * ddg[p][q][i][j];
                }
            }
            for q in 0..N {
                for r in 0..N {
                    v += b[q][i][r] * dg[q][j][r].conj();
                }
            }
            s[i][j] = v;
            s[j][i] = v.conj();
        }
    }
    s
}

/// `Q_{i j̄}` from its upper triangle.
#[inline(always)]
fn torsion_q_arr<T: Cx, const N: usize>(gi: &Arr2<T, N>, dg: &Arr3<T, N>) -> Arr2<T, N> {
    let mut t = [[[T::ZERO; N]; N]; N];
    for i in 0..N {
        for k in 0..N {
            for b in 0..N {
                t[i][k][b] = dg[i][k][b] - dg[k][i][b];
            }
        }
    }
    // u[i][k][a] = g^{b̄ a} T_{i k b̄}, v[i][l][a] = g^{l̄ k} u[i][k][a]
    let mut u = [[[T::ZERO; N]; N]; N];
    for i in 0..N {
        for k in 0..N {
            for a in 0..N {
                for b in 0..N {
                    u[i][k][a] += gi[b][a] * t[i][k][b];
                }
            }
        }
    }
    let mut v = [[[T::ZERO; N]; N]; N];
    for i in 0..N {
        for l in 0..N {
            for k in 0..N {
                for a in 0..N {
                    v[i][l][a] += gi[l][k] * u[i][k][a];
                }
            }
        }
    }
    let mut q = [[T::ZERO; N]; N];
    for i in 0..N {
        for j in i..N {
            for l in 0..N {
                for a in 0..N {
                    q[i][j] += v[i][l][a] * t[j][l][a].conj();
                }
            }
            q[j][i] = q[i][j].conj();
        }
    }
    q
}

struct RhsSources<'a> {
    g: &'a [Vec<C64>],
    inv: &'a [Vec<C64>],
    dg: &'a [Vec<C64>],
    ddg: &'a [Vec<C64>],
    normalized: bool,
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn pcf_rhs_block_avx2<const N: usize>(src: &RhsSources, p0: usize, p1: usize, out: &mut [C64]) {
    pcf_rhs_block::<N>(src, p0, p1, out)
}

/// `−S + Q` (minus `g` when normalized) for points `p0..p1`, written
/// component-major into `out`.
#[inline(always)]
fn pcf_rhs_block<const N: usize>(src: &RhsSources, p0: usize, p1: usize, out: &mut [C64]) {
    let width = p1 - p0;
    let mut p = p0;
    while p < p1 {
        if p + LANES <= p1 {
            let r = pcf_rhs_at::<Lanes, N>(src, |c: &[C64]| Lanes::load(&c[p..p + LANES]));
            for i in 0..N {
                for j in 0..N {
                    for k in 0..LANES {
                        out[(i * N + j) * width + p - p0 + k] = r[i][j].get(k);
                    }
                }
            }
            p += LANES;
        } else {
            let r = pcf_rhs_at::<C64, N>(src, |c: &[C64]| c[p]);
            for i in 0..N {
                for j in 0..N {
                    out[(i * N + j) * width + p - p0] = r[i][j];
                }
            }
            p += 1;
        }
    }
}

#[inline(always)]
fn pcf_rhs_at<T: Cx, const N: usize>(src: &RhsSources, load: impl Fn(&[C64]) -> T) -> Arr2<T, N> {
    let mut gi = [[T::ZERO; N]; N];
    let mut dg = [[[T::ZERO; N]; N]; N];
    let mut ddg = [[[[T::ZERO; N]; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            gi[a][b] = load(&src.inv[a * N + b]);
            for c in 0..N {
                dg[a][b][c] = load(&src.dg[(a * N + b) * N + c]);
                for d in 0..N {
                    ddg[a][b][c][d] = load(&src.ddg[((a * N + b) * N + c) * N + d]);
                }
            }
        }
    }
    let s = curvature_s_arr(&gi, &dg, &ddg);
    let q = torsion_q_arr(&gi, &dg);
    let mut r = [[T::ZERO; N]; N];
    for i in 0..N {
        for j in i..N {
            let v = q[i][j] - s[i][j];
            let w = q[j][i] - s[j][i];
            let mut m = (v + w.conj()).scale(0.5);
            if src.normalized {
                m -= load(&src.g[i * N + j]);
            }
            r[j][i] = m.conj();
            r[i][j] = m;
        }
    }
    r
}

fn hermitian_mat<const N: usize>(m: &Arr2<C64, N>) -> Mat {
    Mat::from_fn(N, |i, j| 0.5 * (m[i][j] + m[j][i].conj()))
}

pub(crate) fn flatten3(n: usize, t: &Gamma) -> Vec<C64> {
    let mut v = Vec::with_capacity(n * n * n);
    for a in t.iter().take(n) {
        for b in a.iter().take(n) {
            v.extend_from_slice(&b[..n]);
        }
    }
    v
}

/// Spectral first (and optionally mixed second) derivatives of a metric.
pub struct Geometry<'a> {
    metric: &'a MetricField,
    dg: Vec<Vec<C64>>,
    ddg: Option<Vec<Vec<C64>>>,
}

impl<'a> Geometry<'a> {
    pub fn new(metric: &'a MetricField, second: bool) -> Self {
        let n = metric.n();
        let grid = metric.grid();
        let hats = grid.forward_hermitian(metric.field().comps(), n);
        let mut dg = Vec::with_capacity(n * n * n);
        for p in 0..n {
            for h in &hats {
                dg.push(grid.derive_hat(h, p, Kind::Holo));
            }
        }
        let ddg = second.then(|| {
            let total = n * n * n * n;
            let mut out: Vec<Vec<C64>> = vec![Vec::new(); total];
            let real: Vec<(usize, usize)> = (0..n).flat_map(|p| (0..n).map(move |i| (p, i))).collect();
            let at = |p: usize, i: usize| ((p * n + p) * n + i) * n + i;
            for pair in real.chunks(2) {
                let (p, i) = pair[0];
                let (q, j) = *pair.get(1).unwrap_or(&pair[0]);
                let (a, b) = grid.derive2_real_pair(&hats[i * n + i], p, &hats[j * n + j], q);
                out[at(p, i)] = a;
                if pair.len() == 2 {
                    out[at(q, j)] = b;
                }
            }
            for p in 0..n {
                for q in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let a = ((p * n + q) * n + i) * n + j;
                            let b = ((q * n + p) * n + j) * n + i;
                            if p == q && i == j {
                                continue;
                            }
                            out[a] = if b < a {
                                out[b].iter().map(|v: &C64| v.conj()).collect()
                            } else {
                                grid.derive2_hat(&hats[i * n + j], p, q)
                            };
                        }
                    }
                }
            }
            out
        });
        Self { metric, dg, ddg }
    }

    pub fn metric(&self) -> &MetricField {
        self.metric
    }

    pub fn n(&self) -> usize {
        self.metric.n()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.metric.grid()
    }

    /// `dg` component index `(p, i, j)`.
    pub fn dg_comps(&self) -> &[Vec<C64>] {
        &self.dg
    }

    pub fn local(&self, p: usize) -> Local {
        let n = self.n();
        let mut dg = [[[ZERO; MAXN]; MAXN]; MAXN];
        for a in 0..n {
            for i in 0..n {
                for j in 0..n {
                    dg[a][i][j] = self.dg[(a * n + i) * n + j][p];
                }
            }
        }
        let mut ddg = [[[[ZERO; MAXN]; MAXN]; MAXN]; MAXN];
        if let Some(dd) = &self.ddg {
            for a in 0..n {
                for b in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            ddg[a][b][i][j] = dd[((a * n + b) * n + i) * n + j][p];
                        }
                    }
                }
            }
        }
        Local {
            n,
            g: self.metric.at(p),
            gi: self.metric.inv_at(p),
            dg,
            ddg,
        }
    }

    /// `−S + Q` (minus `g` when `normalized`) at every point, read straight
    /// from the derivative arrays. Needs second derivatives.
    pub fn pcf_rhs_field(&self, normalized: bool) -> Field {
        match self.n() {
            1 => self.pcf_rhs_n::<1>(normalized),
            2 => self.pcf_rhs_n::<2>(normalized),
            _ => self.pcf_rhs_n::<3>(normalized),
        }
    }

    fn pcf_rhs_n<const N: usize>(&self, normalized: bool) -> Field {
        let len = self.grid().len();
        let ddg = self.ddg.as_ref().expect("second derivatives");
        let src = RhsSources {
            g: self.metric.field().comps(),
            inv: self.metric.inverse().comps(),
            dg: &self.dg,
            ddg,
            normalized,
        };
        const BLOCK: usize = 256;
        let block = |b: usize| {
            let (p0, p1) = (b * BLOCK, ((b + 1) * BLOCK).min(len));
            let mut out = vec![ZERO; N * N * (p1 - p0)];
            #[cfg(target_arch = "x86_64")]
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2.
                unsafe { pcf_rhs_block_avx2::<N>(&src, p0, p1, &mut out) };
                return out;
            }
            pcf_rhs_block::<N>(&src, p0, p1, &mut out);
            out
        };
        let nblocks = len.div_ceil(BLOCK);
        #[cfg(feature = "parallel")]
        let blocks: Vec<Vec<C64>> = {
            use rayon::prelude::*;
            (0..nblocks).into_par_iter().map(block).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let blocks: Vec<Vec<C64>> = (0..nblocks).map(block).collect();
        let mut comps = vec![Vec::with_capacity(len); N * N];
        for out in &blocks {
            let width = out.len() / (N * N);
            for (c, comp) in comps.iter_mut().enumerate() {
                comp.extend_from_slice(&out[c * width..(c + 1) * width]);
            }
        }
        Field::from_comps(self.grid(), vec![N, N], "ij̄", comps).expect("matrix shape")
    }

    pub fn has_second(&self) -> bool {
        self.ddg.is_some()
    }

    /// Apply a pointwise matrix-valued kernel.
    pub fn matrix_field(&self, sig: &'static str, f: impl Fn(&Local) -> Mat + Sync + Send) -> Field {
        let n = self.n();
        pointwise(self.grid(), vec![n, n], sig, |p, out| {
            let m = f(&self.local(p));
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = m[(i, j)];
                }
            }
        })
    }

    pub fn rank3_field(&self, sig: &'static str, f: impl Fn(&Local) -> Gamma + Sync + Send) -> Field {
        let n = self.n();
        pointwise(self.grid(), vec![n, n, n], sig, |p, out| {
            let t = f(&self.local(p));
            out.copy_from_slice(&flatten3(n, &t));
        })
    }

    pub fn real_field(&self, f: impl Fn(&Local) -> f64 + Sync + Send) -> Vec<f64> {
        pointwise_real(self.grid(), |p| f(&self.local(p)))
    }
}

/// `Γ_{ij}^k` as a rank-3 field `[i][j][k]`.
pub fn chern_connection(g: &MetricField) -> Field {
    Geometry::new(g, false).rank3_field("ij^k", |l| l.gamma())
}

/// `T_{i j k̄}`; antisymmetric in `(i, j)` by construction.
pub fn chern_torsion(g: &MetricField) -> Field {
    Geometry::new(g, false).rank3_field("ijk̄", |l| l.torsion())
}

/// `S_{i j̄} = g^{q̄ p} Ω_{p q̄ i j̄}`.
pub fn chern_curvature_s(g: &MetricField) -> Field {
    Geometry::new(g, true).matrix_field("ij̄", |l| l.curvature_s())
}

/// `Q_{i j̄} = g^{l̄ k} g^{n̄ m} T_{i k n̄} T̄_{j̄ l̄ m}`.
pub fn torsion_q(g: &MetricField) -> Field {
    Geometry::new(g, false).matrix_field("ij̄", |l| l.torsion_q())
}

/// `|T|²` pointwise.
pub fn torsion_norm_sq(g: &MetricField) -> Vec<f64> {
    Geometry::new(g, false).real_field(|l| l.torsion_norm_sq())
}

/// Mixed Hessian `∂_i ∂_j̄ f` of a scalar field.
pub fn complex_hessian(f: &Field) -> Field {
    let grid = f.grid();
    let n = grid.n();
    let hat = grid.forward(f.values());
    let mut comps = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            comps.push(grid.derive2_hat(&hat, i, j));
        }
    }
    Field::matrix(grid, comps).expect("n×n components")
}

/// Coefficients of the Chern-Ricci form, `−∂_i ∂_j̄ log det h`.
pub fn chern_ricci_form(h: &MetricField) -> Field {
    let grid = h.grid();
    let ld = Field::scalar_real(grid, &h.log_det()).expect("grid sized");
    let mut rho = complex_hessian(&ld).scale(C64::new(-1.0, 0.0));
    rho.symmetrize();
    rho
}

/// `ĝ_{i j̄} + √−1 (∂_j̄ α_i − conj(∂_ī α_j))`. With `validate = Some(floor)`
/// the result must have `λ_min > floor` everywhere.
pub fn metric_from_oneform(ghat: &Field, alpha: &Field, validate: Option<f64>) -> Result<Field> {
    let grid = alpha.grid();
    let n = grid.n();
    let mut g = ghat.add(&oneform_to_metric_delta(alpha))?;
    g.symmetrize();
    if let Some(floor) = validate {
        MetricField::with_floor(g.clone(), floor, "g_alpha")?;
    }
    debug_assert_eq!(g.shape(), &[n, n]);
    Ok(g)
}

/// The linear part `α ↦ √−1 (∂̄α + ∂ᾱ)` in coefficients.
pub fn oneform_to_metric_delta(alpha: &Field) -> Field {
    let grid = alpha.grid();
    let n = grid.n();
    let hats: Vec<Vec<C64>> = alpha.comps().iter().map(|c| grid.forward(c)).collect();
    // F[i][j] = ∂_j̄ α_i
    let mut f: Vec<Vec<C64>> = Vec::with_capacity(n * n);
    for h in &hats {
        for j in 0..n {
            f.push(grid.derive_hat(h, j, Kind::Antiholo));
        }
    }
    let mut comps = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (&f[i * n + j], &f[j * n + i]);
            comps.push(a.iter().zip(b).map(|(x, y)| I * (x - y.conj())).collect());
        }
    }
    Field::matrix(grid, comps).expect("n×n components")
}

/// Recover a `(1,0)`-form `α` with `ω = ω̂ + √−1(∂̄α + ∂ᾱ)`.
///
/// Solved per Fourier pair `{k, −k}` as the minimal-norm solution of the
/// linear system for `(α̂(k), conj α̂(−k))`; that fixes the gauge.
pub fn oneform_potential(omega: &Field, omega_hat: &Field) -> Result<Field> {
    let grid = omega.grid().clone();
    let n = grid.n();
    let len = grid.len();
    let diff = omega.sub(omega_hat)?;
    let scale = 1.0 + omega.sup_abs();
    let mean_err = diff.means().iter().map(|m| m.norm()).fold(0.0, f64::max);
    if mean_err > 1e-10 * scale {
        return Err(PcfError::MeanMismatch(mean_err));
    }
    let dhat: Vec<Vec<C64>> = diff.comps().iter().map(|c| grid.forward(c)).collect();
    let mut ahat = vec![vec![ZERO; len]; n];
    let mut done = vec![false; len];
    for k in 0..len {
        if done[k] {
            continue;
        }
        let mk = grid.mirror(k);
        done[k] = true;
        done[mk] = true;
        if grid.is_self_conjugate(k) {
            continue;
        }
        let sig: Vec<C64> = (0..n).map(|i| grid.symbol(i, Kind::Holo)[k]).collect();
        let sigb: Vec<C64> = (0..n).map(|i| grid.symbol(i, Kind::Antiholo)[k]).collect();
        let snorm: f64 = sig.iter().chain(&sigb).map(|v| v.norm_sqr()).sum();
        if snorm == 0.0 {
            continue;
        }
        // Unknowns x = (a_0..a_{n-1}, b_0..b_{n-1}); rows (i, j) of
        // a σ̄ᵀ − σ bᵀ = −√−1 D̂(k).
        let m2 = 2 * n;
        let mut ata = Mat::zeros(m2);
        let mut atm = vec![ZERO; m2];
        let col = |c: usize, i: usize, j: usize| -> C64 {
            if c < n {
                if i == c {
                    sigb[j]
                } else {
                    ZERO
                }
            } else if j == c - n {
                -sig[i]
            } else {
                ZERO
            }
        };
        for i in 0..n {
            for j in 0..n {
                let rhs = -I * dhat[i * n + j][k];
                for c in 0..m2 {
                    let acj = col(c, i, j);
                    if acj == ZERO {
                        continue;
                    }
                    atm[c] += acj.conj() * rhs;
                    for d in 0..m2 {
                        ata[(c, d)] += acj.conj() * col(d, i, j);
                    }
                }
            }
        }
        let kern: Vec<C64> = sig.iter().chain(&sigb).map(|v| v / snorm.sqrt()).collect();
        for c in 0..m2 {
            for d in 0..m2 {
                ata[(c, d)] += kern[c] * kern[d].conj();
            }
        }
        let x = ata.solve(&atm).ok_or_else(|| PcfError::NotPluriclosed(f64::INFINITY))?;
        for i in 0..n {
            ahat[i][k] = x[i];
            ahat[i][mk] = x[n + i].conj();
        }
    }
    let comps: Vec<Vec<C64>> = ahat.into_iter().map(|h| grid.inverse(h)).collect();
    let alpha = Field::vector(&grid, comps)?;
    let resid = oneform_to_metric_delta(&alpha).sup_distance(&diff)?;
    if resid > 1e-8 * scale {
        return Err(PcfError::NotPluriclosed(resid));
    }
    Ok(alpha)
}

/// Sup over the grid of all components of `∂∂̄ω`.
pub fn pluriclosed_residual(g: &Field) -> f64 {
    let grid = g.grid();
    let n = grid.n();
    if n < 2 {
        return 0.0;
    }
    let hats: Vec<Vec<C64>> = g.comps().iter().map(|c| grid.forward(c)).collect();
    let s = |i: usize| grid.symbol(i, Kind::Holo);
    let sb = |i: usize| grid.symbol(i, Kind::Antiholo);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in i + 1..n {
            for j in 0..n {
                for l in j + 1..n {
                    let r: Vec<C64> = (0..grid.len())
                        .map(|x| {
                            s(k)[x] * sb(l)[x] * hats[i * n + j][x]
                                - s(i)[x] * sb(l)[x] * hats[k * n + j][x]
                                - s(k)[x] * sb(j)[x] * hats[i * n + l][x]
                                + s(i)[x] * sb(j)[x] * hats[k * n + l][x]
                        })
                        .collect();
                    let v = grid.inverse(r);
                    worst = v.iter().map(|z| z.norm()).fold(worst, f64::max);
                }
            }
        }
    }
    worst
}

/// Covariant derivatives `(∇T, ∇̄T)` of a slot-typed tensor field, with the
/// new index prepended.
pub fn covariant_derivatives(
    grid: &Arc<Grid>,
    slots: &[Slot],
    t: &[Vec<C64>],
    gamma: &Field,
) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
    let n = grid.n();
    let hats: Vec<Vec<C64>> = t.iter().map(|c| grid.forward(c)).collect();
    let dh: Vec<Vec<Vec<C64>>> = (0..n)
        .map(|p| hats.iter().map(|h| grid.derive_hat(h, p, Kind::Holo)).collect())
        .collect();
    let db: Vec<Vec<Vec<C64>>> = (0..n)
        .map(|p| hats.iter().map(|h| grid.derive_hat(h, p, Kind::Antiholo)).collect())
        .collect();
    let r = t.len();
    let out = pointwise(grid, vec![2 * n * r], "", |x, out| {
        let gam = gamma_at(gamma, n, x);
        let tv: Vec<C64> = t.iter().map(|c| c[x]).collect();
        let d: Vec<Vec<C64>> = dh.iter().map(|v| v.iter().map(|c| c[x]).collect()).collect();
        let b: Vec<Vec<C64>> = db.iter().map(|v| v.iter().map(|c| c[x]).collect()).collect();
        let h = tensor::covariant_holo(n, slots, &tv, &d, &gam);
        let a = tensor::covariant_antiholo(n, slots, &tv, &b, &gam);
        out[..n * r].copy_from_slice(&h);
        out[n * r..].copy_from_slice(&a);
    });
    let mut comps = out.into_comps();
    let anti = comps.split_off(n * r);
    (comps, anti)
}

pub(crate) fn gamma_at(gamma: &Field, n: usize, x: usize) -> Gamma {
    let mut g = [[[ZERO; MAXN]; MAXN]; MAXN];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                g[i][j][k] = gamma.comp((i * n + j) * n + k)[x];
            }
        }
    }
    g
}

/// Pointwise `f_k` together with the sup of each `|∇ʲΥ|²`.
#[derive(Debug, Clone)]
pub struct UpsilonFk {
    pub k: usize,
    pub f: Vec<f64>,
    pub sup_f: f64,
    pub sup_terms: Vec<f64>,
}

fn is_constant(m: &MetricField) -> bool {
    let first = m.at(0);
    (0..m.grid().len()).all(|p| m.at(p).sub(&first).max_abs() <= 1e-14 * (1.0 + first.max_abs()))
}

/// `f_k = Σ_{j ≤ k} |∇ʲ Υ(g, h)|^{2/(1+j)}` for flat `h`, `k ≤ 2`.
pub fn upsilon_fk(g: &MetricField, h: &MetricField, k: usize) -> Result<UpsilonFk> {
    if k > 2 {
        return Err(PcfError::Unsupported(format!("f_k for k = {k} (at most 2)")));
    }
    if !is_constant(h) {
        return Err(PcfError::Unsupported("f_k with a non-flat reference metric".into()));
    }
    let grid = g.grid().clone();
    let n = g.n();
    let gamma = chern_connection(g);
    let norms = |slots: &[Slot], comps: &[Vec<C64>]| -> Vec<f64> {
        pointwise_real(&grid, |x| {
            let t: Vec<C64> = comps.iter().map(|c| c[x]).collect();
            tensor::norm_sq(n, slots, &t, &g.inv_at(x), &g.at(x))
        })
    };
    let s0 = [Slot::L, Slot::L, Slot::U];
    let mut terms = vec![norms(&s0, gamma.comps())];
    if k >= 1 {
        let (d, db) = covariant_derivatives(&grid, &s0, gamma.comps(), &gamma);
        let sh = [Slot::L, Slot::L, Slot::L, Slot::U];
        let sa = [Slot::Lb, Slot::L, Slot::L, Slot::U];
        let a = norms(&sh, &d);
        let b = norms(&sa, &db);
        terms.push(a.iter().zip(&b).map(|(x, y)| x + y).collect());
        if k == 2 {
            let mut acc = vec![0.0; grid.len()];
            for (slots, comps) in [(&sh, &d), (&sa, &db)] {
                let (dd, ddb) = covariant_derivatives(&grid, slots, comps, &gamma);
                let mut s1 = vec![Slot::L];
                s1.extend_from_slice(slots);
                let mut s2 = vec![Slot::Lb];
                s2.extend_from_slice(slots);
                for (x, y) in acc.iter_mut().zip(norms(&s1, &dd)) {
                    *x += y;
                }
                for (x, y) in acc.iter_mut().zip(norms(&s2, &ddb)) {
                    *x += y;
                }
            }
            terms.push(acc);
        }
    }
    let f: Vec<f64> = (0..grid.len())
        .map(|x| {
            terms
                .iter()
                .enumerate()
                .map(|(j, t)| t[x].max(0.0).powf(1.0 / (1.0 + j as f64)))
                .sum()
        })
        .collect();
    Ok(UpsilonFk {
        k,
        sup_f: crate::field::sup(&f),
        sup_terms: terms.iter().map(|t| crate::field::sup(t)).collect(),
        f,
    })
}
