//! Complex tensor fields on a grid, pointwise kernels and deterministic
//! reductions.

use crate::error::{PcfError, PositivityError, Result};
use crate::linalg::Mat;
use crate::spectral::{Grid, Kind};
use num_complex::Complex64 as C64;
use std::sync::Arc;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Values of a tensor field, stored one grid-sized vector per component.
///
/// `shape` lists the index ranges (`[]` scalar, `[n]` vector, `[n, n]`
/// matrix, …); components are row-major in the index tuple. `sig` names the
/// index types, e.g. `"ij̄"`, and only appears in error messages.
#[derive(Clone)]
pub struct Field {
    grid: Arc<Grid>,
    shape: Vec<usize>,
    sig: &'static str,
    comps: Vec<Vec<C64>>,
}

pub type ScalarField = Field;
pub type VectorField = Field;
pub type MatrixField = Field;

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Field")
            .field("shape", &self.shape)
            .field("sig", &self.sig)
            .field("points", &self.grid.len())
            .finish()
    }
}

/// Reduction selector for [`reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sup,
    Inf,
    Mean,
    L2,
}

impl Field {
    pub fn from_comps(grid: &Arc<Grid>, shape: Vec<usize>, sig: &'static str, comps: Vec<Vec<C64>>) -> Result<Self> {
        let nc: usize = shape.iter().product();
        if comps.len() != nc || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(PcfError::Shape(format!(
                "field {sig} expects {nc} components of {} values",
                grid.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            shape,
            sig,
            comps,
        })
    }

    pub fn zeros(grid: &Arc<Grid>, shape: Vec<usize>, sig: &'static str) -> Self {
        let nc: usize = shape.iter().product();
        Self {
            grid: grid.clone(),
            shape,
            sig,
            comps: vec![vec![ZERO; grid.len()]; nc],
        }
    }

    pub fn scalar(grid: &Arc<Grid>, values: Vec<C64>) -> Result<Self> {
        Self::from_comps(grid, vec![], "", vec![values])
    }

    pub fn scalar_real(grid: &Arc<Grid>, values: &[f64]) -> Result<Self> {
        Self::scalar(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn scalar_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> C64) -> Self {
        let coords = grid.lattice().coordinates();
        let d = coords.len();
        let mut x = vec![0.0; d];
        let values = (0..grid.len())
            .map(|p| {
                for a in 0..d {
                    x[a] = coords[a][p];
                }
                f(&x)
            })
            .collect();
        Self::scalar(grid, values).expect("length matches grid")
    }

    pub fn vector(grid: &Arc<Grid>, comps: Vec<Vec<C64>>) -> Result<Self> {
        let n = grid.n();
        Self::from_comps(grid, vec![n], "i", comps)
    }

    /// `(1,1)` coefficient field `M_{ij̄}`.
    pub fn matrix(grid: &Arc<Grid>, comps: Vec<Vec<C64>>) -> Result<Self> {
        let n = grid.n();
        Self::from_comps(grid, vec![n, n], "ij̄", comps)
    }

    /// Constant matrix at every point.
    pub fn constant_matrix(grid: &Arc<Grid>, m: &Mat) -> Self {
        let n = m.order();
        let comps = m.to_rows().into_iter().map(|v| vec![v; grid.len()]).collect();
        Self {
            grid: grid.clone(),
            shape: vec![n, n],
            sig: "ij̄",
            comps,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn sig(&self) -> &'static str {
        self.sig
    }

    pub fn with_sig(mut self, sig: &'static str) -> Self {
        self.sig = sig;
        self
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn comps(&self) -> &[Vec<C64>] {
        &self.comps
    }

    pub fn comps_mut(&mut self) -> &mut [Vec<C64>] {
        &mut self.comps
    }

    pub fn into_comps(self) -> Vec<Vec<C64>> {
        self.comps
    }

    pub fn comp(&self, c: usize) -> &[C64] {
        &self.comps[c]
    }

    /// Matrix at grid point `p` (matrix-shaped fields only).
    pub fn mat_at(&self, p: usize) -> Mat {
        let n = self.shape[0];
        Mat::from_fn(n, |i, j| self.comps[i * n + j][p])
    }

    pub fn values(&self) -> &[C64] {
        &self.comps[0]
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.comps[0].iter().map(|v| v.re).collect()
    }

    fn same_layout(&self, o: &Field) -> Result<()> {
        if self.shape != o.shape || self.grid.len() != o.grid.len() {
            return Err(PcfError::Shape(format!(
                "{} {:?} vs {} {:?}",
                self.sig, self.shape, o.sig, o.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Field {
        let comps = self.comps.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect();
        Self {
            comps,
            ..self.clone_empty()
        }
    }

    fn clone_empty(&self) -> Field {
        Self {
            grid: self.grid.clone(),
            shape: self.shape.clone(),
            sig: self.sig,
            comps: vec![],
        }
    }

    pub fn zip_with(&self, o: &Field, f: impl Fn(C64, C64) -> C64) -> Result<Field> {
        self.same_layout(o)?;
        let comps = self
            .comps
            .iter()
            .zip(&o.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Ok(Self {
            comps,
            ..self.clone_empty()
        })
    }

    pub fn add(&self, o: &Field) -> Result<Field> {
        self.zip_with(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &Field) -> Result<Field> {
        self.zip_with(o, |a, b| a - b)
    }

    pub fn scale(&self, c: C64) -> Field {
        self.map(|v| v * c)
    }

    /// `self + c · o`.
    pub fn axpy(&self, c: f64, o: &Field) -> Result<Field> {
        self.zip_with(o, |a, b| a + c * b)
    }

    pub fn conj(&self) -> Field {
        self.map(|v| v.conj())
    }

    /// Replace a matrix field by `(M + M†)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.shape[0];
        let len = self.grid.len();
        for i in 0..n {
            for p in 0..len {
                self.comps[i * n + i][p].im = 0.0;
            }
            for j in i + 1..n {
                for p in 0..len {
                    let a = self.comps[i * n + j][p];
                    let b = self.comps[j * n + i][p];
                    let m = 0.5 * (a + b.conj());
                    self.comps[i * n + j][p] = m;
                    self.comps[j * n + i][p] = m.conj();
                }
            }
        }
    }

    /// `max_x ‖M(x) − M(x)†‖` over entries.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.shape[0];
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for (a, b) in self.comps[i * n + j].iter().zip(&self.comps[j * n + i]) {
                    d = d.max((a - b.conj()).norm());
                }
            }
        }
        d
    }

    /// Component-wise lattice means.
    pub fn means(&self) -> Vec<C64> {
        let len = self.grid.len() as f64;
        self.comps.iter().map(|c| pairwise_sum_c(c) / len).collect()
    }

    /// Largest absolute value over all components and points.
    pub fn sup_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, o: &Field) -> Result<f64> {
        Ok(self.sub(o)?.sup_abs())
    }

    /// Spectral derivative of every component.
    pub fn partial(&self, i: usize, kind: Kind) -> Result<Field> {
        self.grid.lattice().check_complex_axis(i)?;
        let comps = self
            .comps
            .iter()
            .map(|c| self.grid.derive_hat(&self.grid.forward(c), i, kind))
            .collect();
        Ok(Self {
            comps,
            ..self.clone_empty()
        })
    }

    /// Apply the 2/3 mask to every component.
    pub fn dealias(&mut self) {
        for c in self.comps.iter_mut() {
            self.grid.dealias_values(c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.comps
            .iter()
            .all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
    }
}

/// `∂_i f` (`Kind::Holo`) or `∂_ī f`, spectrally.
pub fn partial(field: &Field, i: usize, kind: Kind) -> Result<Field> {
    field.partial(i, kind)
}

/// Flat Laplacian inverse `(Σ ∂_i∂_ī)⁻¹` on the mean-zero part; returns the
/// solution and the mean that was removed.
pub fn invert_flat_laplacian(f: &Field) -> Result<(Field, C64)> {
    let (u, mean) = f.grid.invert_flat_laplacian_values(f.values());
    Ok((Field::scalar(&f.grid, u)?, mean))
}

/// Flat Laplacian `Σ ∂_i∂_ī f`.
pub fn flat_laplacian(f: &Field) -> Field {
    let g = &f.grid;
    let comps = f
        .comps
        .iter()
        .map(|c| {
            let hat = g.forward(c);
            g.inverse(hat.iter().zip(g.flat_laplacian_symbol()).map(|(a, s)| a * s).collect())
        })
        .collect();
    Field {
        comps,
        ..f.clone_empty()
    }
}

/// Evaluate `kernel(point, out)` at every grid point, writing `ncomp` values
/// per point, and return the result as a component-major field.
pub fn pointwise<F>(grid: &Arc<Grid>, shape: Vec<usize>, sig: &'static str, kernel: F) -> Field
where
    F: Fn(usize, &mut [C64]) + Sync + Send,
{
    let nc: usize = shape.iter().product::<usize>().max(1);
    let len = grid.len();
    let mut aos = vec![ZERO; len * nc];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        aos.par_chunks_mut(nc).enumerate().for_each(|(p, out)| kernel(p, out));
    }
    #[cfg(not(feature = "parallel"))]
    {
        aos.chunks_mut(nc).enumerate().for_each(|(p, out)| kernel(p, out));
    }
    let comps = if nc == 1 {
        vec![aos]
    } else {
        (0..nc)
            .map(|c| aos[c..].iter().step_by(nc).copied().collect())
            .collect()
    };
    Field {
        grid: grid.clone(),
        shape,
        sig,
        comps,
    }
}

/// Real-valued pointwise map, used for eigenvalue and norm fields.
pub fn pointwise_real<F>(grid: &Arc<Grid>, kernel: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..grid.len()).into_par_iter().map(kernel).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..grid.len()).map(kernel).collect()
    }
}

/// Fixed-tree pairwise summation; the order depends only on the length.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn pairwise_sum_c(x: &[C64]) -> C64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum_c(a) + pairwise_sum_c(b)
}

pub fn sup(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn inf(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn mean(x: &[f64]) -> f64 {
    pairwise_sum(x) / x.len() as f64
}

/// Index of the largest entry (first one on ties).
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = k;
        }
    }
    best
}

/// Pointwise magnitude used by [`reduce`]: the real part for scalars, and
/// for vectors and `(1,1)` matrices the `g`-norm when `g` is supplied
/// (Frobenius / Euclidean otherwise).
fn pointwise_magnitude(field: &Field, g: Option<&Field>) -> Result<Vec<f64>> {
    match field.shape.len() {
        0 => Ok(field.real_values()),
        1 | 2 => {
            let Some(g) = g else {
                return Ok(pointwise_real(&field.grid, |p| {
                    field.comps.iter().map(|c| c[p].norm_sqr()).sum::<f64>().sqrt()
                }));
            };
            let n = g.shape[0];
            let mut inverses = Vec::with_capacity(g.grid.len());
            for p in 0..g.grid.len() {
                let m = g.mat_at(p);
                let (lmin, _) = m.min_max_eigenvalues();
                if !(lmin > 0.0) {
                    return Err(PositivityError {
                        what: "weighting metric".into(),
                        min_eigenvalue: lmin,
                        floor: 0.0,
                        point: p,
                        t: None,
                    }
                    .into());
                }
                inverses.push(m.inverse().expect("positive definite"));
            }
            let vector = field.shape.len() == 1;
            Ok(pointwise_real(&field.grid, |p| {
                let gi = &inverses[p];
                let mut s = ZERO;
                if vector {
                    for i in 0..n {
                        for j in 0..n {
                            s += gi[(j, i)] * field.comps[i][p] * field.comps[j][p].conj();
                        }
                    }
                } else {
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                for l in 0..n {
                                    s += gi[(j, k)]
                                        * gi[(l, i)]
                                        * field.comps[i * n + j][p]
                                        * field.comps[k * n + l][p].conj();
                                }
                            }
                        }
                    }
                }
                s.re.max(0.0).sqrt()
            }))
        }
        _ => Err(PcfError::Unsupported(format!(
            "reduction over a rank-{} field",
            field.shape.len()
        ))),
    }
}

/// Deterministic sup / inf / mean / L2 (root mean square) of a field.
pub fn reduce(field: &Field, op: Reduction, g: Option<&Field>) -> Result<f64> {
    let v = pointwise_magnitude(field, g)?;
    Ok(match op {
        Reduction::Sup => sup(&v),
        Reduction::Inf => inf(&v),
        Reduction::Mean => mean(&v),
        Reduction::L2 => {
            let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            mean(&sq).sqrt()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ComplexLattice;
    use std::f64::consts::PI;

    fn grid(n: usize, size: usize, period: f64) -> Arc<Grid> {
        Grid::new(ComplexLattice::uniform(n, size, period).unwrap())
    }

    #[test]
    fn constant_has_zero_derivative() {
        let g = grid(1, 16, 2.0 * PI);
        let f = Field::scalar_fn(&g, |_| C64::new(3.0, -1.0));
        for kind in [Kind::Holo, Kind::Antiholo] {
            assert!(f.partial(0, kind).unwrap().sup_abs() < 1e-15);
        }
    }

    #[test]
    fn plane_wave_eigenfunction() {
        let g = grid(1, 16, 2.0 * PI);
        let (k, m) = (3.0, -2.0);
        let f = Field::scalar_fn(&g, |x| C64::from_polar(1.0, k * x[0] + m * x[1]));
        let df = f.partial(0, Kind::Holo).unwrap();
        let expect = f.scale(C64::new(m, k) * 0.5);
        assert!(df.sup_distance(&expect).unwrap() < 1e-13);
    }

    #[test]
    fn axis_out_of_range() {
        let g = grid(1, 8, 1.0);
        let f = Field::scalar_fn(&g, |_| C64::new(1.0, 0.0));
        assert!(matches!(
            f.partial(1, Kind::Holo),
            Err(PcfError::AxisOutOfRange { axis: 1, n: 1 })
        ));
    }

    #[test]
    fn laplacian_inverse_eigenmode() {
        let g = grid(1, 16, 2.0 * PI);
        let f = Field::scalar_fn(&g, |x| C64::from_polar(1.0, x[0]));
        let (u, mean) = invert_flat_laplacian(&f).unwrap();
        assert!(mean.norm() < 1e-15);
        assert!(u.sup_distance(&f.scale(C64::new(-4.0, 0.0))).unwrap() < 1e-13);
        let zero = Field::scalar_fn(&g, |_| ZERO);
        assert_eq!(invert_flat_laplacian(&zero).unwrap().0.sup_abs(), 0.0);
    }

    #[test]
    fn reductions_on_simple_fields() {
        let g = grid(1, 8, 1.0);
        let c = Field::scalar_fn(&g, |_| C64::new(2.5, 0.0));
        for op in [Reduction::Sup, Reduction::Inf, Reduction::Mean] {
            assert_eq!(reduce(&c, op, None).unwrap(), 2.5);
        }
        let half = g.len() / 2;
        let vals: Vec<f64> = (0..g.len()).map(|p| if p < half { 1.0 } else { -1.0 }).collect();
        let f = Field::scalar_real(&g, &vals).unwrap();
        assert_eq!(reduce(&f, Reduction::Mean, None).unwrap(), 0.0);
        assert_eq!(reduce(&f, Reduction::Sup, None).unwrap(), 1.0);
        assert_eq!(reduce(&f, Reduction::Inf, None).unwrap(), -1.0);
        assert_eq!(reduce(&f, Reduction::L2, None).unwrap(), 1.0);
    }

    #[test]
    fn weighted_norm_rejects_indefinite_metric() {
        let g = grid(1, 8, 1.0);
        let v = Field::vector(&g, vec![vec![C64::new(1.0, 0.0); g.len()]]).unwrap();
        let bad = Field::constant_matrix(&g, &Mat::scaled_identity(1, -1.0));
        assert!(matches!(
            reduce(&v, Reduction::Sup, Some(&bad)),
            Err(PcfError::Positivity(_))
        ));
        let good = Field::constant_matrix(&g, &Mat::scaled_identity(1, 4.0));
        let s = reduce(&v, Reduction::Sup, Some(&good)).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetrize_kills_antihermitian_part() {
        let g = grid(2, 8, 1.0);
        let comps = (0..4)
            .map(|c| {
                (0..g.len())
                    .map(|p| C64::new((p + c) as f64 * 0.1, (p * c) as f64 * 0.01))
                    .collect()
            })
            .collect();
        let mut m = Field::matrix(&g, comps).unwrap();
        assert!(m.hermitian_defect() > 1e-3);
        m.symmetrize();
        assert!(m.hermitian_defect() <= 1e-12);
    }
}
