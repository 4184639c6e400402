//! Fourier machinery on a [`ComplexLattice`]: an N-dimensional FFT built from
//! batched 1-D transforms, holomorphic/antiholomorphic derivative symbols,
//! the 2/3 dealiasing mask and the flat Laplacian inverse.

use crate::error::Result;
use crate::lattice::ComplexLattice;
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Derivative type: `∂_i` or `∂_ī`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Holo,
    Antiholo,
}

/// Unscaled forward / `1/N`-scaled inverse transform over all axes of a
/// row-major array.
///
/// Strided axes are gathered in cache-sized column batches, transformed and
/// scattered back, so the layout never changes.
pub struct FftNd {
    sizes: Vec<usize>,
    len: usize,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    scratch_len: usize,
}

impl FftNd {
    pub fn new(sizes: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd: Vec<_> = sizes.iter().map(|&s| planner.plan_fft_forward(s)).collect();
        let inv: Vec<_> = sizes.iter().map(|&s| planner.plan_fft_inverse(s)).collect();
        let scratch_len = fwd
            .iter()
            .chain(inv.iter())
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            sizes: sizes.to_vec(),
            len: sizes.iter().product(),
            fwd,
            inv,
            scratch_len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn transform(&self, data: &mut Vec<C64>, inverse: bool) {
        assert_eq!(data.len(), self.len, "buffer length does not match grid");
        const BATCH: usize = 64;
        let d = self.sizes.len();
        let max_size = self.sizes.iter().copied().max().unwrap_or(1);
        let mut tmp = vec![C64::new(0.0, 0.0); BATCH * max_size];
        let mut scratch = vec![C64::new(0.0, 0.0); self.scratch_len];
        let mut stride = self.len;
        for axis in 0..d {
            let size = self.sizes[axis];
            stride /= size;
            let plan = if inverse { &self.inv[axis] } else { &self.fwd[axis] };
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            for block in data.chunks_exact_mut(size * stride) {
                for c0 in (0..stride).step_by(BATCH) {
                    let width = BATCH.min(stride - c0);
                    let tmp = &mut tmp[..width * size];
                    for j in 0..size {
                        let src = &block[j * stride + c0..j * stride + c0 + width];
                        for (row, v) in tmp.chunks_exact_mut(size).zip(src) {
                            row[j] = *v;
                        }
                    }
                    plan.process_with_scratch(tmp, &mut scratch);
                    for j in 0..size {
                        let dst = &mut block[j * stride + c0..j * stride + c0 + width];
                        for (row, v) in tmp.chunks_exact(size).zip(dst) {
                            *v = row[j];
                        }
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / self.len as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn forward(&self, data: &mut Vec<C64>) {
        self.transform(data, false);
    }

    pub fn inverse(&self, data: &mut Vec<C64>) {
        self.transform(data, true);
    }
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("sizes", &self.sizes).finish()
    }
}

/// A lattice together with its transform plans and symbol tables. Fields hold
/// an `Arc<Grid>`.
#[derive(Debug)]
pub struct Grid {
    lattice: ComplexLattice,
    fft: FftNd,
    holo: Vec<Vec<C64>>,
    antiholo: Vec<Vec<C64>>,
    flat_laplacian: Vec<f64>,
    dealias_mask: Vec<bool>,
    self_conjugate: Vec<bool>,
    mirror: Vec<usize>,
}

impl Grid {
    pub fn new(lattice: ComplexLattice) -> Arc<Self> {
        let d = lattice.real_dim();
        let n = lattice.n();
        let len = lattice.len();
        let sizes = lattice.sizes().to_vec();
        // Nyquist wavenumbers are zeroed so that k(-j) = -k(j) holds on every
        // row; conjugation then commutes with the derivative symbols.
        let kz: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let mut k = lattice.wavenumbers(a);
                k[sizes[a] / 2] = 0.0;
                k
            })
            .collect();
        let cut: Vec<i64> = sizes.iter().map(|&s| (s / 3) as i64).collect();
        let strides = lattice.strides();
        let mut holo = vec![Vec::with_capacity(len); n];
        let mut antiholo = vec![Vec::with_capacity(len); n];
        let mut flat_laplacian = Vec::with_capacity(len);
        let mut dealias_mask = Vec::with_capacity(len);
        let mut self_conjugate = Vec::with_capacity(len);
        let mut mirror = Vec::with_capacity(len);
        let mut mi = vec![0; d];
        for idx in 0..len {
            lattice.unravel(idx, &mut mi);
            let mut lap = 0.0;
            for i in 0..n {
                let kx = kz[2 * i][mi[2 * i]];
                let ky = kz[2 * i + 1][mi[2 * i + 1]];
                holo[i].push(C64::new(0.5 * ky, 0.5 * kx));
                antiholo[i].push(C64::new(-0.5 * ky, 0.5 * kx));
                lap -= 0.25 * (kx * kx + ky * ky);
            }
            flat_laplacian.push(lap);
            let mut keep = true;
            let mut selfc = true;
            let mut m = 0;
            for a in 0..d {
                let j = ComplexLattice::signed_mode(mi[a], sizes[a]);
                keep &= j.abs() <= cut[a];
                let mj = (sizes[a] - mi[a]) % sizes[a];
                selfc &= mj == mi[a];
                m += mj * strides[a];
            }
            dealias_mask.push(keep);
            self_conjugate.push(selfc);
            mirror.push(m);
        }
        Arc::new(Self {
            fft: FftNd::new(&sizes),
            lattice,
            holo,
            antiholo,
            flat_laplacian,
            dealias_mask,
            self_conjugate,
            mirror,
        })
    }

    pub fn lattice(&self) -> &ComplexLattice {
        &self.lattice
    }

    pub fn n(&self) -> usize {
        self.lattice.n()
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, values: &[C64]) -> Vec<C64> {
        let mut v = values.to_vec();
        self.fft.forward(&mut v);
        v
    }

    pub fn inverse(&self, mut hat: Vec<C64>) -> Vec<C64> {
        self.fft.inverse(&mut hat);
        hat
    }

    /// Fourier multiplier of `∂_i` (`kind = Holo`) or `∂_ī`.
    pub fn symbol(&self, i: usize, kind: Kind) -> &[C64] {
        match kind {
            Kind::Holo => &self.holo[i],
            Kind::Antiholo => &self.antiholo[i],
        }
    }

    /// Multiplier of `Σ_i ∂_i ∂_ī`, i.e. `−|k|²/4` with Nyquist rows zeroed.
    pub fn flat_laplacian_symbol(&self) -> &[f64] {
        &self.flat_laplacian
    }

    pub fn dealias_mask(&self) -> &[bool] {
        &self.dealias_mask
    }

    /// Flat index of the mode `−k`.
    pub fn mirror(&self, idx: usize) -> usize {
        self.mirror[idx]
    }

    /// True for modes with `k ≡ −k` (every axis at 0 or Nyquist).
    pub fn is_self_conjugate(&self, idx: usize) -> bool {
        self.self_conjugate[idx]
    }

    /// Multiply a spectrum by the derivative symbol and transform back.
    pub fn derive_hat(&self, hat: &[C64], i: usize, kind: Kind) -> Vec<C64> {
        let s = self.symbol(i, kind);
        self.inverse(hat.iter().zip(s).map(|(a, b)| a * b).collect())
    }

    /// `∂_p ∂_q̄` applied to a spectrum.
    pub fn derive2_hat(&self, hat: &[C64], p: usize, q: usize) -> Vec<C64> {
        let sp = self.symbol(p, Kind::Holo);
        let sq = self.symbol(q, Kind::Antiholo);
        self.inverse(hat.iter().zip(sp.iter().zip(sq)).map(|(a, (b, c))| a * b * c).collect())
    }

    /// Spectra of Hermitian matrix components, using that diagonal entries
    /// are real and `M_{ji} = conj M_{ij}`.
    pub fn forward_hermitian(&self, comps: &[Vec<C64>], n: usize) -> Vec<Vec<C64>> {
        let mut hats = vec![Vec::new(); n * n];
        for i in 0..n {
            for j in i + 1..n {
                let h = self.forward(&comps[i * n + j]);
                hats[j * n + i] = (0..h.len()).map(|k| h[self.mirror[k]].conj()).collect();
                hats[i * n + j] = h;
            }
        }
        let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();
        for pair in diag.chunks(2) {
            let h = match *pair {
                [a, b] => {
                    let packed: Vec<C64> = comps[a]
                        .iter()
                        .zip(&comps[b])
                        .map(|(x, y)| C64::new(x.re, y.re))
                        .collect();
                    self.forward(&packed)
                }
                _ => {
                    let packed: Vec<C64> = comps[pair[0]].iter().map(|x| C64::new(x.re, 0.0)).collect();
                    self.forward(&packed)
                }
            };
            let half = C64::new(0.5, 0.0);
            let mhalf_i = C64::new(0.0, -0.5);
            hats[pair[0]] = (0..h.len()).map(|k| half * (h[k] + h[self.mirror[k]].conj())).collect();
            if let [_, b] = *pair {
                hats[b] = (0..h.len())
                    .map(|k| mhalf_i * (h[k] - h[self.mirror[k]].conj()))
                    .collect();
            }
        }
        hats
    }

    /// `∂_p ∂_p̄` of two real fields given by their spectra, in one inverse
    /// transform.
    pub fn derive2_real_pair(&self, a: &[C64], pa: usize, b: &[C64], pb: usize) -> (Vec<C64>, Vec<C64>) {
        let sa = self.symbol(pa, Kind::Holo).iter().zip(self.symbol(pa, Kind::Antiholo));
        let sb = self.symbol(pb, Kind::Holo).iter().zip(self.symbol(pb, Kind::Antiholo));
        let i = C64::new(0.0, 1.0);
        let packed = a
            .iter()
            .zip(b)
            .zip(sa.zip(sb))
            .map(|((x, y), ((h1, a1), (h2, a2)))| x * h1 * a1 + i * (y * h2 * a2))
            .collect();
        let v = self.inverse(packed);
        (
            v.iter().map(|z| C64::new(z.re, 0.0)).collect(),
            v.iter().map(|z| C64::new(z.im, 0.0)).collect(),
        )
    }

    /// Spectral derivative of raw grid values.
    pub fn partial_values(&self, values: &[C64], i: usize, kind: Kind) -> Result<Vec<C64>> {
        self.lattice.check_complex_axis(i)?;
        Ok(self.derive_hat(&self.forward(values), i, kind))
    }

    /// Zero every mode outside the 2/3 band.
    pub fn dealias_values(&self, values: &mut Vec<C64>) {
        let mut hat = self.forward(values);
        for (h, &keep) in hat.iter_mut().zip(&self.dealias_mask) {
            if !keep {
                *h = C64::new(0.0, 0.0);
            }
        }
        *values = self.inverse(hat);
    }

    /// Dealias an `n × n` Hermitian matrix field given by its components.
    /// Off-diagonal pairs are filtered once and mirrored; diagonal entries
    /// are filtered two at a time as real and imaginary parts.
    pub fn dealias_hermitian(&self, comps: &mut [Vec<C64>], n: usize) {
        for i in 0..n {
            for j in i + 1..n {
                self.dealias_values(&mut comps[i * n + j]);
                let conj: Vec<C64> = comps[i * n + j].iter().map(|v| v.conj()).collect();
                comps[j * n + i] = conj;
            }
        }
        let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();
        for pair in diag.chunks(2) {
            let mut packed: Vec<C64> = match *pair {
                [a, b] => comps[a]
                    .iter()
                    .zip(&comps[b])
                    .map(|(x, y)| C64::new(x.re, y.re))
                    .collect(),
                _ => comps[pair[0]].iter().map(|x| C64::new(x.re, 0.0)).collect(),
            };
            self.dealias_values(&mut packed);
            for (k, &c) in pair.iter().enumerate() {
                comps[c] = packed
                    .iter()
                    .map(|v| C64::new(if k == 0 { v.re } else { v.im }, 0.0))
                    .collect();
            }
        }
    }

    /// Solve `Σ ∂_i∂_ī u = f − mean(f)` with zero-mean `u`. Returns the
    /// removed mean alongside.
    pub fn invert_flat_laplacian_values(&self, values: &[C64]) -> (Vec<C64>, C64) {
        let mut hat = self.forward(values);
        let mean = hat[0] / self.len() as f64;
        for (h, &s) in hat.iter_mut().zip(&self.flat_laplacian) {
            if s == 0.0 {
                *h = C64::new(0.0, 0.0);
            } else {
                *h /= s;
            }
        }
        (self.inverse(hat), mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(sizes: &[usize], x: &[C64]) -> Vec<C64> {
        let lat = ComplexLattice::new(sizes.len() / 2, sizes.to_vec(), vec![1.0; sizes.len()]).unwrap();
        let len = x.len();
        let d = sizes.len();
        let (mut a, mut b) = (vec![0; d], vec![0; d]);
        (0..len)
            .map(|k| {
                lat.unravel(k, &mut a);
                let mut acc = C64::new(0.0, 0.0);
                for (j, xv) in x.iter().enumerate() {
                    lat.unravel(j, &mut b);
                    let ph: f64 = (0..d).map(|ax| (a[ax] * b[ax]) as f64 / sizes[ax] as f64).sum();
                    acc += xv * C64::from_polar(1.0, -2.0 * PI * ph);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fft_nd_matches_direct_sum() {
        let sizes = [8, 10];
        let x: Vec<C64> = (0..80)
            .map(|j| C64::new((j as f64 * 0.37).sin(), (j as f64 * 0.11).cos()))
            .collect();
        let fft = FftNd::new(&sizes);
        let mut y = x.clone();
        fft.forward(&mut y);
        let z = naive_dft(&sizes, &x);
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).norm() < 1e-11);
        }
        fft.inverse(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn fft_nd_four_axes_round_trip() {
        let sizes = [8, 8, 10, 12];
        let fft = FftNd::new(&sizes);
        let x: Vec<C64> = (0..fft.len())
            .map(|j| C64::new((j as f64).sqrt().sin(), (j as f64 * 0.3).cos()))
            .collect();
        let mut y = x.clone();
        fft.forward(&mut y);
        fft.inverse(&mut y);
        let err = y.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn mirror_is_involution() {
        let g = Grid::new(ComplexLattice::uniform(1, 8, 1.0).unwrap());
        for k in 0..g.len() {
            assert_eq!(g.mirror(g.mirror(k)), k);
            assert_eq!(g.is_self_conjugate(k), g.mirror(k) == k);
        }
    }

    #[test]
    fn dealias_cut_keeps_a_third() {
        let g = Grid::new(ComplexLattice::uniform(1, 16, 1.0).unwrap());
        let kept = g.dealias_mask().iter().filter(|&&b| b).count();
        assert_eq!(kept, 11 * 11);
    }
}
