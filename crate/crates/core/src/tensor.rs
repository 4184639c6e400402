//! Pointwise Chern-connection tensor calculus: slot-typed tensors, their
//! metric norms and covariant derivatives.
//!
//! A tensor of rank `r` on `ℂⁿ` is a row-major array of `nʳ` components,
//! with one [`Slot`] per index.

use crate::linalg::Mat;
use num_complex::Complex64 as C64;

pub const MAXN: usize = 3;
pub type Gamma = [[[C64; MAXN]; MAXN]; MAXN];

/// Index type: lower `i`, lower `ī`, upper `k`, upper `k̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    L,
    Lb,
    U,
    Ub,
}

fn pow(n: usize, r: usize) -> usize {
    n.pow(r as u32)
}

/// `|T|²` with every lower slot paired by `g⁻¹` (`gi`, indexed `gi[(j, i)] =
/// g^{j̄ i}`) and every upper slot paired by `up` (normally `g`).
pub fn norm_sq(n: usize, slots: &[Slot], t: &[C64], gi: &Mat, up: &Mat) -> f64 {
    let r = slots.len();
    let len = pow(n, r);
    debug_assert_eq!(t.len(), len);
    let mut u = t.to_vec();
    let mut next = vec![C64::new(0.0, 0.0); len];
    for (s, slot) in slots.iter().enumerate() {
        let stride = pow(n, r - 1 - s);
        for v in next.iter_mut() {
            *v = C64::new(0.0, 0.0);
        }
        for idx in 0..len {
            let a = (idx / stride) % n;
            let base = idx - a * stride;
            let val = u[idx];
            if val == C64::new(0.0, 0.0) {
                continue;
            }
            for b in 0..n {
                let w = match slot {
                    Slot::L => gi[(b, a)],
                    Slot::Lb => gi[(a, b)],
                    Slot::U => up[(a, b)],
                    Slot::Ub => up[(b, a)],
                };
                next[base + b * stride] += val * w;
            }
        }
        std::mem::swap(&mut u, &mut next);
    }
    u.iter().zip(t).map(|(a, b)| (a * b.conj()).re).sum()
}

/// `Γ_{ij}^k = g^{l̄ k} ∂_i g_{j l̄}` from the inverse and first derivatives
/// (`dg[p][i][j] = ∂_p g_{i j̄}`).
pub fn christoffel(n: usize, gi: &Mat, dg: &Gamma) -> Gamma {
    let mut gam = [[[C64::new(0.0, 0.0); MAXN]; MAXN]; MAXN];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut s = C64::new(0.0, 0.0);
                for l in 0..n {
                    s += gi[(l, k)] * dg[i][j][l];
                }
                gam[i][j][k] = s;
            }
        }
    }
    gam
}

/// `∇_p T` for all `p`, given `dt[p]` = `∂_p T`; the new index is prepended
/// as an `L` slot.
pub fn covariant_holo(n: usize, slots: &[Slot], t: &[C64], dt: &[Vec<C64>], gam: &Gamma) -> Vec<C64> {
    let r = slots.len();
    let len = pow(n, r);
    let mut out = vec![C64::new(0.0, 0.0); n * len];
    for p in 0..n {
        for idx in 0..len {
            let mut v = dt[p][idx];
            for (s, slot) in slots.iter().enumerate() {
                let stride = pow(n, r - 1 - s);
                let a = (idx / stride) % n;
                let base = idx - a * stride;
                match slot {
                    Slot::L => {
                        for q in 0..n {
                            v -= gam[p][a][q] * t[base + q * stride];
                        }
                    }
                    Slot::U => {
                        for q in 0..n {
                            v += gam[p][q][a] * t[base + q * stride];
                        }
                    }
                    Slot::Lb | Slot::Ub => {}
                }
            }
            out[p * len + idx] = v;
        }
    }
    out
}

/// `∇_q̄ T` for all `q`, given `dbt[q]` = `∂_q̄ T`; the new index is
/// prepended as an `Lb` slot.
pub fn covariant_antiholo(n: usize, slots: &[Slot], t: &[C64], dbt: &[Vec<C64>], gam: &Gamma) -> Vec<C64> {
    let r = slots.len();
    let len = pow(n, r);
    let mut out = vec![C64::new(0.0, 0.0); n * len];
    for q in 0..n {
        for idx in 0..len {
            let mut v = dbt[q][idx];
            for (s, slot) in slots.iter().enumerate() {
                let stride = pow(n, r - 1 - s);
                let a = (idx / stride) % n;
                let base = idx - a * stride;
                match slot {
                    Slot::Lb => {
                        for b in 0..n {
                            v -= gam[q][a][b].conj() * t[base + b * stride];
                        }
                    }
                    Slot::Ub => {
                        for b in 0..n {
                            v += gam[q][b][a].conj() * t[base + b * stride];
                        }
                    }
                    Slot::L | Slot::U => {}
                }
            }
            out[q * len + idx] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_hpd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn vector_norm_matches_direct_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nrm = || -> f64 { StandardNormal.sample(&mut rng) };
        let g = random_hpd(3, 0.5, &mut nrm);
        let gi = g.inverse().unwrap();
        let v: Vec<C64> = (0..3).map(|_| C64::new(nrm(), nrm())).collect();
        let mut direct = C64::new(0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                direct += gi[(j, i)] * v[i] * v[j].conj();
            }
        }
        let lhs = norm_sq(3, &[Slot::L], &v, &gi, &g);
        assert!((lhs - direct.re).abs() < 1e-12);
        assert!(direct.im.abs() < 1e-12);
        // Upper slot: g_{k l̄} v^k conj(v^l).
        let mut up = C64::new(0.0, 0.0);
        for k in 0..3 {
            for l in 0..3 {
                up += g[(k, l)] * v[k] * v[l].conj();
            }
        }
        assert!((norm_sq(3, &[Slot::U], &v, &gi, &g) - up.re).abs() < 1e-12);
    }

    #[test]
    fn norms_are_nonnegative_for_every_slot_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut nrm = || -> f64 { StandardNormal.sample(&mut rng) };
        let g = random_hpd(2, 0.3, &mut nrm);
        let gi = g.inverse().unwrap();
        let all = [Slot::L, Slot::Lb, Slot::U, Slot::Ub];
        for a in all {
            for b in all {
                for c in all {
                    let t: Vec<C64> = (0..8).map(|_| C64::new(nrm(), nrm())).collect();
                    assert!(norm_sq(2, &[a, b, c], &t, &gi, &g) > 0.0);
                }
            }
        }
    }

    #[test]
    fn flat_connection_leaves_derivative_unchanged() {
        let zero = [[[C64::new(0.0, 0.0); MAXN]; MAXN]; MAXN];
        let t = vec![C64::new(1.0, 2.0); 4];
        let dt = vec![vec![C64::new(0.5, 0.0); 4], vec![C64::new(0.0, 0.5); 4]];
        let out = covariant_holo(2, &[Slot::L, Slot::U], &t, &dt, &zero);
        assert_eq!(&out[..4], &dt[0][..]);
        assert_eq!(&out[4..], &dt[1][..]);
    }
}
