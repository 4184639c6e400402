//! Browser demo: three small computations exported through wasm-bindgen.
//!
//! The plain Rust functions carry the logic and are tested on the host; the
//! `#[wasm_bindgen]` items are thin wrappers.

use pcflow::diagnostics::born_infeld_at;
use pcflow::flow::{random_pluriclosed_perturbation, rk4_step, Background, FlowState, StepControl};
use pcflow::gk::{gk_cfl_dt, gk_record, gk_step, random_gk_potential, GkBackground, GkState};
use pcflow::linalg::{random_hpd, Mat};
use pcflow::{ComplexLattice, Grid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use wasm_bindgen::prelude::*;

/// `[max |det W − 1|, fraction of samples where W ≻ 0 agrees with g ≻ 0]`
/// over `count` random pairs `(g, β)` of order `n`. Half of the `g` are
/// shifted so that they fail to be positive.
pub fn det_w_stats(count: usize, n: usize, seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut agree) = (0.0f64, 0usize);
    for s in 0..count {
        let p = random_hpd(n, 0.2, || StandardNormal.sample(&mut rng));
        let g = if s % 2 == 0 {
            p
        } else {
            p.sub(&Mat::scaled_identity(n, 1.5))
        };
        let b = Mat::from_fn(n, |_, _| {
            num_complex::Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        let beta = b.sub(&b.transpose());
        let Some(w) = born_infeld_at(&g, &beta) else { continue };
        let g_pos = g.min_max_eigenvalues().0 > 0.0;
        if g_pos {
            worst = worst.max((w.det() - 1.0).norm());
        }
        if g_pos == (w.hermitian_part().min_max_eigenvalues().0 > 0.0) {
            agree += 1;
        }
    }
    [worst, agree as f64 / count.max(1) as f64]
}

/// One-dimensional pluriclosed (Kähler–Ricci) flow on a square torus,
/// stepped on demand.
#[wasm_bindgen]
pub struct TorusFlow {
    state: FlowState,
    ctrl: StepControl,
    mean0: f64,
    size: usize,
}

impl TorusFlow {
    pub fn create(size: usize, seed: u64, amplitude: f64) -> Result<Self, String> {
        let lattice = ComplexLattice::uniform(1, size, 2.0 * PI).map_err(|e| e.to_string())?;
        let grid = Grid::new(lattice);
        let bg = Background::identity(1);
        let p = random_pluriclosed_perturbation(&grid, &bg, seed, amplitude, 3.0).map_err(|e| e.to_string())?;
        let state = FlowState::oneform(p.alpha, bg).map_err(|e| e.to_string())?;
        let mean0 = state.g.field().means()[0].re;
        let ctrl = StepControl {
            cfl_safety: 0.4,
            ..StepControl::default()
        };
        Ok(Self {
            state,
            ctrl,
            mean0,
            size,
        })
    }
}

#[wasm_bindgen]
impl TorusFlow {
    #[wasm_bindgen(constructor)]
    pub fn new(size: u32, seed: u32, amplitude: f64) -> Result<TorusFlow, JsError> {
        Self::create(size as usize, seed as u64, amplitude).map_err(|e| JsError::new(&e))
    }

    pub fn advance(&mut self, steps: u32) -> Result<(), JsError> {
        for _ in 0..steps {
            self.state = rk4_step(&self.state, &self.ctrl).map_err(|e| JsError::new(&e.to_string()))?;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn size(&self) -> u32 {
        self.size as u32
    }

    /// `g_{1 1̄}` on the grid, row-major.
    pub fn metric(&self) -> Vec<f64> {
        self.state.g.field().comp(0).iter().map(|v| v.re).collect()
    }

    /// `sup |g − mean g₀|`.
    pub fn deviation(&self) -> f64 {
        self.state
            .g
            .field()
            .comp(0)
            .iter()
            .map(|v| (v.re - self.mean0).abs())
            .fold(0.0, f64::max)
    }
}

/// `(t, sup|u̇|, osc u)` samples of the scalar flow on the product of two
/// elliptic curves, flattened.
pub fn gk_series(size: usize, seed: u64, amplitude: f64, t_end: f64, samples: usize) -> Result<Vec<f64>, String> {
    let err = |e: pcflow::PcfError| e.to_string();
    let lattice = ComplexLattice::uniform(2, size, PI).map_err(err)?;
    let grid = Grid::new(lattice);
    let bg = GkBackground::identity(1, 1);
    let (u, _, _) = random_gk_potential(&grid, 1, &bg, seed, amplitude, 2.0).map_err(err)?;
    let mut state = GkState::new(u, 1, bg).map_err(err)?;
    let mean0 = state.metric().map_err(err)?.field().means();
    let ctrl = StepControl {
        cfl_safety: 0.4,
        ..StepControl::default()
    };
    let mut out = vec![];
    let mut push = |s: &GkState| -> Result<(), String> {
        let r = gk_record(s, &mean0).map_err(err)?;
        let gk = r.gk.expect("gk columns");
        out.extend_from_slice(&[s.t, gk.sup_abs_udot, gk.osc_u]);
        Ok(())
    };
    push(&state)?;
    for k in 1..=samples {
        let target = t_end * k as f64 / samples as f64;
        while state.t < target - 1e-12 {
            let dt = gk_cfl_dt(&state, &ctrl).min(target - state.t);
            state = gk_step(&state, &ctrl, dt).map_err(err)?;
        }
        push(&state)?;
    }
    Ok(out)
}

#[wasm_bindgen(js_name = detW)]
pub fn det_w(count: u32, n: u32, seed: u32) -> Vec<f64> {
    det_w_stats(count as usize, (n as usize).clamp(1, 3), seed as u64).to_vec()
}

#[wasm_bindgen(js_name = gkDecay)]
pub fn gk_decay(size: u32, seed: u32, amplitude: f64, t_end: f64, samples: u32) -> Result<Vec<f64>, JsError> {
    gk_series(size as usize, seed as u64, amplitude, t_end, samples as usize).map_err(|e| JsError::new(&e))
}
