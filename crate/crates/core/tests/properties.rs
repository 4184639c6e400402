use num_complex::Complex64 as C64;
use pcflow::config::parse_config;
use pcflow::diagnostics::born_infeld_at;
use pcflow::field::{flat_laplacian, invert_flat_laplacian};
use pcflow::flow::{cfl_dt, random_pluriclosed_perturbation, Background, FlowState, StepControl};
use pcflow::hermitian::{chern_curvature_s, chern_torsion, complex_hessian, metric_from_oneform, torsion_q};
use pcflow::io::Snapshot;
use pcflow::linalg::{random_hpd, Mat};
use pcflow::oracle::BandLimited;
use pcflow::{ComplexLattice, Field, Grid, Kind, MetricField};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use std::sync::Arc;

fn grid(n: usize, size: usize) -> Arc<Grid> {
    Grid::new(ComplexLattice::uniform(n, size, 2.0 * PI).unwrap())
}

fn band_limited(g: &Arc<Grid>, seed: u64, max_mode: i64) -> Field {
    BandLimited::random(g.lattice(), seed, 6, max_mode).sample(g)
}

fn real_band_limited(g: &Arc<Grid>, seed: u64, max_mode: i64) -> Field {
    band_limited(g, seed, max_mode).map(|v| C64::new(v.re, 0.0))
}

fn oneform_metric(g: &Arc<Grid>, seed: u64, amplitude: f64) -> MetricField {
    let bg = Background::identity(g.n());
    let a = random_pluriclosed_perturbation(g, &bg, seed, amplitude, 2.0).unwrap();
    FlowState::oneform(a.alpha, bg).unwrap().g
}

fn normal_mat(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    Mat::from_fn(n, |_, _| {
        C64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn partial_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, i in 0usize..2) {
        let g = grid(2, 8);
        let f = band_limited(&g, seed, 2);
        let h = band_limited(&g, seed ^ 1, 2);
        let (ca, cb) = (C64::new(a, 0.3), C64::new(b, -0.7));
        let lhs = f.scale(ca).add(&h.scale(cb)).unwrap().partial(i, Kind::Holo).unwrap();
        let rhs = f.partial(i, Kind::Holo).unwrap().scale(ca)
            .add(&h.partial(i, Kind::Holo).unwrap().scale(cb)).unwrap();
        prop_assert!(lhs.sup_distance(&rhs).unwrap() < 1e-12 * (1.0 + rhs.sup_abs()));
    }

    #[test]
    fn mixed_partials_commute(seed in any::<u64>(), i in 0usize..2, j in 0usize..2) {
        let g = grid(2, 8);
        let f = band_limited(&g, seed, 3);
        let a = f.partial(i, Kind::Holo).unwrap().partial(j, Kind::Antiholo).unwrap();
        let b = f.partial(j, Kind::Antiholo).unwrap().partial(i, Kind::Holo).unwrap();
        prop_assert!(a.sup_distance(&b).unwrap() < 1e-14 * (1.0 + a.sup_abs()));
    }

    #[test]
    fn derivatives_have_zero_mean(seed in any::<u64>(), i in 0usize..2, holo in any::<bool>()) {
        let g = grid(2, 8);
        let kind = if holo { Kind::Holo } else { Kind::Antiholo };
        let d = band_limited(&g, seed, 3).partial(i, kind).unwrap();
        prop_assert!(d.means()[0].norm() < 1e-13 * (1.0 + d.sup_abs()));
    }

    #[test]
    fn leibniz_on_band_limited_products(seed in any::<u64>(), i in 0usize..1) {
        let g = grid(1, 32);
        let f = band_limited(&g, seed, 4);
        let h = band_limited(&g, seed ^ 7, 4);
        let fh = f.zip_with(&h, |a, b| a * b).unwrap();
        let lhs = fh.partial(i, Kind::Holo).unwrap();
        let rhs = f.zip_with(&h.partial(i, Kind::Holo).unwrap(), |a, b| a * b).unwrap()
            .add(&h.zip_with(&f.partial(i, Kind::Holo).unwrap(), |a, b| a * b).unwrap()).unwrap();
        prop_assert!(lhs.sup_distance(&rhs).unwrap() < 1e-11 * (1.0 + rhs.sup_abs()));
    }

    #[test]
    fn laplacian_inverse_roundtrip(seed in any::<u64>()) {
        let g = grid(2, 8);
        let f = band_limited(&g, seed, 3);
        let m = f.means()[0];
        let f0 = f.map(|v| v - m);
        let (u, mean) = invert_flat_laplacian(&flat_laplacian(&f0)).unwrap();
        prop_assert!(mean.norm() < 1e-12);
        prop_assert!(u.sup_distance(&f0).unwrap() < 1e-12 * (1.0 + f0.sup_abs()));
    }

    #[test]
    fn transform_roundtrip(seed in any::<u64>(), n in 1usize..3) {
        let g = grid(n, 8);
        let f = band_limited(&g, seed, 3);
        let back = g.inverse(g.forward(f.values()));
        let e = back.iter().zip(f.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(e < 1e-13 * (1.0 + f.sup_abs()));
    }

    #[test]
    fn hermitian_dealias_matches_componentwise(seed in any::<u64>()) {
        let g = grid(2, 8);
        let m = oneform_metric(&g, seed, 0.3);
        let mut fast = m.field().comps().to_vec();
        g.dealias_hermitian(&mut fast, 2);
        let mut slow = m.field().clone();
        slow.dealias();
        for (a, b) in fast.iter().zip(slow.comps()) {
            let e = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            prop_assert!(e < 1e-14, "{e}");
        }
    }

    #[test]
    fn hermitian_spectra_match_plain(seed in any::<u64>(), n in 1usize..4) {
        let g = grid(n, if n == 3 { 8 } else { 10 });
        let m = oneform_metric(&g, seed, 0.3);
        let hats = g.forward_hermitian(m.field().comps(), n);
        for (h, c) in hats.iter().zip(m.field().comps()) {
            let plain = g.forward(c);
            let e = h.iter().zip(&plain).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            prop_assert!(e < 1e-11, "{e}");
        }
    }

    #[test]
    fn symmetrize_makes_hermitian(seed in any::<u64>()) {
        let g = grid(2, 8);
        let comps = (0..4).map(|c| band_limited(&g, seed.wrapping_add(c), 3).values().to_vec()).collect();
        let mut m = Field::matrix(&g, comps).unwrap();
        m.symmetrize();
        prop_assert!(m.hermitian_defect() <= 1e-12);
    }

    #[test]
    fn torsion_is_antisymmetric(seed in any::<u64>()) {
        let g = grid(2, 8);
        let t = chern_torsion(&oneform_metric(&g, seed, 0.2));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let a = t.comp((i * 2 + j) * 2 + k);
                    let b = t.comp((j * 2 + i) * 2 + k);
                    prop_assert!(a.iter().zip(b).all(|(x, y)| *x == -*y));
                }
            }
        }
    }

    #[test]
    fn kahler_metrics_are_torsion_free(seed in any::<u64>(), amp in 0.01f64..0.1) {
        let g = grid(2, 8);
        let f = real_band_limited(&g, seed, 2);
        let f = f.scale(C64::new(amp / (1.0 + f.sup_abs()), 0.0));
        let m = MetricField::new(
            Field::constant_matrix(&g, &Mat::identity(2)).add(&complex_hessian(&f)).unwrap(),
        ).unwrap();
        prop_assert!(chern_torsion(&m).sup_abs() < 1e-10);
    }

    #[test]
    fn q_is_psd_and_half_torsion_in_dim_two(seed in any::<u64>()) {
        let g = grid(2, 8);
        let m = oneform_metric(&g, seed, 0.3);
        let q = torsion_q(&m);
        let norms = pcflow::hermitian::torsion_norm_sq(&m);
        prop_assert!(q.hermitian_defect() < 1e-12);
        for p in 0..g.len() {
            let qm = q.mat_at(p);
            prop_assert!(qm.min_max_eigenvalues().0 > -1e-12 * (1.0 + qm.max_abs()));
            let e = qm.sub(&m.at(p).scale(C64::new(0.5 * norms[p], 0.0))).max_abs();
            prop_assert!(e < 1e-10, "{e}");
        }
    }

    #[test]
    fn s_is_hermitian(seed in any::<u64>()) {
        let g = grid(2, 8);
        let s = chern_curvature_s(&oneform_metric(&g, seed, 0.3));
        prop_assert!(s.hermitian_defect() < 1e-10 * (1.0 + s.sup_abs()));
    }

    #[test]
    fn metric_from_oneform_is_gauge_invariant(seed in any::<u64>()) {
        let g = grid(2, 8);
        let bg = Background::identity(2);
        let alpha = random_pluriclosed_perturbation(&g, &bg, seed, 0.2, 2.0).unwrap().alpha;
        let f = real_band_limited(&g, seed ^ 3, 3);
        let df = (0..2).map(|i| f.partial(i, Kind::Holo).unwrap().values().to_vec()).collect();
        let shifted = alpha.add(&Field::vector(&g, df).unwrap()).unwrap();
        let ghat = Field::constant_matrix(&g, &bg.ghat);
        let a = metric_from_oneform(&ghat, &alpha, None).unwrap();
        let b = metric_from_oneform(&ghat, &shifted, None).unwrap();
        prop_assert!(a.sup_distance(&b).unwrap() < 1e-12);
    }

    #[test]
    fn det_w_is_one_and_w_positive_iff_g(seed in any::<u64>(), n in 1usize..4, shift in -3.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_hpd(n, 0.1, || StandardNormal.sample(&mut rng));
        let g = p.add(&Mat::scaled_identity(n, shift));
        let b = normal_mat(&mut rng, n);
        let beta = b.sub(&b.transpose());
        let w = born_infeld_at(&g, &beta).unwrap();
        let scale = g.inverse().unwrap().max_abs().max(1.0) * (1.0 + beta.max_abs()).powi(2) * (1.0 + g.max_abs());
        prop_assert!((w.det() - 1.0).norm() < 1e-10 * scale.powi(n as i32), "{}", w.det());
        let g_pos = g.min_max_eigenvalues().0 > 0.0;
        let w_pos = w.hermitian_part().min_max_eigenvalues().0 > 0.0;
        prop_assert_eq!(g_pos, w_pos);
    }

    #[test]
    fn cfl_step_obeys_bound(seed in any::<u64>(), safety in 0.01f64..1.0) {
        let g = grid(2, 8);
        let m = oneform_metric(&g, seed, 0.3);
        let ctrl = StepControl { cfl_safety: safety, ..StepControl::default() };
        let dt = cfl_dt(&m, &ctrl);
        let h = g.lattice().min_spacing();
        let sup_inv = m.min_eigenvalues().iter().map(|l| 1.0 / l).fold(0.0, f64::max);
        prop_assert!(dt > 0.0);
        prop_assert!(dt <= safety * h * h / (2.0 * sup_inv) * (1.0 + 1e-14));
    }

    #[test]
    fn snapshot_bytes_roundtrip(seed in any::<u64>(), t in 0.0f64..10.0) {
        let g = grid(2, 8);
        let bg = Background::identity(2);
        let alpha = random_pluriclosed_perturbation(&g, &bg, seed, 0.2, 2.0).unwrap().alpha;
        let mut s = FlowState::oneform(alpha, bg).unwrap();
        s.t = t;
        let snap = Snapshot::of_flow(&s);
        let bytes = snap.to_bytes();
        let back = Snapshot::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.t, t);
        prop_assert_eq!(back.to_bytes(), bytes);
        let state = back.to_flow_state(&g).unwrap();
        prop_assert_eq!(state.alpha.unwrap().sup_distance(s.alpha.as_ref().unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn config_text_roundtrip(
        n in 1usize..3,
        half_size in 4usize..12,
        period in 0.5f64..10.0,
        mode in prop::sample::select(vec!["pcf-metric", "pcf-oneform", "pcf-split"]),
        euler in any::<bool>(),
        safety in 0.01f64..1.0,
        t_end in 0.01f64..20.0,
        steps in prop::option::of(1usize..1000),
        seed in any::<u64>(),
        amplitude in 0.0f64..0.5,
        sample_every in 1usize..10,
        snaps in prop::collection::vec(0.0f64..1.0, 0..4),
        check_time in 0.01f64..1.0,
        stride in 1usize..10,
    ) {
        let mut text = format!(
            "[lattice]\nn = {n}\nsizes = {}\nperiods = {period}\n\n[flow]\nmode = {mode}\nintegrator = {}\ncfl_safety = {safety}\nt_end = {t_end}\n",
            2 * half_size,
            if euler { "euler" } else { "rk4" },
        );
        if let Some(s) = steps {
            text += &format!("steps = {s}\n");
        }
        text += &format!("\n[initial]\nseed = {seed}\namplitude = {amplitude}\n\n[sampling]\nsample_every = {sample_every}\n");
        let mut snaps: Vec<f64> = snaps.iter().map(|v| v * t_end).collect();
        snaps.sort_by(f64::total_cmp);
        snaps.dedup();
        if !snaps.is_empty() {
            let list: Vec<String> = snaps.iter().map(|v| v.to_string()).collect();
            text += &format!("snapshot_times = {}\n", list.join(" "));
        }
        text += &format!("\n[diagnostics]\ncheck_time = {check_time}\ncheck_stride = {stride}\n");
        let c = parse_config(&text).unwrap();
        prop_assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }
}
