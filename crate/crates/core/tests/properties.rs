use geonet::chart_refine::{simplex_grid, squared_distance_q};
use geonet::net_estimators::{beta1, psi1};
use geonet::observation::observe_pair;
use geonet::rng::{pair_stream, Purpose};
use geonet::{
    derive_parameters_with, generate_observations, model_bounds, refine, run_pipeline, sample_points, CoarseNet,
    CutoffFns, DensitySpec, GatePolicy, ManifoldModel, MaskSpec, NetSplit, NoiseSpec, RefineConfig, RefinedPoint,
    RefinementScales,
};
use proptest::prelude::*;
use rand::Rng;

fn sphere_point() -> impl Strategy<Value = Vec<f64>> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        vec![r * phi.cos(), r * phi.sin(), z]
    })
}

fn torus_point() -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..1.0, 0.0f64..0.5).prop_map(|(a, b)| vec![a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pair_streams_ignore_order(seed: u64, i in 0usize..100_000, j in 0usize..100_000) {
        let a: u64 = pair_stream(seed, Purpose::Noise, i, j).gen();
        let b: u64 = pair_stream(seed, Purpose::Noise, j, i).gen();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sphere_distance_is_a_metric(x in sphere_point(), y in sphere_point(), z in sphere_point()) {
        let m = ManifoldModel::sphere(2, 1.0);
        let (dxy, dyz, dxz) = (m.distance(&x, &y), m.distance(&y, &z), m.distance(&x, &z));
        prop_assert!((dxy - m.distance(&y, &x)).abs() < 1e-12);
        prop_assert!(dxz <= dxy + dyz + 1e-12);
        prop_assert!((0.0..=m.diameter() + 1e-12).contains(&dxy));
    }

    #[test]
    fn torus_distance_is_a_metric(x in torus_point(), y in torus_point(), z in torus_point()) {
        let m = ManifoldModel::flat_torus(&[1.0, 0.5]);
        let (dxy, dyz, dxz) = (m.distance(&x, &y), m.distance(&y, &z), m.distance(&x, &z));
        prop_assert!((dxy - m.distance(&y, &x)).abs() < 1e-12);
        prop_assert!(dxz <= dxy + dyz + 1e-12);
        prop_assert!(dxy <= m.diameter() + 1e-12);
    }

    #[test]
    fn exp_inverts_log_away_from_the_cut_locus(x in sphere_point(), y in sphere_point()) {
        let m = ManifoldModel::sphere(2, 1.0);
        prop_assume!(m.distance(&x, &y) < 3.0);
        let back = m.exp_map(&x, &m.log_map(&x, &y));
        prop_assert!(m.distance(&back, &y) < 1e-9);
    }

    #[test]
    fn observations_are_symmetric_and_exact_without_noise(
        seed: u64, x in sphere_point(), y in sphere_point(), i in 0usize..1000, j in 0usize..1000,
    ) {
        prop_assume!(i != j);
        let m = ManifoldModel::sphere(2, 1.0);
        let noise = NoiseSpec::gaussian(0.1);
        let mask = MaskSpec::exponential(0.8, 2.0);
        prop_assert_eq!(
            observe_pair(&m, &x, &y, &noise, &mask, seed, i, j),
            observe_pair(&m, &y, &x, &noise, &mask, seed, j, i)
        );
        let exact = observe_pair(&m, &x, &y, &NoiseSpec::None, &MaskSpec::constant(1.0), seed, i, j);
        prop_assert_eq!(exact, Some(m.distance(&x, &y)));
    }

    #[test]
    fn cutoffs_stay_in_the_unit_interval(t in -10.0f64..10.0, s in -10.0f64..10.0) {
        prop_assert!((0.0..=1.0).contains(&psi1(t)));
        prop_assert!((psi1(t) + beta1(t) - 1.0).abs() < 1e-15);
        if t.abs() <= s.abs() {
            prop_assert!(psi1(t) >= psi1(s));
        }
    }

    /// Every barycentric point is within `ε′` of the grid.
    #[test]
    fn simplex_grid_is_eps_dense(raw in prop::collection::vec(0.0f64..1.0, 3), eps in 0.1f64..0.5) {
        let n = 2;
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-6);
        let w: Vec<f64> = raw.iter().take(n).map(|r| r / total).collect();
        let (m, grid) = simplex_grid(n, eps).unwrap();
        prop_assert!(grid.iter().all(|g| g.iter().sum::<u32>() as usize <= m));
        let best = grid
            .iter()
            .map(|g| g.iter().zip(&w).map(|(&k, &x)| (k as f64 / m as f64 - x).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= eps, "nearest grid point at {best}");
    }

    /// On exact planar distances `Q` is the squared distance between barycentres.
    #[test]
    fn q_matches_euclidean_barycentres(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 5),
        tx in prop::collection::vec(0u32..4, 2),
        ty in prop::collection::vec(0u32..4, 2),
    ) {
        let n = pts.len();
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        let d = |i: usize, j: usize| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
        let net = CoarseNet::from_pairs(n, 100.0, pairs.map(|(i, j)| (i, j, d(i, j)))).unwrap();
        let scales = RefinementScales::new(1e-3, 10.0, 2).unwrap();
        let x_p: Vec<usize> = (0..n).collect();
        let grid_m = 8;
        let x = RefinedPoint::new(&net, 0, vec![1, 2], tx, grid_m, &x_p).unwrap();
        let y = RefinedPoint::new(&net, 1, vec![3, 4], ty, grid_m, &x_p).unwrap();
        let bary = |p: &RefinedPoint| {
            p.weights().iter().fold((0.0, 0.0), |acc, &(a, w)| (acc.0 + w * pts[a].0, acc.1 + w * pts[a].1))
        };
        let (bx, by) = (bary(&x), bary(&y));
        let expect = (bx.0 - by.0).powi(2) + (bx.1 - by.1).powi(2);
        let q = squared_distance_q(&net, &scales, &x, &y).unwrap();
        prop_assert!((q - expect).abs() < 1e-10, "Q = {q}, expected {expect}");
        prop_assert!(squared_distance_q(&net, &scales, &x, &x).unwrap().abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn dapp_is_symmetric_and_bounded(seed: u64, phi0 in 0.3f64..1.0, sigma in 0.0f64..0.05) {
        let model = ManifoldModel::flat_torus(&[1.0, 1.0]);
        let split = NetSplit::new(12, 40, 60).unwrap();
        let samples = sample_points(&model, split.total(), DensitySpec::Uniform, seed).unwrap();
        let noise = NoiseSpec::gaussian(sigma);
        let mask = MaskSpec::constant(phi0).with_h(1.0);
        let obs = generate_observations(&model, &samples, &noise, &mask, seed).unwrap();
        let ledger = derive_parameters_with(&model_bounds(&model), &mask, &noise, 0.2, 0.2, 0.1, 0.35, GatePolicy::Report)
            .unwrap();
        let table = run_pipeline(&obs, &split, &ledger, &CutoffFns::from_ledger(&ledger), None).unwrap();
        let dapp = &table.dapp;
        for i in 0..dapp.len() {
            prop_assert_eq!(dapp.get(i, i), 0.0);
            for j in 0..dapp.len() {
                prop_assert_eq!(dapp.get(i, j), dapp.get(j, i));
                prop_assert!((0.0..=model.diameter()).contains(&dapp.get(i, j)));
            }
        }
    }

    /// Refined distances are symmetric, nonnegative and capped at `r̂`, and
    /// `Q(x, x)` vanishes, on jittered grid data. The jitter stays small enough
    /// for this coarse grid to offer a basis.
    #[test]
    fn refined_distances_are_symmetric_and_capped(seed: u64, jitter in 0.0f64..2e-4) {
        let model = ManifoldModel::flat_torus(&[0.3, 0.3]);
        let side = 30;
        let h = 0.3 / side as f64;
        let n = side * side;
        let pos = |i: usize| vec![(i % side) as f64 * h, (i / side) as f64 * h];
        let pairs: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                let e = pair_stream(seed, Purpose::Perturb, i, j).gen_range(-1.0..=1.0) * jitter;
                (i, j, (model.distance(&pos(i), &pos(j)) + e).max(0.0))
            })
            .collect();
        let net = CoarseNet::from_pairs(n, 0.35, pairs).unwrap();
        let scales = RefinementScales::new(1e-3, 0.31, 2).unwrap();
        let cfg = RefineConfig { active: Some(vec![0, 31]), budget: 30, seed, gate: GatePolicy::Report, ..RefineConfig::new(scales) };
        let r = refine(&net, &cfg).unwrap();
        let r_hat = scales.r_hat;
        for x in (0..r.len()).step_by(7) {
            prop_assert!(r.q(&net, x, x).unwrap().abs() < 1e-12);
            for y in (0..r.len()).step_by(5) {
                let d = r.dtilde(x, y);
                prop_assert_eq!(d, r.dtilde(y, x));
                prop_assert!((0.0..=r_hat).contains(&d));
            }
        }
    }
}
