//! Property tests for structural invariants of the coupled-dipole model.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;

use coopoptics::geometry::Geometry;
use coopoptics::infinite::{lattice_sums, UniformMode, DEFAULT_ETA};
use coopoptics::kernel::LevelScheme;
use coopoptics::linalg::{eigh, CMat, CVec};
use coopoptics::lli::LliSystem;
use coopoptics::observables::{rate_by_quadrature, rt_beyond_lli, scattering_rates};
use coopoptics::quantum::g2_analytic;
use coopoptics::rng::{seed_streams, stream};
use coopoptics::semiclassical::uniform_steady_state;
use coopoptics::{rabi_for_intensity, C64, LAMBDA};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn positions(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = stream(seed, 0);
    let mut out: Vec<[f64; 3]> = Vec::new();
    while out.len() < n {
        let p = [0, 1, 2].map(|_| rng.gen_range(-0.75..0.75) * LAMBDA);
        let far = out.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)) > 1e-2);
        if far {
            out.push(p);
        }
    }
    out
}

fn scheme(zero_to_one: bool) -> LevelScheme {
    if zero_to_one {
        LevelScheme::ZeroToOne
    } else {
        LevelScheme::two_level([0.3, 1.0, -0.2])
    }
}

fn max_dev(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn random_psd(m: usize, seed: u64) -> CMat {
    let mut rng = stream(seed, 1);
    let a = CMat::from_shape_fn((m, m), |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    a.t().mapv(|x| x.conj()).dot(&a)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coupling_is_hermitian_and_gamma_psd(n in 1usize..6, seed in any::<u64>(), zo in any::<bool>()) {
        let sys = LliSystem::new(Geometry::new(positions(n, seed)).unwrap(), scheme(zo)).unwrap();
        let om = &sys.coupling.omega;
        let ga = &sys.coupling.gamma;
        prop_assert!(max_dev(om, &om.t().mapv(|x| x.conj())) < 1e-12);
        prop_assert!(max_dev(ga, &ga.t().mapv(|x| x.conj())) < 1e-12);
        let (w, _) = eigh(ga).unwrap();
        prop_assert!(w.iter().all(|x| *x > -1e-10), "γ eigenvalues {:?}", w);
        for k in 0..sys.dim() {
            prop_assert!((ga[[k, k]] - c(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn rate_formula_matches_quadrature(n in 1usize..4, seed in any::<u64>(), zo in any::<bool>()) {
        let sys = LliSystem::new(Geometry::new(positions(n, seed)).unwrap(), scheme(zo)).unwrap();
        let corr = random_psd(sys.dim(), seed);
        let f = scattering_rates(&sys.coupling.gamma, &corr, &CVec::zeros(sys.dim()), sys.channels_per_atom())
            .unwrap()
            .total;
        let q = rate_by_quadrature(&sys.geometry.positions, &sys.channels, &corr, 48, 96).unwrap();
        assert_relative_eq!(f, q, max_relative = 1e-6);
    }

    #[test]
    fn uniform_solutions_close_the_energy_budget(
        a in 0.08f64..0.9,
        delta in -50.0f64..20.0,
        log_i in -2.0f64..3.0,
    ) {
        let m = UniformMode::from_lattice(a * LAMBDA, [0.0, 1.0, 0.0]).unwrap();
        let rabi = c(rabi_for_intensity(10f64.powf(log_i)), 0.0);
        let sols = uniform_steady_state(delta, rabi, m.omega, m.gamma).unwrap();
        prop_assert!(!sols.is_empty());
        for s in &sols {
            let rep = rt_beyond_lli(delta, m.omega, m.gamma, rabi, s).unwrap();
            prop_assert!(rep.residual.abs() < 1e-10, "residual {}", rep.residual);
        }
    }

    #[test]
    fn steady_state_is_linear_in_the_drive(
        n in 1usize..6,
        seed in any::<u64>(),
        zo in any::<bool>(),
        delta in -3.0f64..3.0,
        alpha in -2.0f64..2.0,
    ) {
        let mut sys = LliSystem::new(Geometry::new(positions(n, seed)).unwrap(), scheme(zo)).unwrap();
        sys.set_detuning(delta);
        let m = sys.dim();
        let mut rng = stream(seed, 2);
        let mut draw = || CVec::from_shape_fn(m, |_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let (r1, r2) = (draw(), draw());
        let k = c(alpha, 0.5);
        let combined = sys.steady_state(&(&r1.mapv(|x| x * k) + &r2)).unwrap();
        let separate = &sys.steady_state(&r1).unwrap().mapv(|x| x * k) + &sys.steady_state(&r2).unwrap();
        let scale = separate.iter().map(|x| x.norm()).fold(1.0, f64::max);
        let dev = (&combined - &separate).iter().map(|x| x.norm()).fold(0.0, f64::max);
        prop_assert!(dev < 1e-10 * scale, "deviation {}", dev);
    }

    #[test]
    fn seed_streams_are_deterministic(master in any::<u64>(), n in 1usize..8) {
        let draw = |m| -> Vec<u64> { seed_streams(m, n).iter_mut().map(|r| r.gen()).collect() };
        let a = draw(master);
        prop_assert_eq!(&a, &draw(master));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n);
    }

    #[test]
    fn g2_limits(i_ratio in 1e-3f64..20.0, linewidth in 0.2f64..3.0) {
        prop_assert!(g2_analytic(0.0, i_ratio, linewidth).abs() < 1e-14);
        prop_assert!((g2_analytic(60.0 / linewidth, i_ratio, linewidth) - 1.0).abs() < 1e-8);
        // time enters only through γτ
        assert_relative_eq!(
            g2_analytic(1.3 / linewidth, i_ratio, linewidth),
            g2_analytic(1.3, i_ratio, 1.0),
            max_relative = 1e-12
        );
    }

    #[test]
    fn subwavelength_linewidth_is_analytic(a in 0.2f64..0.95) {
        let a = a * LAMBDA;
        let s = lattice_sums(a, [0.0, 0.0], DEFAULT_ETA * a, None).unwrap();
        assert_relative_eq!(1.0 + s.gamma[1][1], 3.0 * PI / (a * a), max_relative = 1e-4);
        assert_relative_eq!(1.0 + s.gamma[2][2], 3.0 * PI / (a * a), max_relative = 1e-4);
    }
}
