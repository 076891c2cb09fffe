use proptest::prelude::*;
use tailchain::admissible::{adjoint, is_admissible, random_admissible, same_sphere_marginal};
use tailchain::chain::{kernel_from_atoms, sample_bftc, BftcSpec};
use tailchain::diagnostics::{binomial_ci, energy_distance};
use tailchain::engine::Trajectory;
use tailchain::measures::{norm, polar, sample_pareto, AtomMeasure, TailIndex};
use tailchain::models::{Ar1Spec, RadialLaw};
use tailchain::rng;

fn alpha_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.5), Just(1.0), Just(2.0), 0.3f64..4.0]
}

fn measure(seed: u64, d: usize, n: usize, a: f64) -> AtomMeasure {
    random_admissible(d, n, TailIndex::new(a).unwrap(), &mut rng::master(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn adjoint_is_an_involution(seed in any::<u64>(), d in 1usize..=3, n in 1usize..=20, a in alpha_strategy()) {
        let p = measure(seed, d, n, a);
        let al = TailIndex::new(a).unwrap();
        let star = adjoint(&p, al).unwrap();
        prop_assert!(adjoint(&star, al).unwrap().approx_eq(&p, 1e-10));
    }

    #[test]
    fn adjoint_keeps_sphere_marginal_and_admissibility(seed in any::<u64>(), d in 1usize..=3, n in 1usize..=20, a in alpha_strategy()) {
        let p = measure(seed, d, n, a);
        let al = TailIndex::new(a).unwrap();
        let star = adjoint(&p, al).unwrap();
        prop_assert!(same_sphere_marginal(&p, &star));
        prop_assert!(is_admissible(&star, al).unwrap().admissible);
        prop_assert!((star.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_form_is_idempotent(seed in any::<u64>(), d in 1usize..=3, n in 1usize..=20) {
        let p = measure(seed, d, n, 1.0);
        let again = AtomMeasure::canonicalize(d, p.atoms().to_vec()).unwrap();
        prop_assert_eq!(&again, &p);
        let json = AtomMeasure::from_json_str(&p.to_json_string()).unwrap();
        prop_assert!(json.approx_eq(&p, 0.0));
    }

    #[test]
    fn polar_reconstructs(v in prop::collection::vec(-1e6f64..1e6, 1..5)) {
        prop_assume!(norm(&v) > 1e-9);
        let (u, r) = polar(&v).unwrap();
        prop_assert!((norm(u.coords()) - 1.0).abs() < 1e-12);
        for (x, y) in v.iter().zip(u.scale(r)) {
            prop_assert!((x - y).abs() <= 1e-9 * r);
        }
    }

    #[test]
    fn pareto_tail(u in 1e-12f64..=1.0, a in 0.2f64..5.0) {
        let al = TailIndex::new(a).unwrap();
        let y = sample_pareto(al, u).unwrap();
        prop_assert!(y >= 1.0);
        // Pr(Y > y) = u for the inverse-CDF draw
        prop_assert!((y.powf(-a) - u).abs() < 1e-9);
    }

    #[test]
    fn tail_chain_zero_is_absorbing(seed in any::<u64>(), d in 1usize..=2, n in 1usize..=10) {
        let p = measure(seed, d, n, 1.0);
        let kernel = kernel_from_atoms(&p).unwrap();
        let spec = BftcSpec::from_atomic_forward(
            TailIndex::new(1.0).unwrap(),
            &p.sphere_marginal(),
            kernel.as_atomic().unwrap(),
        ).unwrap();
        let mut r = rng::master(seed ^ 0x5eed);
        for _ in 0..20 {
            let path = sample_bftc(&spec, 4, 4, &mut r).unwrap();
            let zero = |k: isize| path.at(k).iter().all(|x| *x == 0.0);
            for k in 1..4isize {
                prop_assert!(!zero(k) || zero(k + 1));
                prop_assert!(!zero(-k) || zero(-k - 1));
            }
            prop_assert_eq!(path.time_reversed().time_reversed(), path.clone());
        }
    }

    #[test]
    fn kernel_step_is_homogeneous(seed in any::<u64>(), c in 0.01f64..100.0) {
        let p = measure(seed, 2, 8, 1.0);
        let kernel = kernel_from_atoms(&p).unwrap();
        let (u, _) = p.sphere_marginal()[0].clone();
        let x = u.scale(1.0);
        let y = kernel.step(&x, &mut rng::master(seed)).unwrap();
        let cy = kernel.step(&u.scale(c), &mut rng::master(seed)).unwrap();
        for (a, b) in y.iter().zip(&cy) {
            prop_assert!((c * a - b).abs() <= 1e-10 * c.max(1.0) * (1.0 + a.abs()));
        }
    }

    #[test]
    fn energy_distance_is_a_symmetric_nonnegative_statistic(
        x in prop::collection::vec(prop::collection::vec(-10f64..10.0, 2), 1..30),
        y in prop::collection::vec(prop::collection::vec(-10f64..10.0, 2), 1..30),
    ) {
        let e = energy_distance(&x, &y).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!((e - energy_distance(&y, &x).unwrap()).abs() < 1e-9);
        prop_assert!(energy_distance(&x, &x).unwrap() < 1e-12);
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(trials in 1u64..10_000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let k = (frac * trials as f64).floor() as u64;
        let (lo, hi) = binomial_ci(k, trials, level);
        let p = k as f64 / trials as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn trajectory_bytes_round_trip(d in 1usize..4, rows in prop::collection::vec(any::<f64>(), 0..40)) {
        let n = rows.len() / d;
        let t = Trajectory::from_flat(d, rows[..n * d].to_vec()).unwrap();
        let back = Trajectory::from_le_bytes(d, &t.to_le_bytes()).unwrap();
        prop_assert_eq!(back.as_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        t.as_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn scalar_ar1_mixture_weights(a in -0.95f64..0.95, al in 0.3f64..3.0) {
        prop_assume!(a.abs() > 1e-3);
        let spec = Ar1Spec::scalar(a, TailIndex::new(al).unwrap()).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        // symmetric sign law: c_n = |a|^{αn}, so p_0 = 1 - |a|^α
        let rho = a.abs().powf(al);
        prop_assert!((dec.p[0] - (1.0 - rho)).abs() < 1e-12);
        prop_assert!((dec.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(dec.p.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lognormal_unit_moment(sigma in 0.05f64..2.0, al in 0.2f64..4.0) {
        let law = RadialLaw::lognormal_unit_moment(sigma, TailIndex::new(al).unwrap()).unwrap();
        prop_assert!((law.moment(al) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_streams_reproduce(seed in any::<u64>(), id in any::<u64>()) {
        let mut a = rng::split(seed, id);
        let mut b = rng::split(seed, id);
        for _ in 0..8 {
            prop_assert_eq!(rng::unit(&mut a).to_bits(), rng::unit(&mut b).to_bits());
        }
    }
}
