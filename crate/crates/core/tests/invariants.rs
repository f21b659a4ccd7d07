use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opinfer::complexity::{evaluate_conditions, pair_counts, PacConfig};
use opinfer::harness::{random_feasible_system, SystemSampler};
use opinfer::inference::{exact_estimate, infer, DEFAULT_TOL_S};
use opinfer::model::{
    build_regime, closed_form_state, feasibility_check, random_state, simulate_with_rng, step, NoiseSpec, Regime,
    Schedule,
};

fn sampled(n: usize, seed: u64, chi: f64, sigma_p: f64) -> opinfer::model::SocialSystem {
    let sampler = SystemSampler {
        chi,
        noise: NoiseSpec {
            sigma_p,
            ..NoiseSpec::noiseless()
        },
        ..SystemSampler::default()
    };
    random_feasible_system(n, &sampler, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regime_model_equals_nonlinear_step(n in 1usize..8, seed in any::<u64>(), xs in prop::collection::vec(-1.0f64..=1.0, 8)) {
        let sys = sampled(n, seed, 0.0, 0.0);
        let x = DVector::from_iterator(n, xs.into_iter().take(n));
        for regime in Regime::BOTH {
            let lin = build_regime(&sys, regime).unwrap().apply(&x);
            let nl = step(&sys, &x, &[regime.opinion()], &DVector::zeros(n)).unwrap();
            prop_assert!((lin - nl).amax() <= 1e-12);
        }
    }

    #[test]
    fn feasible_systems_stay_in_the_unit_box(n in 1usize..7, seed in any::<u64>(), lens in prop::collection::vec(1usize..20, 1..6)) {
        let sys = sampled(n, seed, 0.05, 0.5);
        prop_assert!(feasibility_check(&sys).passed());
        let blocks = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| (if i % 2 == 0 { Regime::Minus } else { Regime::Plus }, l))
            .collect();
        let schedule = Schedule::new(blocks).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let traj = simulate_with_rng(&sys, &schedule, &random_state(n, &mut rng), &mut rng).unwrap();
        for x in &traj.x {
            prop_assert!(x.amax() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_recursion(n in 1usize..6, seed in any::<u64>(), minus in 0usize..12, plus in 1usize..12) {
        let sys = sampled(n, seed, 0.05, 0.03);
        let schedule = Schedule::minus_then_plus(minus, plus).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
        let traj = simulate_with_rng(&sys, &schedule, &random_state(n, &mut rng), &mut rng).unwrap();
        for j in 1..=traj.len() {
            let y = closed_form_state(&sys, &schedule, j, &traj).unwrap();
            prop_assert!((y - &traj.y[j - 1]).amax() <= 1e-10);
        }
    }

    #[test]
    fn exact_inference_inverts_linearization(n in 2usize..8, seed in any::<u64>()) {
        let sys = sampled(n, seed, 0.0, 0.0);
        let sol = infer(&exact_estimate(&sys).unwrap(), DEFAULT_TOL_S).unwrap();
        prop_assert!(sol.all_ok());
        prop_assert!((sol.w_matrix() - &sys.w).amax() <= 1e-9);
        prop_assert!((sol.s_vector() - &sys.s).amax() <= 1e-9);
    }

    #[test]
    fn pair_counts_match_enumeration(k in 1usize..20, len in 1usize..25, n in 1usize..6) {
        let p = k + len;
        let counts = pair_counts(k, p, n).unwrap();
        // pairs (g, j) whose shifted partner (g + 1, j + 1) stays inside the window
        let pairs = (k..=p - 2).flat_map(|g| (g + 1..=p - 1).map(move |j| (g, j))).count() as u64;
        let l_hat: i64 = (1..len as i64).map(|i| (len as i64 - i) * (p as i64 - 1 - i)).sum();
        prop_assert_eq!(counts.l, pairs * n as u64);
        prop_assert_eq!(counts.l_hat, l_hat as u64 * n as u64);
    }

    #[test]
    fn conditions_are_finite(k in 1usize..50, len in 3usize..200, n in 1usize..30) {
        let r = evaluate_conditions(k, k + len - 1, n, &PacConfig::default()).unwrap();
        prop_assert!(r.lhs33.is_finite() && r.rhs33.is_finite() && r.rhs34.is_finite());
        prop_assert!(r.cov_norm >= 0.0);
    }
}
