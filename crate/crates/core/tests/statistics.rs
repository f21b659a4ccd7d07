//! Monte Carlo checks with fixed seeds.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opinfer::estimator::{build_matrices, estimate, gram, segments_from_trajectory};
use opinfer::harness::{random_feasible_system, round_trip_experiment, wilson_lower, SystemSampler};
use opinfer::inference::exact_estimate;
use opinfer::linalg::{spectral_norm, symmetric_eigen_range};
use opinfer::model::{random_state, simulate_with_rng, NoiseSpec, Regime, Schedule};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn matrix_error(len: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = SystemSampler {
        chi: 0.05,
        noise: NoiseSpec {
            sigma_p: 0.02,
            ..NoiseSpec::noiseless()
        },
        ..SystemSampler::default()
    };
    let sys = random_feasible_system(3, &sampler, &mut rng).unwrap();
    let traj = simulate_with_rng(&sys, &Schedule::minus_then_plus(len, len).unwrap(), &random_state(3, &mut rng), &mut rng)
        .unwrap();
    let est = estimate(&segments_from_trajectory(&traj)).unwrap();
    let truth = exact_estimate(&sys).unwrap();
    spectral_norm(&(&est.matrix_minus - &truth.matrix_minus))
}

#[test]
fn matrix_error_shrinks_with_dwell() {
    let lens = [12, 24, 48, 96, 192];
    let medians: Vec<f64> = lens
        .iter()
        .map(|&len| median((0..50).map(|t| matrix_error(len, 1000 + t)).collect()))
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "medians {medians:?}");
    }
    assert!(medians[4] < medians[0] / 2.0, "medians {medians:?}");
}

#[test]
fn observation_bias_moves_into_the_offset_only() {
    let mu = 0.03;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let base = random_feasible_system(3, &SystemSampler::default(), &mut rng).unwrap();
    let mut biased = base.clone();
    biased.noise = NoiseSpec {
        mu_o: mu,
        ..NoiseSpec::noiseless()
    };
    let schedule = Schedule::minus_then_plus(15, 15).unwrap();
    let x1 = random_state(3, &mut rng);
    let clean = estimate(&segments_from_trajectory(
        &simulate_with_rng(&base, &schedule, &x1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(),
    ))
    .unwrap();
    let shifted = estimate(&segments_from_trajectory(
        &simulate_with_rng(&biased, &schedule, &x1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(),
    ))
    .unwrap();
    assert!((&shifted.matrix_plus - &clean.matrix_plus).amax() < 1e-9);
    let n = 3;
    let expected = (nalgebra::DMatrix::identity(n, n) - &clean.matrix_plus) * DVector::from_element(n, mu);
    assert!((&shifted.offset_plus - &clean.offset_plus - expected).amax() < 1e-9);
}

#[test]
fn round_trip_error_grows_with_observation_noise() {
    let sigmas = [0.0, 1e-4, 1e-3, 1e-2];
    let medians: Vec<f64> = sigmas
        .iter()
        .map(|&s| {
            median(
                (0..30)
                    .map(|seed| round_trip_experiment(3, seed, s).unwrap().matrix_error)
                    .collect(),
            )
        })
        .collect();
    assert!(medians[0] < 1e-8, "medians {medians:?}");
    for w in medians.windows(2) {
        assert!(w[1] >= w[0], "medians {medians:?}");
    }
}

#[test]
fn gram_matrix_is_symmetric_positive_semidefinite() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampler = SystemSampler {
            noise: NoiseSpec {
                sigma_o: 0.01,
                ..NoiseSpec::noiseless()
            },
            ..SystemSampler::default()
        };
        let sys = random_feasible_system(4, &sampler, &mut rng).unwrap();
        let traj = simulate_with_rng(&sys, &"-1:9,+1:7,-1:6".parse().unwrap(), &random_state(4, &mut rng), &mut rng)
            .unwrap();
        let segs = segments_from_trajectory(&traj);
        for regime in Regime::BOTH {
            let own: Vec<_> = segs.iter().filter(|s| s.regime == regime).cloned().collect();
            let g = gram(&build_matrices(&own, regime).unwrap());
            assert!((&g - g.transpose()).amax() <= 1e-12 * g.amax().max(1.0));
            let (lo, hi) = symmetric_eigen_range(&g);
            assert!(lo >= -1e-12 * hi, "eigenvalues {lo} .. {hi}");
        }
    }
}

#[test]
fn wilson_bound_matches_reference_values() {
    assert!((wilson_lower(200, 200, 1.96) - 0.981_155).abs() < 1e-5);
    assert!((wilson_lower(90, 100, 1.96) - 0.825_633).abs() < 1e-5);
    assert!(wilson_lower(0, 10, 1.96).abs() < 1e-12);
}
