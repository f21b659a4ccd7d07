//! Synthetic experiments: random feasible systems, estimate-then-infer round
//! trips, Monte Carlo checks of the dwell-time bound and boundedness runs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::complexity::{min_dwell, Dwell, PacConfig, DEFAULT_P_MAX};
use crate::error::{Error, Result};
use crate::estimator::{estimate, segments_from_trajectory};
use crate::inference::{exact_estimate, infer, InferenceSolution, DEFAULT_TOL_S};
use crate::linalg::spectral_norm;
use crate::model::{
    build_regime, random_state, simulate_with_rng, NoiseSpec, Regime, Schedule, SocialSystem,
};

/// Knobs for [`random_feasible_system`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemSampler {
    /// Range of the influence row sums.
    pub row_sum: (f64, f64),
    /// Smallest `|s_i|`.
    pub s_min: f64,
    /// Process-noise bound given to every individual.
    pub chi: f64,
    pub noise: NoiseSpec,
}

impl Default for SystemSampler {
    fn default() -> Self {
        SystemSampler {
            row_sum: (0.3, 0.8),
            s_min: 0.05,
            chi: 0.0,
            noise: NoiseSpec::noiseless(),
        }
    }
}

/// Draws a system with one source whose every row passes the feasibility
/// check: `sum_j w_ij + 2 eps_i + 2 eta_i + chi <= 1`.
pub fn random_feasible_system<R: Rng + ?Sized>(n: usize, sampler: &SystemSampler, rng: &mut R) -> Result<SocialSystem> {
    if n == 0 {
        return Err(Error::Config("network size must be at least 1".into()));
    }
    let (lo, hi) = sampler.row_sum;
    if !(0.0 < lo && lo <= hi && hi + sampler.chi < 1.0) {
        return Err(Error::Config(format!("row-sum range {lo}..{hi} with chi {} leaves no room", sampler.chi)));
    }
    let mut w = DMatrix::zeros(n, n);
    let mut eps = DVector::zeros(n);
    let mut eta = DVector::zeros(n);
    for i in 0..n {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let target = rng.random_range(lo..=hi);
        for j in 0..n {
            w[(i, j)] = raw[j] / total * target;
        }
        // spare budget shared by 2 eps + 2 eta, with a little slack
        let spare = (1.0 - target - sampler.chi) * 0.95 / 2.0;
        let split = rng.random_range(0.0..=1.0);
        let used = rng.random_range(0.2..=1.0) * spare;
        eps[i] = used * split;
        eta[i] = used * (1.0 - split);
    }
    let s = DVector::from_fn(n, |_, _| {
        let mag = rng.random_range(sampler.s_min..=1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    SocialSystem::new(1, w, s, eps, eta, DVector::from_element(n, sampler.chi), sampler.noise)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTripReport {
    pub n: usize,
    pub seed: u64,
    pub attempts: usize,
    pub segment_len: usize,
    pub matrix_error: f64,
    pub offset_error: f64,
    pub w_error: f64,
    pub s_error: f64,
    pub eps_error: f64,
    pub eta_error: f64,
    pub flagged_rows: Vec<usize>,
}

impl RoundTripReport {
    pub fn max_parameter_error(&self) -> f64 {
        [self.w_error, self.s_error, self.eps_error, self.eta_error]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn max_err(got: &DVector<f64>, want: &DVector<f64>, skip: &[usize]) -> f64 {
    (0..want.len())
        .filter(|i| !skip.contains(i))
        .map(|i| (got[i] - want[i]).abs())
        .fold(0.0, f64::max)
}

/// Compares an inference result with the generating system, skipping flagged rows.
pub fn parameter_errors(sol: &InferenceSolution, sys: &SocialSystem) -> (f64, f64, f64, f64) {
    let skip = sol.flagged_rows();
    let w = sol.w_matrix();
    let w_err = (0..sys.n())
        .filter(|i| !skip.contains(i))
        .flat_map(|i| (0..sys.n()).map(move |j| (i, j)))
        .map(|(i, j)| (w[(i, j)] - sys.w[(i, j)]).abs())
        .fold(0.0, f64::max);
    (
        w_err,
        max_err(&sol.s_vector(), &sys.s, &skip),
        max_err(&sol.eps_vector(), &sys.eps, &skip),
        max_err(&sol.eta_vector(), &sys.eta, &skip),
    )
}

/// Samples a system with no process-noise bound and `|s_i| >= 0.05`,
/// simulates a `-1` block then a `+1` block, estimates both regimes and
/// runs inference. Rank failures trigger a fresh draw, at most five times.
pub fn round_trip_experiment(n: usize, seed: u64, sigma_o: f64) -> Result<RoundTripReport> {
    if n < 2 {
        return Err(Error::Config("round trip needs n >= 2".into()));
    }
    let sampler = SystemSampler {
        noise: NoiseSpec {
            sigma_o,
            ..NoiseSpec::noiseless()
        },
        ..SystemSampler::default()
    };
    let segment_len = 3 * n + 6;
    let schedule = Schedule::minus_then_plus(segment_len, segment_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for attempt in 1..=5 {
        let sys = random_feasible_system(n, &sampler, &mut rng)?;
        let x1 = random_state(n, &mut rng);
        let traj = simulate_with_rng(&sys, &schedule, &x1, &mut rng)?;
        let est = match estimate(&segments_from_trajectory(&traj)) {
            Ok(e) => e,
            Err(e @ Error::RankDeficient { .. }) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let truth = exact_estimate(&sys)?;
        let sol = infer(&est, DEFAULT_TOL_S)?;
        let (w_error, s_error, eps_error, eta_error) = parameter_errors(&sol, &sys);
        return Ok(RoundTripReport {
            n,
            seed,
            attempts: attempt,
            segment_len,
            matrix_error: spectral_norm(&(&est.matrix_plus - &truth.matrix_plus))
                .max(spectral_norm(&(&est.matrix_minus - &truth.matrix_minus))),
            offset_error: (&est.offset_plus - &truth.offset_plus)
                .norm()
                .max((&est.offset_minus - &truth.offset_minus).norm()),
            w_error,
            s_error,
            eps_error,
            eta_error,
            flagged_rows: sol.flagged_rows(),
        });
    }
    Err(last_err.unwrap_or_else(|| Error::Config("round trip failed".into())))
}

/// Lower end of the Wilson score interval for a binomial proportion.
pub fn wilson_lower(successes: usize, trials: usize, z: f64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (centre - spread) / (1.0 + z2 / n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacReport {
    pub n: usize,
    pub trials: usize,
    pub dwell_minus: Dwell,
    pub dwell_plus: Dwell,
    pub success_minus: usize,
    pub success_plus: usize,
    /// Trials whose estimate failed outright (counted as misses).
    pub estimation_failures: usize,
    pub target: f64,
    pub lower_minus: f64,
    pub lower_plus: f64,
}

impl PacReport {
    pub fn fraction(&self, regime: Regime) -> f64 {
        let s = match regime {
            Regime::Minus => self.success_minus,
            Regime::Plus => self.success_plus,
        };
        s as f64 / self.trials as f64
    }

    /// Both Wilson lower bounds exceed `1 - delta`.
    pub fn certified(&self) -> bool {
        self.lower_minus > self.target && self.lower_plus > self.target
    }
}

/// Draws one feasible system from `seed` whose noise matches `cfg`, computes
/// the dwell time of each block and runs `trials` independent
/// simulate-then-estimate runs, each with its own random stream.
pub fn pac_experiment(n: usize, cfg: &PacConfig, chi: f64, trials: usize, seed: u64) -> Result<PacReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let dwell_minus = min_dwell(n, cfg, 1, DEFAULT_P_MAX)?;
    let dwell_plus = min_dwell(n, cfg, dwell_minus.p + 1, DEFAULT_P_MAX)?;
    let schedule = Schedule::minus_then_plus(dwell_minus.tau, dwell_plus.tau)?;

    let sampler = SystemSampler {
        chi,
        noise: NoiseSpec {
            sigma_p: cfg.sigma_p,
            sigma_o: cfg.sigma_o,
            mu_o: 0.0,
            seed,
        },
        ..SystemSampler::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = random_feasible_system(n, &sampler, &mut rng)?;
    let truth_plus = build_regime(&sys, Regime::Plus)?.matrix;
    let truth_minus = build_regime(&sys, Regime::Minus)?.matrix;

    let outcomes: Vec<Option<(bool, bool)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let x1 = random_state(n, &mut rng);
            let traj = simulate_with_rng(&sys, &schedule, &x1, &mut rng).ok()?;
            let est = estimate(&segments_from_trajectory(&traj)).ok()?;
            Some((
                spectral_norm(&(&est.matrix_minus - &truth_minus)) <= cfg.phi,
                spectral_norm(&(&est.matrix_plus - &truth_plus)) <= cfg.phi,
            ))
        })
        .collect();
    let success_minus = outcomes.iter().filter(|o| matches!(o, Some((true, _)))).count();
    let success_plus = outcomes.iter().filter(|o| matches!(o, Some((_, true)))).count();
    Ok(PacReport {
        n,
        trials,
        dwell_minus,
        dwell_plus,
        success_minus,
        success_plus,
        estimation_failures: outcomes.iter().filter(|o| o.is_none()).count(),
        target: 1.0 - cfg.delta,
        lower_minus: wilson_lower(success_minus, trials, 1.96),
        lower_plus: wilson_lower(success_plus, trials, 1.96),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundednessReport {
    pub trials: usize,
    pub steps: usize,
    pub violations: usize,
    pub max_abs_state: f64,
}

/// Simulates the nonlinear dynamics (with the system's own noise) from
/// `trials` uniform initial states and counts latent trajectories that
/// leave `[-1, 1]`.
pub fn boundedness_experiment(sys: &SocialSystem, schedule: &Schedule, trials: usize, seed: u64) -> Result<BoundednessReport> {
    let results: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let x1 = random_state(sys.n(), &mut rng);
            let traj = simulate_with_rng(sys, schedule, &x1, &mut rng)?;
            Ok(traj.x.iter().map(|x| x.amax()).fold(0.0, f64::max))
        })
        .collect();
    let mut violations = 0;
    let mut max_abs_state: f64 = 0.0;
    for r in results {
        match r {
            Ok(peak) => {
                violations += usize::from(peak > 1.0);
                max_abs_state = max_abs_state.max(peak);
            }
            Err(Error::Domain { .. } | Error::Infeasible { .. }) => violations += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(BoundednessReport {
        trials,
        steps: schedule.len(),
        violations,
        max_abs_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::feasibility_check;

    #[test]
    fn sampled_systems_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..8 {
            let sampler = SystemSampler { chi: 0.05, ..SystemSampler::default() };
            let sys = random_feasible_system(n, &sampler, &mut rng).unwrap();
            assert!(feasibility_check(&sys).passed());
            assert!(sys.s.iter().all(|s| s.abs() >= 0.05));
        }
    }

    #[test]
    fn noise_free_round_trip_is_exact() {
        for seed in 0..5 {
            let rep = round_trip_experiment(3, seed, 0.0).unwrap();
            assert!(rep.max_parameter_error() < 1e-8, "{rep:?}");
            assert!(rep.flagged_rows.is_empty());
        }
        assert!(round_trip_experiment(1, 0, 0.0).is_err());
    }

    #[test]
    fn wilson_bound_examples() {
        assert_eq!(wilson_lower(0, 0, 1.96), 0.0);
        let lo = wilson_lower(200, 200, 1.96);
        assert!(lo > 0.98 && lo < 1.0);
        assert!(wilson_lower(100, 200, 1.96) < 0.5);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(pac_experiment(2, &PacConfig::default(), 0.0, 0, 1).is_err());
    }
}
