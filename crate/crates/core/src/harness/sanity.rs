//! Plausibility checks on a fitted regime pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::estimator::EstimationResult;
use crate::model::{random_state, Regime, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanityReport {
    /// Entries with `|A_ij| >= 1` as `(regime, i, j, value)`.
    pub large_entries: Vec<(Regime, usize, usize, f64)>,
    /// `a_i + sum_j A_ij` of the `+1` regime.
    pub plus_mass: Vec<f64>,
    /// Rows whose `+1` mass leaves `[0, 1]`.
    pub mass_violations: Vec<usize>,
    pub trials: usize,
    /// Trajectories that left `[-1, 1]` at some step.
    pub escaped: usize,
    pub max_abs_state: f64,
}

impl SanityReport {
    pub fn entries_ok(&self) -> bool {
        self.large_entries.is_empty()
    }

    pub fn mass_ok(&self) -> bool {
        self.mass_violations.is_empty()
    }

    pub fn bounded_ok(&self) -> bool {
        self.escaped == 0
    }

    pub fn passed(&self) -> bool {
        self.entries_ok() && self.mass_ok() && self.bounded_ok()
    }
}

/// Runs the three checks; the boundedness check rolls the noise-free
/// switching model along `schedule` from `trials` uniform initial states.
pub fn sanity_checks(est: &EstimationResult, schedule: &Schedule, trials: usize, seed: u64) -> SanityReport {
    let mut large_entries = Vec::new();
    for regime in [Regime::Plus, Regime::Minus] {
        let m = est.model(regime).matrix;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)].abs() >= 1.0 {
                    large_entries.push((regime, i, j, m[(i, j)]));
                }
            }
        }
    }
    let plus_mass: Vec<f64> = (0..est.n())
        .map(|i| est.offset_plus[i] + est.matrix_plus.row(i).sum())
        .collect();
    let mass_violations = plus_mass
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(0.0..=1.0).contains(&v))
        .map(|(i, _)| i)
        .collect();

    let plus = est.model(Regime::Plus);
    let minus = est.model(Regime::Minus);
    let labels = schedule.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut escaped = 0;
    let mut max_abs_state: f64 = 0.0;
    for _ in 0..trials {
        let mut x = random_state(est.n(), &mut rng);
        let mut out = false;
        for &r in &labels {
            x = if r == Regime::Plus { plus.apply(&x) } else { minus.apply(&x) };
            let peak = x.amax();
            max_abs_state = max_abs_state.max(peak);
            out |= !(peak <= 1.0);
        }
        escaped += usize::from(out);
    }
    SanityReport {
        large_entries,
        plus_mass,
        mass_violations,
        trials,
        escaped,
        max_abs_state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn est(m: DMatrix<f64>, a: DVector<f64>) -> EstimationResult {
        EstimationResult {
            matrix_plus: m.clone(),
            matrix_minus: m,
            offset_plus: a.clone(),
            offset_minus: a,
            gram_min_singular_plus: None,
            gram_min_singular_minus: None,
        }
    }

    #[test]
    fn identity_fails_entry_check() {
        let r = sanity_checks(&est(DMatrix::identity(2, 2), DVector::zeros(2)), &Schedule::minus_then_plus(5, 5).unwrap(), 10, 1);
        assert!(!r.entries_ok());
        assert_eq!(r.large_entries.len(), 4);
        assert!(r.bounded_ok());
    }

    #[test]
    fn convex_model_passes() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.5]);
        let a = DVector::from_row_slice(&[0.1, -0.2]);
        let r = sanity_checks(&est(m, a), &Schedule::minus_then_plus(20, 20).unwrap(), 200, 2);
        assert!(r.passed(), "{r:?}");
        assert!((r.plus_mass[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn expanding_model_escapes() {
        let m = DMatrix::from_row_slice(1, 1, &[0.9]);
        let r = sanity_checks(&est(m, DVector::from_element(1, 0.5)), &Schedule::minus_then_plus(0, 30).unwrap(), 50, 3);
        assert!(!r.mass_ok());
        assert!(!r.bounded_ok());
        assert!(r.max_abs_state > 1.0);
    }
}
