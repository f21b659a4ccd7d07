//! Recovers influence weights, subconscious biases and the two bias gains
//! from the estimated regime pair, one individual at a time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimationResult;
use crate::model::{build_regime, Regime, SocialSystem};

pub const DEFAULT_TOL_S: f64 = 1e-6;
const DENOM_TOL: f64 = 1e-12;
const SCALE_TOL: f64 = 1e-9;
const GAIN_RANGE: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum RowStatus {
    Ok,
    /// Subconscious bias is (numerically) zero, so the regimes carry no
    /// information about this individual's weights or gains.
    NeutralBiasUnrecoverable,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSolution {
    pub status: RowStatus,
    pub s: Option<f64>,
    pub eps: Option<f64>,
    pub eta: Option<f64>,
    /// Row sum of the weights as obtained before the individual weights.
    pub w_sum: Option<f64>,
    pub w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RowSolution {
    fn empty(status: RowStatus) -> Self {
        RowSolution {
            status,
            s: None,
            eps: None,
            eta: None,
            w_sum: None,
            w: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSolution {
    pub rows: Vec<RowSolution>,
}

impl InferenceSolution {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| matches!(r.status, RowStatus::Error(_)))
    }

    pub fn flagged_rows(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == RowStatus::NeutralBiasUnrecoverable)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.status == RowStatus::Ok)
    }

    /// Inferred weight matrix; rows without a solution are `NaN`.
    pub fn w_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.rows[i].w.as_ref().map_or(f64::NAN, |w| w[j]))
    }

    fn vector(&self, get: impl Fn(&RowSolution) -> Option<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.rows.iter().map(|r| get(r).unwrap_or(f64::NAN)))
    }

    pub fn s_vector(&self) -> DVector<f64> {
        self.vector(|r| r.s)
    }

    pub fn eps_vector(&self) -> DVector<f64> {
        self.vector(|r| r.eps)
    }

    pub fn eta_vector(&self) -> DVector<f64> {
        self.vector(|r| r.eta)
    }
}

fn infer_row(est: &EstimationResult, i: usize, tol_s: f64) -> RowSolution {
    let ap = est.offset_plus[i];
    let am = est.offset_minus[i];
    let rp = est.matrix_plus.row(i);
    let rm = est.matrix_minus.row(i);
    let sum_diff: f64 = rp.sum() - rm.sum();
    let sum_both: f64 = rp.sum() + rm.sum();

    let denom = 2.0 - (ap - am) - sum_both;
    if denom.abs() <= DENOM_TOL {
        return RowSolution::empty(RowStatus::Error(format!(
            "bias denominator {denom:e} is numerically zero"
        )));
    }
    let s = (ap + am + sum_diff) / denom;
    if s.abs() < tol_s {
        return RowSolution {
            s: Some(s),
            ..RowSolution::empty(RowStatus::NeutralBiasUnrecoverable)
        };
    }

    let eps = (ap - am) / 4.0 - sum_diff / (4.0 * s);
    let eta = (ap - am) / 4.0 + sum_diff / (4.0 * s);
    let w_sum = sum_both / 2.0 + eta - eps;
    let partial = |status| RowSolution {
        s: Some(s),
        eps: Some(eps),
        eta: Some(eta),
        w_sum: Some(w_sum),
        ..RowSolution::empty(status)
    };
    if w_sum <= 0.0 {
        return partial(RowStatus::Error(format!("inferred weight row sum {w_sum} is not positive")));
    }
    let scale = 1.0 - eta / w_sum;
    if scale.abs() <= SCALE_TOL {
        return partial(RowStatus::Error("topology scale singular".into()));
    }
    let w: Vec<f64> = (0..est.n())
        .map(|j| {
            let diag = if i == j { 2.0 * eps } else { 0.0 };
            (rp[j] + rm[j] - diag) / (2.0 * scale)
        })
        .collect();

    let mut warnings = Vec::new();
    for (name, v) in [("eps", eps), ("eta", eta)] {
        if v < GAIN_RANGE.0 || v > GAIN_RANGE.1 {
            warnings.push(format!("{name} = {v:.6} is implausible"));
        }
    }
    for (j, &v) in w.iter().enumerate() {
        if v < 0.0 {
            warnings.push(format!("w[{i}][{j}] = {v:.6} is negative"));
        }
    }
    RowSolution {
        status: RowStatus::Ok,
        s: Some(s),
        eps: Some(eps),
        eta: Some(eta),
        w_sum: Some(w_sum),
        w: Some(w),
        warnings,
    }
}

/// Runs the row-wise inference. Rows whose inferred bias magnitude is below
/// `tol_s` are flagged and receive no weights or gains.
pub fn infer(est: &EstimationResult, tol_s: f64) -> Result<InferenceSolution> {
    if !(tol_s > 0.0) {
        return Err(Error::domain("tol_s", tol_s, "(0, inf)"));
    }
    let n = est.n();
    for m in [&est.matrix_plus, &est.matrix_minus] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension(format!("regime matrix is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
        }
    }
    if est.offset_minus.len() != n {
        return Err(Error::Dimension("offsets have different lengths".into()));
    }
    if !est.is_finite() {
        return Err(Error::Input("estimation result contains non-finite entries".into()));
    }
    Ok(InferenceSolution {
        rows: (0..n).map(|i| infer_row(est, i, tol_s)).collect(),
    })
}

/// Regime pair implied by the inferred parameters, with no process-noise bound.
pub fn rebuild(sol: &InferenceSolution) -> Result<EstimationResult> {
    let n = sol.n();
    let mut ap = DVector::zeros(n);
    let mut am = DVector::zeros(n);
    let mut mp = DMatrix::zeros(n, n);
    let mut mm = DMatrix::zeros(n, n);
    for (i, row) in sol.rows.iter().enumerate() {
        let (Some(s), Some(eps), Some(eta), Some(w), RowStatus::Ok) = (row.s, row.eps, row.eta, row.w.as_ref(), &row.status)
        else {
            return Err(Error::RowUnavailable {
                row: i,
                reason: format!("{:?}", row.status),
            });
        };
        let w_sum: f64 = w.iter().sum();
        for (sign, offset, matrix) in [(1.0, &mut ap, &mut mp), (-1.0, &mut am, &mut mm)] {
            let lever = 1.0 - sign * s;
            offset[i] = (1.0 - w_sum) * s + sign * (eps + eta) * lever;
            for (j, &wij) in w.iter().enumerate() {
                matrix[(i, j)] = wij * (1.0 - lever * eta / w_sum);
            }
            matrix[(i, i)] += lever * eps;
        }
    }
    Ok(EstimationResult {
        matrix_plus: mp,
        matrix_minus: mm,
        offset_plus: ap,
        offset_minus: am,
        gram_min_singular_plus: None,
        gram_min_singular_minus: None,
    })
}

/// The exact regime pair of a known system.
pub fn exact_estimate(sys: &SocialSystem) -> Result<EstimationResult> {
    let plus = build_regime(sys, Regime::Plus)?;
    let minus = build_regime(sys, Regime::Minus)?;
    Ok(EstimationResult::from_models(&plus, &minus))
}
