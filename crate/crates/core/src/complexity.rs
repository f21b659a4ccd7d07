//! Sample-complexity conditions for the regime estimates: pair counts, the
//! stacked-noise covariance norm, dwell-time search and the largest network
//! size the conditions certify.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_range;

/// Default cap on the last index scanned by [`min_dwell`].
pub const DEFAULT_P_MAX: usize = 100_000;
/// Default cap on the network size scanned by [`max_network_size`].
pub const DEFAULT_N_MAX: usize = 1000;

/// Accuracy, confidence and the concentration constants of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacConfig {
    pub phi: f64,
    pub delta: f64,
    pub eps_net: f64,
    pub rho: f64,
    pub varrho1: f64,
    pub varrho2: f64,
    pub c_univ: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub s_upper: f64,
    pub s_lower: f64,
    pub sigma_o: f64,
    pub sigma_p: f64,
}

impl Default for PacConfig {
    fn default() -> Self {
        let varrho1 = 0.394;
        PacConfig {
            phi: 1.39,
            delta: 0.1,
            eps_net: 0.056,
            rho: varrho1 / 1.06,
            varrho1,
            varrho2: 0.2,
            c_univ: 9.5,
            kappa: 2.0 * 2f64.sqrt(),
            gamma: 1.59,
            s_upper: 1.0,
            s_lower: 1e-4,
            sigma_o: 1.0,
            sigma_p: 1.0,
        }
    }
}

impl PacConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phi", self.phi),
            ("varrho1", self.varrho1),
            ("varrho2", self.varrho2),
            ("c_univ", self.c_univ),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("s_lower", self.s_lower),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        // eps_net = 0 would send ln(2/eps + 1) to infinity
        if !(self.eps_net > 0.0 && self.eps_net < 0.5) {
            return Err(Error::Config(format!("eps_net must lie in (0, 0.5), got {}", self.eps_net)));
        }
        if !(self.rho > 0.0 && self.rho < self.varrho1) {
            return Err(Error::Config(format!(
                "rho must lie in (0, varrho1 = {}), got {}",
                self.varrho1, self.rho
            )));
        }
        if !(self.s_upper > 0.0 && self.s_upper <= 1.0) {
            return Err(Error::Config(format!("s_upper must lie in (0, 1], got {}", self.s_upper)));
        }
        for (name, v) in [("sigma_o", self.sigma_o), ("sigma_p", self.sigma_p)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PacConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_window(k: usize, p: usize, min_gap: usize) -> Result<usize> {
    if k < 1 {
        return Err(Error::Window { k, p, reason: "indices are 1-based" });
    }
    if p < k + min_gap {
        return Err(Error::Window {
            k,
            p,
            reason: if min_gap == 1 { "p must exceed k" } else { "p - k must be at least 2" },
        });
    }
    Ok(p - k)
}

/// Number of differenced scalar pairs `l` and the process-noise pair count `l_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairCounts {
    pub l: u64,
    pub l_hat: u64,
}

pub fn pair_counts(k: usize, p: usize, n: usize) -> Result<PairCounts> {
    let len = check_window(k, p, 1)? as u128;
    if n == 0 {
        return Err(Error::Config("network size must be at least 1".into()));
    }
    let n = n as u128;
    let l = len * (len - 1) / 2 * n;
    // sum_{i=1}^{m} (len - i)(c - i) with m = len - 1, c = p - 1
    let m = len - 1;
    let c = p as u128 - 1;
    let s1 = m * (m + 1) / 2;
    let s2 = m * (m + 1) * (2 * m + 1) / 6;
    let l_hat = (m * len * c + s2 - (len + c) * s1) * n;
    Ok(PairCounts {
        l: l as u64,
        l_hat: l_hat as u64,
    })
}

fn noise_floor_from(counts: PairCounts, n: usize, cfg: &PacConfig) -> Result<(f64, f64)> {
    let per = |v: u64| v as f64 / n as f64;
    let f = 2.0 * per(counts.l) * cfg.sigma_o.powi(2) + cfg.s_lower * per(counts.l_hat) * cfg.sigma_p.powi(2);
    if f <= 0.0 {
        return Err(Error::ZeroNoiseFloor);
    }
    Ok((f, cfg.s_upper / f))
}

/// Returns `(f, j)`: the noise floor and its scaled reciprocal.
pub fn noise_floor(k: usize, p: usize, n: usize, cfg: &PacConfig) -> Result<(f64, f64)> {
    check_window(k, p, 2)?;
    noise_floor_from(pair_counts(k, p, n)?, n, cfg)
}

/// How many times the base process-noise term at step `t` appears in the
/// stacked noise vector of window `(k, p)`.
pub fn noise_multiplicity(k: usize, p: usize, t: usize) -> usize {
    (k..=p.saturating_sub(2))
        .map(|i| (p - 1).saturating_sub(i.max(t)))
        .sum()
}

/// Spectral norm of the stacked-noise covariance, `max(2 sigma_o^2, sigma_p^2 mu_max)`.
pub fn covariance_norm(k: usize, p: usize, n: usize, cfg: &PacConfig) -> Result<f64> {
    check_window(k, p, 2)?;
    if n == 0 {
        return Err(Error::Config("network size must be at least 1".into()));
    }
    // multiplicity is non-increasing in t, so the maximum sits at t = k
    let mu_max = noise_multiplicity(k, p, k) as f64;
    Ok((2.0 * cfg.sigma_o.powi(2)).max(cfg.sigma_p.powi(2) * mu_max))
}

/// The stacked-noise covariance built entry by entry: a `2 sigma_o^2`
/// identity block for the observation part and `sigma_p^2 S S^T` for the
/// process part, where each row of the selection matrix `S` picks one base
/// noise coordinate. Meant for checking [`covariance_norm`] on small windows.
pub fn explicit_covariance(k: usize, p: usize, n: usize, cfg: &PacConfig) -> Result<DMatrix<f64>> {
    let len = check_window(k, p, 2)?;
    let obs_rows = len * (len - 1) / 2 * n;
    let mut rows: Vec<usize> = Vec::new();
    for i in k..=p - 2 {
        for j in i + 1..=p - 1 {
            for t in k..j {
                for d in 0..n {
                    rows.push((t - k) * n + d);
                }
            }
        }
    }
    let cols = (p - 1 - k) * n;
    let mut s = DMatrix::zeros(rows.len(), cols);
    for (r, &c) in rows.iter().enumerate() {
        s[(r, c)] = 1.0;
    }
    let proc = &s * s.transpose() * cfg.sigma_p.powi(2);
    let dim = obs_rows + rows.len();
    let mut out = DMatrix::zeros(dim, dim);
    for d in 0..obs_rows {
        out[(d, d)] = 2.0 * cfg.sigma_o.powi(2);
    }
    out.view_mut((obs_rows, obs_rows), (rows.len(), rows.len()))
        .copy_from(&proc);
    Ok(out)
}

/// Spectral norm of [`explicit_covariance`], which is symmetric and PSD.
pub fn explicit_covariance_norm(k: usize, p: usize, n: usize, cfg: &PacConfig) -> Result<f64> {
    Ok(symmetric_eigen_range(&explicit_covariance(k, p, n, cfg)?).1)
}

/// Both sides of each condition for one window and network size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    pub k: usize,
    pub p: usize,
    pub n: usize,
    pub counts: PairCounts,
    pub f: f64,
    pub j: f64,
    pub cov_norm: f64,
    pub lhs33: f64,
    pub rhs33: f64,
    pub cond33: bool,
    pub rhs34: f64,
    pub cond34: bool,
    /// False when the right side of the second condition is not positive,
    /// in which case the configuration cannot certify this network size.
    pub rhs34_positive: bool,
}

impl ConditionReport {
    pub fn both(&self) -> bool {
        self.cond33 && self.cond34
    }

    pub fn margin33(&self) -> f64 {
        self.lhs33 - self.rhs33
    }

    pub fn margin34(&self) -> f64 {
        self.f - self.rhs34
    }
}

/// Evaluates both conditions without treating a non-positive right side as
/// an error. All large factors are handled as sums of logarithms.
pub fn evaluate_conditions(k: usize, p: usize, n: usize, cfg: &PacConfig) -> Result<ConditionReport> {
    cfg.validate()?;
    check_window(k, p, 2)?;
    let counts = pair_counts(k, p, n)?;
    let (f, j) = noise_floor_from(counts, n, cfg)?;
    let cov_norm = covariance_norm(k, p, n, cfg)?;
    let nf = n as f64;
    let ln_delta = cfg.delta.ln();
    let shrink = 1.0 - 2.0 * cfg.eps_net;

    let ln_a = 2.0 * shrink.ln() + nf.ln() + 2.0 * cfg.rho.ln()
        - (counts.l as f64).ln()
        - 2.0 * j.ln()
        - cov_norm.ln();
    let ln_b = shrink.ln() + cfg.rho.ln() - j.ln();
    let ln_lhs = ln_a.min(ln_b);
    let rhs33 = cfg.gamma.powi(2) / 2.0 * (2.0 * LN_2 + nf * (2.0 / cfg.eps_net + 1.0).ln() - ln_delta);
    let cond33 = rhs33 <= 0.0 || ln_lhs >= rhs33.ln();

    let gap = cfg.varrho1 - cfg.rho;
    let scale = 32.0 * cfg.c_univ * cfg.kappa.powi(2) * cfg.varrho2 / (cfg.phi.powi(2) * gap);
    let bracket = 0.5 * nf * (gap / (2.0 * cfg.varrho1)).ln() + LN_2 + nf * 5f64.ln() - ln_delta;
    let rhs34 = scale * bracket;
    let rhs34_positive = rhs34 > 0.0;
    let cond34 = rhs34_positive && f >= rhs34;

    Ok(ConditionReport {
        k,
        p,
        n,
        counts,
        f,
        j,
        cov_norm,
        lhs33: ln_lhs.exp(),
        rhs33,
        cond33,
        rhs34,
        cond34,
        rhs34_positive,
    })
}

/// Like [`evaluate_conditions`] but a non-positive right side of the second
/// condition is a configuration error.
pub fn check_conditions(k: usize, p: usize, n: usize, cfg: &PacConfig) -> Result<ConditionReport> {
    let rep = evaluate_conditions(k, p, n, cfg)?;
    if !rep.rhs34_positive {
        return Err(Error::Config(format!(
            "right side of the accuracy condition is {:.6} <= 0 for n = {n}; \
             these constants cannot certify this network size",
            rep.rhs34
        )));
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dwell {
    /// Last index of the window.
    pub p: usize,
    /// Number of samples `p - k_start + 1`.
    pub tau: usize,
    pub report: ConditionReport,
}

/// Smallest `p <= p_max` for which both conditions hold on `(k_start, p)`.
pub fn min_dwell(n: usize, cfg: &PacConfig, k_start: usize, p_max: usize) -> Result<Dwell> {
    cfg.validate()?;
    if k_start < 1 {
        return Err(Error::Window { k: k_start, p: p_max, reason: "indices are 1-based" });
    }
    for p in k_start + 2..=p_max {
        let report = evaluate_conditions(k_start, p, n, cfg)?;
        if !report.rhs34_positive {
            return Err(Error::Config(format!(
                "right side of the accuracy condition is {:.6} <= 0 for n = {n}",
                report.rhs34
            )));
        }
        if report.both() {
            return Ok(Dwell {
                p,
                tau: p - k_start + 1,
                report,
            });
        }
    }
    Err(Error::DwellNotReachable { cap: p_max })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSizeScan {
    pub n_max: usize,
    /// `(n, passes on the first window, passes on the second window)`.
    pub passes: Vec<(usize, bool, bool)>,
}

/// Largest `n <= n_cap` whose conditions hold on both windows; 0 if none.
/// Every `n` in `1..=n_cap` is evaluated since the predicate need not be
/// monotone.
pub fn max_network_size_scan(
    minus: (usize, usize),
    plus: (usize, usize),
    cfg: &PacConfig,
    n_cap: usize,
) -> Result<NetworkSizeScan> {
    cfg.validate()?;
    for &(k, p) in [&minus, &plus] {
        check_window(k, p, 1)?;
    }
    let passes_on = |(k, p): (usize, usize), n: usize| -> Result<bool> {
        if p - k < 2 {
            return Ok(false);
        }
        Ok(evaluate_conditions(k, p, n, cfg)?.both())
    };
    let mut passes = Vec::with_capacity(n_cap);
    let mut n_max = 0;
    for n in 1..=n_cap {
        let a = passes_on(minus, n)?;
        let b = passes_on(plus, n)?;
        if a && b {
            n_max = n;
        }
        passes.push((n, a, b));
    }
    Ok(NetworkSizeScan { n_max, passes })
}

pub fn max_network_size(minus: (usize, usize), plus: (usize, usize), cfg: &PacConfig) -> Result<usize> {
    Ok(max_network_size_scan(minus, plus, cfg, DEFAULT_N_MAX)?.n_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn brute_counts(k: usize, p: usize, n: usize) -> (u64, u64) {
        let len = p - k;
        let l = (len * (len.saturating_sub(1)) / 2 * n) as u64;
        let lh: usize = (1..len).map(|i| (len - i) * (p - 1 - i) * n).sum();
        (l, lh as u64)
    }

    #[test]
    fn pair_count_examples() {
        assert_eq!(pair_counts(1, 2, 5).unwrap().l, 0);
        let c = pair_counts(1, 4, 2).unwrap();
        assert_eq!(c.l, 6);
        assert_eq!(c.l_hat, 10);
        assert!(pair_counts(3, 3, 1).is_err());
    }

    proptest! {
        #[test]
        fn pair_counts_match_direct_sums(k in 1usize..50, len in 1usize..200, n in 1usize..20) {
            let p = k + len;
            let c = pair_counts(k, p, n).unwrap();
            prop_assert_eq!((c.l, c.l_hat), brute_counts(k, p, n));
            prop_assert_eq!(c.l == 0, len <= 1);
        }
    }

    #[test]
    fn noise_floor_examples() {
        let cfg = PacConfig {
            sigma_o: 1.0,
            sigma_p: 0.0,
            s_upper: 1.0,
            ..PacConfig::default()
        };
        let (f, j) = noise_floor(1, 4, 2, &cfg).unwrap();
        assert_relative_eq!(f, 6.0);
        assert_relative_eq!(j, 1.0 / 6.0);

        let silent = PacConfig {
            sigma_o: 0.0,
            sigma_p: 0.0,
            ..cfg
        };
        assert!(matches!(noise_floor(1, 4, 2, &silent), Err(Error::ZeroNoiseFloor)));

        let doubled = PacConfig { sigma_o: 2.0, ..cfg };
        assert_relative_eq!(noise_floor(1, 4, 2, &doubled).unwrap().0, 4.0 * f);
    }

    #[test]
    fn multiplicity_example() {
        assert_eq!(noise_multiplicity(1, 4, 1), 3);
        let cfg = PacConfig {
            sigma_p: 0.0,
            sigma_o: 0.7,
            ..PacConfig::default()
        };
        assert_relative_eq!(covariance_norm(1, 9, 3, &cfg).unwrap(), 2.0 * 0.49);
    }

    #[test]
    fn covariance_matches_explicit_matrix() {
        for (so, sp) in [(1.0, 1.0), (1.0, 0.3), (0.2, 1.0)] {
            let cfg = PacConfig {
                sigma_o: so,
                sigma_p: sp,
                ..PacConfig::default()
            };
            for k in [1, 4] {
                for len in 2..=8 {
                    for n in 1..=3 {
                        let fast = covariance_norm(k, k + len, n, &cfg).unwrap();
                        let slow = explicit_covariance_norm(k, k + len, n, &cfg).unwrap();
                        assert_relative_eq!(fast, slow, max_relative = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn multiplicity_peaks_at_window_start() {
        for k in 1..4 {
            for p in k + 2..k + 12 {
                let best = (k..=p - 2).map(|t| noise_multiplicity(k, p, t)).max().unwrap();
                assert_eq!(best, noise_multiplicity(k, p, k));
            }
        }
    }

    /// Straightforward evaluation with the exponentials kept in place.
    fn direct(k: usize, p: usize, n: usize, cfg: &PacConfig) -> (f64, f64, f64, f64) {
        let nf = n as f64;
        let (l, lh) = brute_counts(k, p, n);
        let f = 2.0 * (l as f64 / nf) * cfg.sigma_o.powi(2) + cfg.s_lower * (lh as f64 / nf) * cfg.sigma_p.powi(2);
        let j = cfg.s_upper / f;
        let mu = noise_multiplicity(k, p, k) as f64;
        let c = (2.0 * cfg.sigma_o.powi(2)).max(cfg.sigma_p.powi(2) * mu);
        let e = cfg.eps_net;
        let a = (1.0 - 2.0 * e).powi(2) * nf * cfg.rho.powi(2) / (l as f64 * j * j * c);
        let b = (1.0 - 2.0 * e) * cfg.rho / j;
        let rhs33 = cfg.gamma.powi(2) / 2.0 * (4.0 * (2.0 / e + 1.0).powf(nf) / cfg.delta).ln();
        let gap = cfg.varrho1 - cfg.rho;
        let inner = (gap / (2.0 * cfg.varrho1)).powf(0.5 * nf) * 2.0 * 5f64.powf(nf) / cfg.delta;
        let rhs34 = 32.0 * cfg.c_univ * cfg.kappa.powi(2) * cfg.varrho2 / (cfg.phi.powi(2) * gap) * inner.ln();
        (a.min(b), rhs33, f, rhs34)
    }

    #[test]
    fn log_domain_agrees_with_direct_evaluation() {
        let cfg = PacConfig::default();
        for n in 1..=8 {
            for (k, p) in [(1, 28), (29, 69), (1, 5), (10, 40)] {
                let rep = evaluate_conditions(k, p, n, &cfg).unwrap();
                let (lhs, rhs33, f, rhs34) = direct(k, p, n, &cfg);
                assert_relative_eq!(rep.lhs33, lhs, max_relative = 1e-9);
                assert_relative_eq!(rep.rhs33, rhs33, max_relative = 1e-9);
                assert_relative_eq!(rep.f, f, max_relative = 1e-9);
                assert_relative_eq!(rep.rhs34, rhs34, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn larger_delta_relaxes_both_sides() {
        let lo = PacConfig { delta: 0.05, ..PacConfig::default() };
        let hi = PacConfig { delta: 0.5, ..PacConfig::default() };
        let a = evaluate_conditions(1, 28, 5, &lo).unwrap();
        let b = evaluate_conditions(1, 28, 5, &hi).unwrap();
        assert!(b.rhs33 < a.rhs33);
        assert!(b.rhs34 < a.rhs34);
    }

    #[test]
    fn huge_network_stays_finite() {
        let rep = evaluate_conditions(1, 50, 5000, &PacConfig::default()).unwrap();
        assert!(rep.rhs33.is_finite() && rep.rhs34.is_finite() && rep.lhs33.is_finite());
        assert!(!rep.rhs34_positive);
        assert!(check_conditions(1, 50, 5000, &PacConfig::default()).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = PacConfig { rho: 0.5, ..PacConfig::default() };
        assert!(evaluate_conditions(1, 10, 2, &bad).is_err());
        let bad = PacConfig { delta: 1.0, ..PacConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PacConfig { eps_net: 0.5, ..PacConfig::default() };
        assert!(bad.validate().is_err());
    }

    fn easy() -> PacConfig {
        PacConfig {
            phi: 50.0,
            delta: 0.5,
            sigma_o: 0.1,
            sigma_p: 0.01,
            c_univ: 0.1,
            kappa: 1.0,
            gamma: 0.1,
            ..PacConfig::default()
        }
    }

    #[test]
    fn dwell_found_for_loose_accuracy() {
        let d = min_dwell(2, &easy(), 1, 10_000).unwrap();
        assert!(d.tau >= 3 && d.tau < 10_000);
        assert!(d.report.both());
        if d.p > 3 {
            assert!(!evaluate_conditions(1, d.p - 1, 2, &easy()).unwrap().both());
        }
    }

    #[test]
    fn dwell_errors() {
        let silent = PacConfig {
            sigma_o: 0.0,
            sigma_p: 0.0,
            ..easy()
        };
        assert!(matches!(min_dwell(2, &silent, 1, 100), Err(Error::ZeroNoiseFloor)));
        let tight = PacConfig { phi: 1e-3, ..easy() };
        assert!(matches!(min_dwell(2, &tight, 1, 50), Err(Error::DwellNotReachable { cap: 50 })));
    }

    #[test]
    fn dwell_non_increasing_in_phi() {
        let mut last = usize::MAX;
        for phi in [5.0, 10.0, 20.0, 40.0, 80.0, 160.0] {
            let cfg = PacConfig { phi, ..easy() };
            let tau = min_dwell(2, &cfg, 1, DEFAULT_P_MAX).unwrap().tau;
            assert!(tau <= last, "tau {tau} at phi {phi} exceeds {last}");
            last = tau;
        }
    }

    #[test]
    fn short_windows_certify_nothing() {
        assert_eq!(max_network_size((1, 2), (3, 4), &PacConfig::default()).unwrap(), 0);
    }

    #[test]
    fn scan_records_every_size() {
        let scan = max_network_size_scan((1, 28), (29, 69), &PacConfig::default(), 30).unwrap();
        assert_eq!(scan.passes.len(), 30);
        assert!(scan.passes.iter().skip(17).all(|&(_, a, b)| !(a && b)));
    }
}
