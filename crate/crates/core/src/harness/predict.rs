//! Held-out prediction with the switching pair against a single fixed model.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{estimate, estimate_fixed, EstimationResult, Segment};
use crate::model::{Regime, RegimeModel};

use super::ingest::IdeologyPanel;

/// Maximal same-label runs as `(regime, first index, length)` with 1-based indices.
pub fn regime_runs(labels: &[Regime]) -> Vec<(Regime, usize, usize)> {
    let mut out: Vec<(Regime, usize, usize)> = Vec::new();
    for (k, &r) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == r => last.2 += 1,
            _ => out.push((r, k + 1, 1)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSegments {
    pub minus: Vec<Segment>,
    pub plus: Vec<Segment>,
}

impl RegimeSegments {
    pub fn of(&self, regime: Regime) -> &[Segment] {
        match regime {
            Regime::Minus => &self.minus,
            Regime::Plus => &self.plus,
        }
    }

    /// Total number of samples pooled for a regime.
    pub fn pool_size(&self, regime: Regime) -> usize {
        self.of(regime).iter().map(Segment::len).sum()
    }

    /// Windows handed to the complexity conditions: the `-1` pool occupies
    /// `1..=D` and the `+1` pool `D+1..=D+R`.
    pub fn pooled_windows(&self) -> ((usize, usize), (usize, usize)) {
        let d = self.pool_size(Regime::Minus);
        let r = self.pool_size(Regime::Plus);
        ((1, d), (d + 1, d + r))
    }

    pub fn all(&self) -> Vec<Segment> {
        self.minus.iter().chain(&self.plus).cloned().collect()
    }
}

/// Splits the congresses in `range` into maximal same-label runs, pooled by
/// label. Each regime needs at least one run of three or more congresses,
/// otherwise no differenced pair can be formed for it.
pub fn split_regime_segments(panel: &IdeologyPanel, range: (i64, i64)) -> Result<RegimeSegments> {
    let sub = panel.restrict(range)?;
    let traj = sub.to_trajectory();
    let mut out = RegimeSegments {
        minus: Vec::new(),
        plus: Vec::new(),
    };
    for (regime, start, len) in regime_runs(&traj.regimes) {
        let seg = Segment::new(regime, start, traj.y[start - 1..start - 1 + len].to_vec())?;
        match regime {
            Regime::Minus => out.minus.push(seg),
            Regime::Plus => out.plus.push(seg),
        }
    }
    for regime in Regime::BOTH {
        if !out.of(regime).iter().any(|s| s.len() >= 3) {
            return Err(Error::NoPairs(regime.label()));
        }
    }
    Ok(out)
}

/// Fits the switching pair on the regime-pooled runs and a fixed model on
/// the whole range, ignoring labels.
pub fn fit_models(panel: &IdeologyPanel, range: (i64, i64)) -> Result<(EstimationResult, RegimeModel)> {
    let segs = split_regime_segments(panel, range)?;
    let switching = estimate(&segs.all())?;
    let fixed = estimate_fixed(&panel.restrict(range)?.to_trajectory().y)?;
    Ok((switching, fixed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub units: Vec<String>,
    pub congresses: Vec<i64>,
    pub switching_errors: Vec<f64>,
    pub fixed_errors: Vec<f64>,
    pub switching_path: Vec<DVector<f64>>,
    pub fixed_path: Vec<DVector<f64>>,
    pub observed: Vec<DVector<f64>>,
    pub mean_switching: f64,
    pub mean_fixed: f64,
    /// Units where the switching model has strictly smaller error.
    pub switching_wins: usize,
}

fn roll<'a>(start: &DVector<f64>, models: impl Iterator<Item = &'a RegimeModel>) -> Vec<DVector<f64>> {
    let mut path = vec![start.clone()];
    for m in models {
        let next = m.apply(path.last().expect("path starts non-empty"));
        path.push(next);
    }
    path
}

/// Both models start from the observation at `horizon.0` and are rolled to
/// `horizon.1`. The switching model uses the regime of the congress being
/// predicted. Errors average `|y - y_pred|` over all `H` congresses of the
/// horizon, the first of which is the shared initial condition.
pub fn predict(
    panel: &IdeologyPanel,
    switching: &EstimationResult,
    fixed: &RegimeModel,
    horizon: (i64, i64),
) -> Result<PredictionReport> {
    let sub = panel
        .restrict(horizon)
        .map_err(|e| Error::Input(format!("horizon outside panel: {e}")))?;
    let n = sub.n_units();
    if switching.n() != n || fixed.offset.len() != n {
        return Err(Error::Dimension(format!(
            "models have {} units, panel has {n}",
            switching.n()
        )));
    }
    let traj = sub.to_trajectory();
    let plus = switching.model(Regime::Plus);
    let minus = switching.model(Regime::Minus);
    let pick = |r: Regime| if r == Regime::Plus { &plus } else { &minus };
    let switching_path = roll(&traj.y[0], traj.regimes[1..].iter().map(|&r| pick(r)));
    let fixed_path = roll(&traj.y[0], std::iter::repeat_n(fixed, traj.len() - 1));

    let h = traj.len() as f64;
    let err = |path: &[DVector<f64>]| -> Vec<f64> {
        (0..n)
            .map(|i| path.iter().zip(&traj.y).map(|(p, y)| (y[i] - p[i]).abs()).sum::<f64>() / h)
            .collect()
    };
    let switching_errors = err(&switching_path);
    let fixed_errors = err(&fixed_path);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(PredictionReport {
        units: sub.units.clone(),
        congresses: sub.congresses.clone(),
        mean_switching: mean(&switching_errors),
        mean_fixed: mean(&fixed_errors),
        switching_wins: switching_errors.iter().zip(&fixed_errors).filter(|(s, f)| s < f).count(),
        switching_errors,
        fixed_errors,
        switching_path,
        fixed_path,
        observed: traj.y,
    })
}

impl PredictionReport {
    /// Tidy CSV `unit,congress,series,value` with series `observed`, `switching`, `fixed`.
    pub fn write_paths<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit", "congress", "series", "value"])?;
        for (series, path) in [
            ("observed", &self.observed),
            ("switching", &self.switching_path),
            ("fixed", &self.fixed_path),
        ] {
            for (c, v) in self.congresses.iter().zip(path) {
                for (u, unit) in self.units.iter().enumerate() {
                    w.write_record([unit.as_str(), &c.to_string(), series, &v[u].to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Tidy CSV `unit,model,error`.
    pub fn write_errors<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit", "model", "error"])?;
        for (model, errs) in [("switching", &self.switching_errors), ("fixed", &self.fixed_errors)] {
            for (unit, e) in self.units.iter().zip(errs.iter()) {
                w.write_record([unit.as_str(), model, &e.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
