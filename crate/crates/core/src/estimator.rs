//! Least-squares identification of each linear regime from differenced
//! observations.
//!
//! Differencing two observations of the same regime cancels the constant
//! offset, so `y(g+1) - y(j+1) = A (y(g) - y(j)) + noise` whenever `g`, `j`,
//! `g+1` and `j+1` all fall inside one run of that regime. The matrix is
//! fitted on those pairs and the offset is then recovered from the raw
//! one-step residuals.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Regime, RegimeModel, Trajectory};

/// Relative singular-value floor below which `X` is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// A contiguous run of observations `y(k), ..., y(p)` sharing one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub regime: Regime,
    /// Global (1-based) index `k` of the first sample.
    pub start: usize,
    pub ys: Vec<DVector<f64>>,
}

impl Segment {
    pub fn new(regime: Regime, start: usize, ys: Vec<DVector<f64>>) -> Result<Self> {
        let first = ys.first().ok_or(Error::SegmentTooShort { len: 0, min: 1 })?;
        let n = first.len();
        if ys.iter().any(|y| y.len() != n) {
            return Err(Error::Dimension("segment samples have different dimensions".into()));
        }
        Ok(Segment { regime, start, ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// Global index `p` of the last sample.
    pub fn end(&self) -> usize {
        self.start + self.ys.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.ys[0].len()
    }

    fn at(&self, global: usize) -> &DVector<f64> {
        &self.ys[global - self.start]
    }
}

/// Splits a labelled trajectory into maximal same-regime runs.
pub fn segments_from_trajectory(traj: &Trajectory) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < traj.len() {
        let regime = traj.regimes[k];
        let run = traj.regimes[k..].iter().take_while(|&&r| r == regime).count();
        out.push(Segment {
            regime,
            start: k + 1,
            ys: traj.y[k..k + run].to_vec(),
        });
        k += run;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffPair {
    pub g: usize,
    pub j: usize,
    /// `y(g) - y(j)`
    pub diff: DVector<f64>,
}

/// All differences `y(g) - y(j)` for `g < j` inside the segment, ordered by
/// `g` then `j`.
pub fn difference_pairs(seg: &Segment) -> Result<Vec<DiffPair>> {
    if seg.len() < 2 {
        return Err(Error::SegmentTooShort { len: seg.len(), min: 2 });
    }
    let mut out = Vec::with_capacity(seg.len() * (seg.len() - 1) / 2);
    for g in seg.start..seg.end() {
        for j in g + 1..=seg.end() {
            out.push(DiffPair {
                g,
                j,
                diff: seg.at(g) - seg.at(j),
            });
        }
    }
    Ok(out)
}

/// Regressor and response matrices, column-aligned so that `Y = A X + U`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub regime: Regime,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `(g, j)` of each `X` column; the matching `Y` column is `(g + 1, j + 1)`.
    pub pairs: Vec<(usize, usize)>,
}

impl DataMatrices {
    pub fn columns(&self) -> usize {
        self.pairs.len()
    }
}

/// Stacks the differenced pairs of every segment of one regime. Pairs never
/// straddle two segments.
pub fn build_matrices(segs: &[Segment], regime: Regime) -> Result<DataMatrices> {
    let n = segs
        .first()
        .map(Segment::dim)
        .ok_or(Error::NoPairs(regime.label()))?;
    let mut pairs = Vec::new();
    for (s_idx, seg) in segs.iter().enumerate() {
        if seg.regime != regime {
            return Err(Error::Input(format!(
                "segment starting at {} has regime {}, expected {regime}",
                seg.start, seg.regime
            )));
        }
        if seg.dim() != n {
            return Err(Error::Dimension("segments have different dimensions".into()));
        }
        if seg.len() < 3 {
            continue;
        }
        let (k, p) = (seg.start, seg.end());
        for g in k..=p - 2 {
            for j in g + 1..=p - 1 {
                pairs.push((s_idx, g, j));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs(regime.label()));
    }
    let mut x = DMatrix::zeros(n, pairs.len());
    let mut y = DMatrix::zeros(n, pairs.len());
    for (c, &(s, g, j)) in pairs.iter().enumerate() {
        let seg = &segs[s];
        x.set_column(c, &(seg.at(g) - seg.at(j)));
        y.set_column(c, &(seg.at(g + 1) - seg.at(j + 1)));
    }
    Ok(DataMatrices {
        regime,
        x,
        y,
        pairs: pairs.into_iter().map(|(_, g, j)| (g, j)).collect(),
    })
}

/// Empirical Gram matrix `X X^T`.
pub fn gram(dm: &DataMatrices) -> DMatrix<f64> {
    &dm.x * dm.x.transpose()
}

fn deficient_directions(x: &DMatrix<f64>, threshold: f64) -> Vec<Vec<f64>> {
    let g = x * x.transpose();
    let eig = g.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l.max(0.0).sqrt() <= threshold)
        .map(|(i, _)| eig.eigenvectors.column(i).iter().copied().collect())
        .collect()
}

/// Checks the rank of `X` and returns its extreme singular values.
fn rank_check(x: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = x.nrows();
    let sv = if x.ncols() >= n {
        x.singular_values()
    } else {
        // fewer columns than rows: pad so the missing directions show up as zeros
        let mut padded = DMatrix::zeros(n, n);
        padded.columns_mut(0, x.ncols()).copy_from(x);
        padded.singular_values()
    };
    let largest = sv.max();
    let smallest = sv.min();
    let threshold = RANK_TOLERANCE * largest;
    if largest <= 0.0 || smallest <= threshold {
        return Err(Error::RankDeficient {
            smallest,
            largest,
            directions: deficient_directions(x, threshold.max(f64::MIN_POSITIVE)),
        });
    }
    Ok((smallest, largest))
}

/// Least-squares `A = Y X^T (X X^T)^{-1}`, computed from a QR factorisation
/// of `X^T`. Fails instead of regularising when `X` is rank deficient.
pub fn estimate_matrix(dm: &DataMatrices) -> Result<DMatrix<f64>> {
    rank_check(&dm.x)?;
    let xt = dm.x.transpose();
    let qr = xt.qr();
    let q = qr.q();
    let r = qr.r();
    let rhs = q.transpose() * dm.y.transpose();
    let at = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::RankDeficient {
            smallest: 0.0,
            largest: 0.0,
            directions: Vec::new(),
        })?;
    Ok(at.transpose())
}

/// Offset estimate `(1/(p-k)) sum_{q=k}^{p-1} (y(q+1) - A y(q))` over one run.
pub fn estimate_offset(ys: &[DVector<f64>], a_hat: &DMatrix<f64>) -> Result<DVector<f64>> {
    if ys.len() < 2 {
        return Err(Error::SegmentTooShort { len: ys.len(), min: 2 });
    }
    let mut sum = DVector::zeros(ys[0].len());
    for w in ys.windows(2) {
        sum += &w[1] - a_hat * &w[0];
    }
    Ok(sum / (ys.len() - 1) as f64)
}

/// Offset estimate pooled over several runs of one regime: the one-step
/// residuals of every run are averaged together.
pub fn estimate_offset_pooled(segs: &[Segment], a_hat: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut sum = DVector::zeros(a_hat.nrows());
    let mut count = 0usize;
    for seg in segs.iter().filter(|s| s.len() >= 2) {
        for w in seg.ys.windows(2) {
            sum += &w[1] - a_hat * &w[0];
        }
        count += seg.len() - 1;
    }
    if count == 0 {
        return Err(Error::SegmentTooShort { len: 1, min: 2 });
    }
    Ok(sum / count as f64)
}

/// Estimate of one regime together with conditioning diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeEstimate {
    pub model: RegimeModel,
    /// Smallest singular value of `X X^T`.
    pub gram_min_singular: f64,
    pub columns: usize,
}

pub fn estimate_regime(segs: &[Segment], regime: Regime) -> Result<RegimeEstimate> {
    let dm = build_matrices(segs, regime)?;
    let matrix = estimate_matrix(&dm)?;
    let offset = estimate_offset_pooled(segs, &matrix)?;
    let (smallest, _) = rank_check(&dm.x)?;
    Ok(RegimeEstimate {
        model: RegimeModel { regime, offset, matrix },
        gram_min_singular: smallest * smallest,
        columns: dm.columns(),
    })
}

/// Estimates for both regimes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub matrix_plus: DMatrix<f64>,
    pub matrix_minus: DMatrix<f64>,
    pub offset_plus: DVector<f64>,
    pub offset_minus: DVector<f64>,
    pub gram_min_singular_plus: Option<f64>,
    pub gram_min_singular_minus: Option<f64>,
}

impl EstimationResult {
    pub fn from_models(plus: &RegimeModel, minus: &RegimeModel) -> Self {
        EstimationResult {
            matrix_plus: plus.matrix.clone(),
            matrix_minus: minus.matrix.clone(),
            offset_plus: plus.offset.clone(),
            offset_minus: minus.offset.clone(),
            gram_min_singular_plus: None,
            gram_min_singular_minus: None,
        }
    }

    pub fn n(&self) -> usize {
        self.offset_plus.len()
    }

    pub fn model(&self, regime: Regime) -> RegimeModel {
        match regime {
            Regime::Plus => RegimeModel {
                regime,
                offset: self.offset_plus.clone(),
                matrix: self.matrix_plus.clone(),
            },
            Regime::Minus => RegimeModel {
                regime,
                offset: self.offset_minus.clone(),
                matrix: self.matrix_minus.clone(),
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.matrix_plus, &self.matrix_minus]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.offset_plus, &self.offset_minus]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Fits both regimes from labelled segments.
pub fn estimate(segs: &[Segment]) -> Result<EstimationResult> {
    let pick = |r: Regime| segs.iter().filter(|s| s.regime == r).cloned().collect::<Vec<_>>();
    let plus = estimate_regime(&pick(Regime::Plus), Regime::Plus)?;
    let minus = estimate_regime(&pick(Regime::Minus), Regime::Minus)?;
    Ok(EstimationResult {
        matrix_plus: plus.model.matrix,
        matrix_minus: minus.model.matrix,
        offset_plus: plus.model.offset,
        offset_minus: minus.model.offset,
        gram_min_singular_plus: Some(plus.gram_min_singular),
        gram_min_singular_minus: Some(minus.gram_min_singular),
    })
}

/// Fits a single regime-agnostic model to one contiguous run, ignoring labels.
pub fn estimate_fixed(ys: &[DVector<f64>]) -> Result<RegimeModel> {
    let seg = Segment::new(Regime::Plus, 1, ys.to_vec())?;
    let dm = build_matrices(std::slice::from_ref(&seg), Regime::Plus)?;
    let matrix = estimate_matrix(&dm)?;
    let offset = estimate_offset(ys, &matrix)?;
    Ok(RegimeModel {
        regime: Regime::Plus,
        offset,
        matrix,
    })
}
