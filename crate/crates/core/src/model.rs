//! Opinion dynamics with confirmation bias, negativity bias and bounded
//! process noise, plus the two linear regimes that appear when every
//! information source broadcasts the same extremal opinion.
//!
//! Indices in this module follow the usual Rust convention (0-based), except
//! where a function talks about time steps: step `1` is the first sample of a
//! trajectory, and `Trajectory::y[0]` holds `y(1)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking that opinions live in `[-1, 1]`.
const DOMAIN_SLACK: f64 = 1e-9;

/// Which extremal opinion the information sources hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Regime {
    Minus,
    Plus,
}

impl Regime {
    pub const BOTH: [Regime; 2] = [Regime::Minus, Regime::Plus];

    /// The source opinion, `-1.0` or `+1.0`.
    pub fn opinion(self) -> f64 {
        match self {
            Regime::Minus => -1.0,
            Regime::Plus => 1.0,
        }
    }

    pub fn label(self) -> i8 {
        match self {
            Regime::Minus => -1,
            Regime::Plus => 1,
        }
    }
}

impl From<Regime> for i8 {
    fn from(r: Regime) -> i8 {
        r.label()
    }
}

impl TryFrom<i8> for Regime {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Regime::Minus),
            1 => Ok(Regime::Plus),
            other => Err(Error::Input(format!("regime label must be -1 or +1, got {other}"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Minus => write!(f, "-1"),
            Regime::Plus => write!(f, "+1"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-1" | "-" | "minus" => Ok(Regime::Minus),
            "1" | "+1" | "+" | "plus" => Ok(Regime::Plus),
            other => Err(Error::Input(format!("unknown regime token {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of process noise before truncation to `(-chi_i, chi_i)`.
    pub sigma_p: f64,
    pub sigma_o: f64,
    pub mu_o: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec {
            sigma_p: 0.0,
            sigma_o: 0.0,
            mu_o: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_p >= 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::domain("sigma_p", self.sigma_p, "[0, inf)"));
        }
        if !(self.sigma_o >= 0.0 && self.sigma_o.is_finite()) {
            return Err(Error::domain("sigma_o", self.sigma_o, "[0, inf)"));
        }
        if !self.mu_o.is_finite() {
            return Err(Error::domain("mu_o", self.mu_o, "finite"));
        }
        Ok(())
    }
}

/// Ground-truth parameters of a social network driven by `m` information sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialSystem {
    /// Number of information sources.
    pub m: usize,
    /// `w[(i, j)]` is the influence of individual `j` on individual `i`.
    pub w: DMatrix<f64>,
    /// Subconscious bias.
    pub s: DVector<f64>,
    /// Confirmation-bias gains.
    pub eps: DVector<f64>,
    /// Negativity-bias gains.
    pub eta: DVector<f64>,
    /// Process-noise bounds.
    pub chi: DVector<f64>,
    pub noise: NoiseSpec,
}

impl SocialSystem {
    /// Builds a system after checking shapes and the per-entry ranges.
    /// Feasibility of the resistance is a separate question, see
    /// [`feasibility_check`].
    pub fn new(
        m: usize,
        w: DMatrix<f64>,
        s: DVector<f64>,
        eps: DVector<f64>,
        eta: DVector<f64>,
        chi: DVector<f64>,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(Error::Dimension(format!(
                "influence matrix must be square and non-empty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if m == 0 {
            return Err(Error::Config("at least one information source is required".into()));
        }
        for (name, v) in [("s", &s), ("eps", &eps), ("eta", &eta), ("chi", &chi)] {
            if v.len() != n {
                return Err(Error::Dimension(format!("{name} has length {}, expected {n}", v.len())));
            }
        }
        if let Some(&bad) = w.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::domain("w_ij", bad, "[0, inf)"));
        }
        if let Some(&bad) = s.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::domain("s_i", bad, "[-1, 1]"));
        }
        for (name, v) in [("eps_i", &eps), ("eta_i", &eta), ("chi_i", &chi)] {
            if let Some(&bad) = v.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::domain(name, bad, "[0, inf)"));
            }
        }
        noise.validate()?;
        Ok(SocialSystem {
            m,
            w,
            s,
            eps,
            eta,
            chi,
            noise,
        })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    fn row_sum(&self, i: usize) -> f64 {
        self.w.row(i).sum()
    }
}

/// One linear regime `x(k+1) = offset + matrix * x(k) + p(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeModel {
    pub regime: Regime,
    pub offset: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

impl RegimeModel {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.matrix * x
    }
}

fn check_opinion(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v.abs() <= 1.0 + DOMAIN_SLACK {
        Ok(())
    } else {
        Err(Error::domain(name, v, "[-1, 1]"))
    }
}

fn check_gain(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(name, v, "[0, inf)"))
    }
}

/// State-dependent weight that favours sources close to one's own opinion:
/// `2 eps - eps |x_i - h|`.
pub fn confirmation_weight(x_i: f64, h: f64, eps_i: f64) -> Result<f64> {
    check_opinion("x_i", x_i)?;
    check_opinion("h", h)?;
    check_gain("eps_i", eps_i)?;
    Ok(2.0 * eps_i - eps_i * (x_i - h).abs())
}

/// State-dependent weight that favours sources far from the sensed
/// expectation: `eta |xbar_i - h|`.
pub fn negativity_weight(xbar_i: f64, h: f64, eta_i: f64) -> Result<f64> {
    check_opinion("xbar_i", xbar_i)?;
    check_opinion("h", h)?;
    check_gain("eta_i", eta_i)?;
    Ok(eta_i * (xbar_i - h).abs())
}

/// Influence-weighted mean of the neighbours' opinions.
pub fn sensed_expectation(w_row: &[f64], x: &[f64]) -> Result<f64> {
    if w_row.len() != x.len() {
        return Err(Error::Dimension(format!(
            "weight row has {} entries, opinion vector {}",
            w_row.len(),
            x.len()
        )));
    }
    let total: f64 = w_row.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroRowSum { row: 0 });
    }
    let weighted: f64 = w_row.iter().zip(x).map(|(w, x)| w * x).sum();
    Ok(weighted / total)
}

/// Sources holding exactly the same opinion act as a single source.
fn distinct_sources(h: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(h.len());
    for &v in h {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

struct BiasTerms {
    alpha: f64,
    conf: f64,
    neg: f64,
}

fn bias_terms(sys: &SocialSystem, i: usize, x: &DVector<f64>, sources: &[f64]) -> Result<BiasTerms> {
    let row_sum = sys.row_sum(i);
    if row_sum <= 0.0 {
        return Err(Error::ZeroRowSum { row: i });
    }
    let xbar = sys.w.row(i).dot(&x.transpose()) / row_sum;
    let mut conf = 0.0;
    let mut neg = 0.0;
    let mut conf_weight = 0.0;
    let mut neg_weight = 0.0;
    for &h in sources {
        let c = confirmation_weight(x[i], h, sys.eps[i])?;
        let nw = negativity_weight(xbar, h, sys.eta[i])?;
        conf_weight += c;
        neg_weight += nw;
        conf += c * h;
        neg += nw * h;
    }
    let alpha = 1.0 - row_sum - conf_weight - neg_weight - sys.chi[i];
    Ok(BiasTerms { alpha, conf, neg })
}

fn check_state(sys: &SocialSystem, x: &DVector<f64>, h: &[f64]) -> Result<()> {
    if x.len() != sys.n() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), sys.n())));
    }
    if h.is_empty() || h.len() > sys.m {
        return Err(Error::Dimension(format!(
            "expected between 1 and {} source opinions, got {}",
            sys.m,
            h.len()
        )));
    }
    for &v in x.iter() {
        check_opinion("x_i", v)?;
    }
    for &v in h {
        check_opinion("h", v)?;
    }
    Ok(())
}

/// Resistance `alpha_i`, the self-weight on the subconscious bias that closes
/// the convex combination.
pub fn resistance(sys: &SocialSystem, i: usize, x: &DVector<f64>, h: &[f64]) -> Result<f64> {
    if i >= sys.n() {
        return Err(Error::OutOfRange { index: i, len: sys.n() });
    }
    check_state(sys, x, h)?;
    let terms = bias_terms(sys, i, x, &distinct_sources(h))?;
    if terms.alpha < 0.0 {
        return Err(Error::Infeasible { row: i, alpha: terms.alpha });
    }
    Ok(terms.alpha)
}

/// One step of the nonlinear dynamics.
pub fn step(sys: &SocialSystem, x: &DVector<f64>, h: &[f64], p_noise: &DVector<f64>) -> Result<DVector<f64>> {
    check_state(sys, x, h)?;
    if p_noise.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "process noise has length {}, expected {}",
            p_noise.len(),
            sys.n()
        )));
    }
    let sources = distinct_sources(h);
    let wx = &sys.w * x;
    let mut next = DVector::zeros(sys.n());
    for i in 0..sys.n() {
        let t = bias_terms(sys, i, x, &sources)?;
        if t.alpha < -1e-12 {
            return Err(Error::Infeasible { row: i, alpha: t.alpha });
        }
        next[i] = t.alpha * sys.s[i] + wx[i] + t.conf + t.neg + p_noise[i];
    }
    Ok(next)
}

/// Offset and matrix of the linear regime obtained when all sources hold
/// `regime.opinion()`.
pub fn build_regime(sys: &SocialSystem, regime: Regime) -> Result<RegimeModel> {
    let n = sys.n();
    let mut offset = DVector::zeros(n);
    let mut matrix = DMatrix::zeros(n, n);
    // sign = +1 for the plus regime, -1 for the minus regime
    let sign = regime.opinion();
    for i in 0..n {
        let row_sum = sys.row_sum(i);
        if row_sum <= 0.0 {
            return Err(Error::ZeroRowSum { row: i });
        }
        let (s, eps, eta, chi) = (sys.s[i], sys.eps[i], sys.eta[i], sys.chi[i]);
        // (1 - sign * s): 1 - s in the plus regime, 1 + s in the minus regime
        let lever = 1.0 - sign * s;
        offset[i] = (1.0 - row_sum - chi) * s + sign * (eps + eta) * lever;
        let shrink = 1.0 - lever * eta / row_sum;
        for j in 0..n {
            matrix[(i, j)] = sys.w[(i, j)] * shrink;
        }
        matrix[(i, i)] += lever * eps;
    }
    Ok(RegimeModel { regime, offset, matrix })
}

/// Ordered list of regime blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub segments: Vec<(Regime, usize)>,
}

impl Schedule {
    pub fn new(segments: Vec<(Regime, usize)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Schedule("schedule has no segments".into()));
        }
        if segments.iter().any(|&(_, len)| len == 0) {
            return Err(Error::Schedule("segment lengths must be at least 1".into()));
        }
        Ok(Schedule { segments })
    }

    /// A `-1` block of `minus_len` steps followed by a `+1` block of `plus_len` steps.
    pub fn minus_then_plus(minus_len: usize, plus_len: usize) -> Result<Self> {
        let segments = [(Regime::Minus, minus_len), (Regime::Plus, plus_len)]
            .into_iter()
            .filter(|&(_, l)| l > 0)
            .collect();
        Schedule::new(segments)
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|&(_, l)| l).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Regime label for every step.
    pub fn labels(&self) -> Vec<Regime> {
        self.segments
            .iter()
            .flat_map(|&(r, l)| std::iter::repeat_n(r, l))
            .collect()
    }

    /// Index `p` of the last `-1` step when the schedule is one `-1` block
    /// followed by one `+1` block (either may be empty).
    pub fn minus_block_end(&self) -> Option<usize> {
        let labels = self.labels();
        let p = labels.iter().take_while(|&&r| r == Regime::Minus).count();
        labels[p..].iter().all(|&r| r == Regime::Plus).then_some(p)
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// Parses `-1:20,+1:30`.
    fn from_str(s: &str) -> Result<Self> {
        let segments = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|tok| {
                let (r, l) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::Schedule(format!("expected REGIME:LENGTH, got {tok:?}")))?;
                let len = l
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Schedule(format!("bad length in {tok:?}: {e}")))?;
                Ok((r.parse::<Regime>()?, len))
            })
            .collect::<Result<Vec<_>>>()?;
        Schedule::new(segments)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Latent opinions; empty for observed-only data.
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub regimes: Vec<Regime>,
    /// `process_noise[k]` is the draw added when producing `x[k + 1]`.
    pub process_noise: Option<Vec<DVector<f64>>>,
    pub observation_noise: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }
}

fn truncated_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64, bound: f64) -> f64 {
    if sigma == 0.0 || bound == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let v = sigma * z;
        if v.abs() < bound {
            return v;
        }
    }
}

/// Simulates the dynamics with the noise stream seeded from `sys.noise.seed`.
pub fn simulate(sys: &SocialSystem, schedule: &Schedule, x1: &DVector<f64>) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(sys.noise.seed);
    simulate_with_rng(sys, schedule, x1, &mut rng)
}

/// Simulates `schedule.len()` samples. The sources hold the opinion of step
/// `k` when `x(k + 1)` is produced, and `y(k) = x(k) + o(k)`.
pub fn simulate_with_rng<R: Rng + ?Sized>(
    sys: &SocialSystem,
    schedule: &Schedule,
    x1: &DVector<f64>,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = sys.n();
    if x1.len() != n {
        return Err(Error::Dimension(format!("initial state has length {}, expected {n}", x1.len())));
    }
    for &v in x1.iter() {
        check_opinion("x_i(1)", v)?;
    }
    let regimes = schedule.labels();
    let steps = regimes.len();
    let obs = Normal::new(sys.noise.mu_o, sys.noise.sigma_o)
        .map_err(|e| Error::Config(format!("observation noise: {e}")))?;

    let mut x = Vec::with_capacity(steps);
    let mut y = Vec::with_capacity(steps);
    let mut p_rec = Vec::with_capacity(steps.saturating_sub(1));
    let mut o_rec = Vec::with_capacity(steps);
    let mut state = x1.clone();
    for (k, regime) in regimes.iter().enumerate() {
        let o = DVector::from_fn(n, |_, _| obs.sample(rng));
        y.push(&state + &o);
        o_rec.push(o);
        x.push(state.clone());
        if k + 1 < steps {
            let p = DVector::from_fn(n, |i, _| truncated_gaussian(rng, sys.noise.sigma_p, sys.chi[i]));
            state = step(sys, &state, &[regime.opinion()], &p)?;
            p_rec.push(p);
        }
    }
    Ok(Trajectory {
        x,
        y,
        regimes,
        process_noise: Some(p_rec),
        observation_noise: Some(o_rec),
    })
}

/// Product of the regime matrices from step `from` up to step `to`
/// (inclusive, 1-based), latest on the left, for a `-1`-then-`+1` schedule.
struct TwoBlockPowers {
    minus: Vec<DMatrix<f64>>,
    plus: Vec<DMatrix<f64>>,
    minus_end: usize,
}

impl TwoBlockPowers {
    fn new(a_minus: &DMatrix<f64>, a_plus: &DMatrix<f64>, minus_end: usize, horizon: usize) -> Self {
        let powers = |a: &DMatrix<f64>| {
            let mut out = vec![DMatrix::identity(a.nrows(), a.ncols())];
            for k in 1..=horizon {
                out.push(a * &out[k - 1]);
            }
            out
        };
        TwoBlockPowers {
            minus: powers(a_minus),
            plus: powers(a_plus),
            minus_end,
        }
    }

    /// Propagator over the steps `first..=last`; identity when the range is empty.
    fn over(&self, first: usize, last: usize) -> DMatrix<f64> {
        if first > last {
            return self.minus[0].clone();
        }
        let minus_steps = last.min(self.minus_end).saturating_sub(first - 1);
        let plus_steps = (last - first + 1) - minus_steps;
        &self.plus[plus_steps] * &self.minus[minus_steps]
    }
}

/// `y(j)` from the closed-form solution of the switched linear system, using
/// the noise recorded in `traj`. Only valid for schedules made of one `-1`
/// block followed by one `+1` block.
pub fn closed_form_state(
    sys: &SocialSystem,
    schedule: &Schedule,
    j: usize,
    traj: &Trajectory,
) -> Result<DVector<f64>> {
    let len = schedule.len();
    if j == 0 || j > len || j > traj.len() {
        return Err(Error::OutOfRange { index: j, len: len.min(traj.len()) });
    }
    let minus_end = schedule
        .minus_block_end()
        .ok_or_else(|| Error::Schedule("closed form needs one -1 block followed by one +1 block".into()))?;
    let (p, o) = match (&traj.process_noise, &traj.observation_noise) {
        (Some(p), Some(o)) => (p, o),
        _ => return Err(Error::Input("trajectory carries no noise record".into())),
    };
    let x1 = traj
        .x
        .first()
        .ok_or_else(|| Error::Input("trajectory carries no latent states".into()))?;

    let minus = build_regime(sys, Regime::Minus)?;
    let plus = build_regime(sys, Regime::Plus)?;
    let powers = TwoBlockPowers::new(&minus.matrix, &plus.matrix, minus_end, j);
    let offset = |step: usize| {
        if step <= minus_end {
            &minus.offset
        } else {
            &plus.offset
        }
    };

    let mut y = powers.over(1, j - 1) * x1;
    for i in 1..j {
        let src = j - i;
        let forced = offset(src) + &p[src - 1];
        y += powers.over(src + 1, j - 1) * forced;
    }
    Ok(y + &o[j - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowFeasibility {
    pub row: usize,
    pub row_sum: f64,
    /// `row_sum + 2 m eps + 2 m eta + chi`; the worst-case mass taken from the resistance.
    pub worst_case_load: f64,
    /// `worst_case_load - 1`; positive values are violations.
    pub excess: f64,
    pub zero_row: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub rows: Vec<RowFeasibility>,
}

impl FeasibilityReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RowFeasibility> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

/// Checks that the resistance stays nonnegative for every reachable state,
/// sensed expectation and source opinion.
pub fn feasibility_check(sys: &SocialSystem) -> FeasibilityReport {
    let m = sys.m as f64;
    let rows = (0..sys.n())
        .map(|i| {
            let row_sum = sys.row_sum(i);
            let load = row_sum + 2.0 * m * sys.eps[i] + 2.0 * m * sys.eta[i] + sys.chi[i];
            let zero_row = row_sum <= 0.0;
            RowFeasibility {
                row: i,
                row_sum,
                worst_case_load: load,
                excess: load - 1.0,
                zero_row,
                pass: !zero_row && load <= 1.0 + 1e-12,
            }
        })
        .collect();
    FeasibilityReport { rows }
}

/// Uniform initial state on `[-1, 1]^n`.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))
}

/// [`random_state`] drawn from its own seeded stream.
pub fn seeded_random_state(n: usize, seed: u64) -> DVector<f64> {
    random_state(n, &mut ChaCha8Rng::seed_from_u64(seed))
}
