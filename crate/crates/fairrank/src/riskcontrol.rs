//! Calibrated threshold selection: pick λ̂ on a calibration collection so
//! that the utility risk of TPL(λ̂) stays below α with probability at least
//! 1 − δ over calibration draws, or abstain when no threshold certifies.
//!
//! Two certification backends are provided:
//!
//! - **Hoeffding-Bentkus**: the p-value
//!   `min(exp(-n·h1(R̂∧α, α)), e·P(Bin(n,α) <= ceil(n·R̂)))`
//!   tests the null "risk > α"; a candidate certifies when p < δ.
//! - **DKWM**: the upper confidence bound
//!   `R̂ + const·sqrt(ln(2/δ) / (2n))` certifies when it is below α. The
//!   constant telescopes to max − min over the discrete loss levels; for
//!   Monte Carlo risks, whose averaged losses are near-continuous, the
//!   conservative default is 1.
//!
//! Empirical risk falls as λ grows toward the deterministic ranker, but not
//! necessarily monotonically. The monotone envelope
//! `R̃(λ) = max over grid candidates t >= λ of R̂(t)` restores
//! non-increasing risk, so certifying R̃ at λ simultaneously covers every
//! λ' >= λ — the "for all λ' >= λ" structure the guarantee needs. Both
//! backends therefore walk the grid from the largest candidate downward and
//! stop at the first failure (fixed-sequence testing, no multiplicity
//! correction needed); the certified set is always a suffix of the grid and
//! the smallest certified λ is returned, since smaller thresholds mean
//! larger prediction sets and empirically lower disparity.

use serde::{Deserialize, Serialize};

use crate::metrics::{self, EstimatorKind};
use crate::plmodel::{RcScoreTable, TplConfig, EXACT_ENUMERATION_LIMIT};
use crate::{Error, Result};
use rayon::prelude::*;

/// Binary KL divergence `a log(a/b) + (1-a) log((1-a)/(1-b))` with the
/// conventions 0·log 0 = 0 and 0·log(0/b) = 0.
///
/// Requires a <= b; callers clamp `a := min(R̂, α)` first.
pub fn h1(a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Domain(format!("h1: a must lie in [0,1], got {a}")));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::Domain(format!("h1: b must lie in (0,1), got {b}")));
    }
    if a > b {
        return Err(Error::Domain(format!(
            "h1: need a <= b (clamp a := min(r_hat, alpha) first), got a={a} > b={b}"
        )));
    }
    let left = if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    let right = (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln();
    Ok((left + right).max(0.0))
}

/// Lower binomial tail `P(Bin(n, p) <= j)`, summed exactly in log space.
/// No normal approximation.
pub fn binomial_tail(n: u64, p: f64, j: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain("binomial_tail: n must be >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "binomial_tail: p must lie in (0,1), got {p}"
        )));
    }
    if j > n {
        return Err(Error::Domain(format!("binomial_tail: j={j} exceeds n={n}")));
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    // ln C(n,i) p^i q^(n-i), built by the multiplicative recurrence.
    let mut ln_terms = Vec::with_capacity(j as usize + 1);
    let mut ln_term = n as f64 * ln_q;
    ln_terms.push(ln_term);
    for i in 1..=j {
        ln_term += ((n - i + 1) as f64).ln() - (i as f64).ln() + ln_p - ln_q;
        ln_terms.push(ln_term);
    }
    let max = ln_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = ln_terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Hoeffding-Bentkus p-value for the null hypothesis "risk > alpha":
/// `min(exp(-n h1(R̂∧α, α)), e · P(Bin(n, α) <= ceil(n R̂)))`, in (0, 1].
pub fn hb_p_value(r_hat: f64, n: u64, alpha: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain("hb_p_value: n must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "hb_p_value: alpha must lie in (0,1), got {alpha}"
        )));
    }
    if !(-1e-9..=1.0 + 1e-9).contains(&r_hat) {
        return Err(Error::Domain(format!(
            "hb_p_value: r_hat must lie in [0,1], got {r_hat}"
        )));
    }
    let r = r_hat.clamp(0.0, 1.0);
    let hoeffding = (-(n as f64) * h1(r.min(alpha), alpha)?).exp();
    let j = ((n as f64 * r).ceil() as u64).min(n);
    let bentkus = std::f64::consts::E * binomial_tail(n, alpha, j)?;
    Ok(hoeffding.min(bentkus).clamp(f64::MIN_POSITIVE, 1.0))
}

/// DKWM constant for a discrete loss-level set: the sum of adjacent gaps of
/// the sorted distinct levels, which telescopes to max − min.
pub fn dkwm_constant(levels: &[f64]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::Domain(
            "dkwm_constant: need at least one loss level".into(),
        ));
    }
    for w in levels.windows(2) {
        if w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Domain(format!(
                "dkwm_constant: levels must be sorted ascending and distinct, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(levels.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// DKWM upper confidence bound `r_tilde + const·sqrt(ln(2/δ) / (2n))`.
/// May exceed 1; only the comparison against α matters.
pub fn dkwm_ucb(r_tilde: f64, n: u64, delta: f64, konst: f64) -> f64 {
    debug_assert!(n >= 1 && delta > 0.0 && delta < 1.0 && konst >= 0.0);
    r_tilde + konst * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// The threshold that always reduces TPL to the deterministic ranker: RC
/// scores are probabilities <= 1, so λ = 1 empties every prediction set and
/// the clamp rule ranks by score.
pub fn abstention_fallback() -> f64 {
    1.0
}

/// Certification backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Hb,
    Dkwm,
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::Hb => write!(f, "hb"),
            Bound::Dkwm => write!(f, "dkwm"),
        }
    }
}

/// Candidate grid layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// Evenly spaced over [0, P^max].
    Uniform,
    /// Empirical quantiles of the calibration RC scores.
    Quantile,
}

/// Choice of the DKWM constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DkwmConst {
    /// const = 1; the safe default for Monte Carlo risks, whose averaged
    /// losses are near-continuous.
    Conservative,
    /// max − min of the per-query risk values observed on the calibration
    /// grid (<= 1).
    FromLevels,
    Fixed(f64),
}

/// Target risk level, tolerance, backend, and candidate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub alpha: f64,
    pub delta: f64,
    pub bound: Bound,
    /// Strictly ascending candidate thresholds in [0, P^max].
    pub grid: Vec<f64>,
    pub dkwm_const: DkwmConst,
}

impl RiskSpec {
    pub fn new(alpha: f64, delta: f64, bound: Bound, grid: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Validation(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Validation(format!(
                "delta must lie in (0,1), got {delta}"
            )));
        }
        if grid.is_empty() {
            return Err(Error::Validation("candidate grid is empty".into()));
        }
        if grid[0] < 0.0 || grid.iter().any(|l| !l.is_finite()) {
            return Err(Error::Validation(
                "grid values must be finite and >= 0".into(),
            ));
        }
        if grid
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::Validation("grid must be strictly ascending".into()));
        }
        Ok(RiskSpec {
            alpha,
            delta,
            bound,
            grid,
            dkwm_const: DkwmConst::Conservative,
        })
    }

    pub fn with_dkwm_const(mut self, konst: DkwmConst) -> Self {
        self.dkwm_const = konst;
        self
    }
}

/// Evenly spaced grid of `points` candidates spanning [0, p_max].
pub fn uniform_grid(points: usize, p_max: f64) -> Result<Vec<f64>> {
    if points < 1 {
        return Err(Error::Validation("grid needs at least one point".into()));
    }
    if !(p_max >= 0.0 && p_max.is_finite()) {
        return Err(Error::Validation(format!("invalid p_max {p_max}")));
    }
    if points == 1 || p_max == 0.0 {
        return Ok(vec![0.0]);
    }
    Ok((0..points)
        .map(|i| p_max * i as f64 / (points - 1) as f64)
        .collect())
}

/// Grid of `points` empirical quantiles of the given sorted scores,
/// deduplicated to stay strictly ascending.
pub fn quantile_grid(points: usize, sorted_scores: &[f64]) -> Result<Vec<f64>> {
    if points < 1 {
        return Err(Error::Validation("grid needs at least one point".into()));
    }
    if sorted_scores.is_empty() {
        return Err(Error::Validation("no scores to take quantiles of".into()));
    }
    let n = sorted_scores.len();
    let mut grid: Vec<f64> = (0..points)
        .map(|i| {
            let q = if points == 1 {
                0.0
            } else {
                i as f64 / (points - 1) as f64
            };
            sorted_scores[((q * (n - 1) as f64).floor() as usize).min(n - 1)]
        })
        .collect();
    grid.dedup();
    Ok(grid)
}

/// Build a grid for a calibration table under the given mode.
pub fn build_grid(mode: GridMode, points: usize, table: &RcScoreTable) -> Result<Vec<f64>> {
    match mode {
        GridMode::Uniform => uniform_grid(points, table.p_max_global),
        GridMode::Quantile => quantile_grid(points, &table.all_rc_scores()),
    }
}

/// Empirical risk over the candidate grid, with the monotone envelope and
/// per-candidate disparity diagnostics from the same samples.
#[derive(Debug, Clone, Serialize)]
pub struct RiskCurve {
    pub lambdas: Vec<f64>,
    /// Mean empirical risk R̂(λ) over the calibration queries.
    pub r_hat: Vec<f64>,
    /// Monotone envelope R̃(λ) = max over grid candidates t >= λ of R̂(t);
    /// non-increasing and >= R̂ pointwise.
    pub r_tilde: Vec<f64>,
    /// Mean normalized disparity at each candidate.
    pub disparity: Vec<f64>,
    pub n_queries: usize,
    pub estimator: EstimatorKind,
    /// Range of per-query risk values observed across the whole grid.
    pub loss_min: f64,
    pub loss_max: f64,
}

impl RiskCurve {
    /// DKWM constant derived from the observed per-query loss range.
    pub fn observed_const(&self) -> f64 {
        (self.loss_max - self.loss_min).max(0.0)
    }
}

/// Suffix running maximum: envelope[i] = max(values[i..]).
pub fn monotone_envelope(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] = out[i].max(out[i + 1]);
    }
    out
}

fn query_curve(
    row: &crate::plmodel::RcQuery,
    config: &TplConfig,
    lambdas: &[f64],
    exact: bool,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut risks = Vec::with_capacity(lambdas.len());
    let mut disparities = Vec::with_capacity(lambdas.len());
    let len = config.k.min(row.len());
    let uniforms = if exact {
        Vec::new()
    } else {
        metrics::query_uniforms(row, config, seed)
    };
    let scorer = metrics::QueryScorer::new(row, config.k)?;
    for &lambda in lambdas {
        let cfg = config.with_lambda(lambda);
        let (risk, exposure) = if exact {
            let dist = crate::plmodel::exact_ranking_distribution(row, &cfg)?;
            let mut risk = 0.0;
            let mut exposure = vec![0.0; row.len()];
            for (ranking, p) in &dist {
                risk += p * (1.0 - metrics::ndcg_at_k(ranking, row, cfg.k)?);
                for (pos, i) in ranking.indices().enumerate() {
                    exposure[i] += p * cfg.theta[pos];
                }
            }
            (risk, exposure)
        } else {
            let mut loss_sum = 0.0;
            let mut exposure = vec![0.0; row.len()];
            for j in 0..config.m {
                let slice = &uniforms[j * len..(j + 1) * len];
                let ranking = crate::plmodel::sample_ranking(row, &cfg, slice);
                loss_sum += 1.0 - scorer.ndcg(&ranking);
                for (pos, i) in ranking.indices().enumerate() {
                    exposure[i] += cfg.theta[pos];
                }
            }
            for e in exposure.iter_mut() {
                *e /= config.m as f64;
            }
            (loss_sum / config.m as f64, exposure)
        };
        risks.push(risk);
        disparities.push(metrics::sq_disparity(row, &exposure, metrics::RhoMode::Grade).normalized);
    }
    Ok((risks, disparities))
}

/// Evaluate mean risk at every grid candidate with common random numbers,
/// then apply the monotone envelope. Uses exact enumeration when every
/// query has n <= 8, Monte Carlo with m samples per query otherwise.
pub fn build_risk_curve(
    table: &RcScoreTable,
    config: &TplConfig,
    spec: &RiskSpec,
    seed: u64,
) -> Result<RiskCurve> {
    if table.is_empty() {
        return Err(Error::Validation("calibration collection is empty".into()));
    }
    let exact = table.max_docs() <= EXACT_ENUMERATION_LIMIT;
    let per_query: Vec<(Vec<f64>, Vec<f64>)> = table
        .queries()
        .par_iter()
        .map(|row| query_curve(row, config, &spec.grid, exact, seed))
        .collect::<Result<_>>()?;

    let n_q = table.len();
    let m_grid = spec.grid.len();
    let mut r_hat = vec![0.0; m_grid];
    let mut disparity = vec![0.0; m_grid];
    let mut loss_min = f64::INFINITY;
    let mut loss_max = f64::NEG_INFINITY;
    for (risks, disparities) in &per_query {
        for i in 0..m_grid {
            r_hat[i] += risks[i];
            disparity[i] += disparities[i];
            loss_min = loss_min.min(risks[i]);
            loss_max = loss_max.max(risks[i]);
        }
    }
    for i in 0..m_grid {
        r_hat[i] /= n_q as f64;
        disparity[i] /= n_q as f64;
    }
    let r_tilde = monotone_envelope(&r_hat);
    Ok(RiskCurve {
        lambdas: spec.grid.clone(),
        r_hat,
        r_tilde,
        disparity,
        n_queries: n_q,
        estimator: if exact {
            EstimatorKind::Exact
        } else {
            EstimatorKind::MonteCarlo
        },
        loss_min,
        loss_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Selected,
    Abstain,
}

/// Per-candidate diagnostics recorded whatever the outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda: f64,
    pub r_hat: f64,
    pub r_tilde: f64,
    /// HB p-value or DKWM UCB, depending on the backend.
    pub p_or_ucb: f64,
    pub disparity: f64,
    /// DKWM p-value criterion threshold `R̂ + 2·const·sqrt(ln(1/δ)/(2n))`;
    /// diagnostic only, never drives selection.
    pub dkwm_p_bound: f64,
}

/// Result of threshold selection. Abstention is a valid outcome, not an
/// error; callers fall back to [`abstention_fallback`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_hat: Option<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub bound: Bound,
    /// The certified set Λ̂, a contiguous suffix of the grid.
    pub certified: Vec<f64>,
    pub grid: Vec<GridRow>,
}

impl CalibrationResult {
    /// λ̂ when selected, otherwise the deterministic fallback λ = 1.
    pub fn lambda_or_fallback(&self) -> f64 {
        self.lambda_hat.unwrap_or_else(abstention_fallback)
    }
}

fn resolve_const(spec: &RiskSpec, curve: &RiskCurve) -> f64 {
    match spec.dkwm_const {
        DkwmConst::Conservative => 1.0,
        DkwmConst::FromLevels => curve.observed_const(),
        DkwmConst::Fixed(c) => c,
    }
}

/// Fixed-sequence selection over the envelope, walking from the largest
/// candidate downward and stopping at the first failure. Returns the
/// smallest certified λ (the fairness-optimal certified choice on a
/// monotone family) or Abstain.
pub fn select_threshold(curve: &RiskCurve, spec: &RiskSpec) -> Result<CalibrationResult> {
    if curve.lambdas != spec.grid {
        return Err(Error::Validation(
            "risk curve and spec were built over different grids".into(),
        ));
    }
    let n = curve.n_queries as u64;
    let konst = resolve_const(spec, curve);

    let criterion_value = |i: usize| -> Result<f64> {
        match spec.bound {
            Bound::Hb => hb_p_value(curve.r_tilde[i], n, spec.alpha),
            Bound::Dkwm => Ok(dkwm_ucb(curve.r_tilde[i], n, spec.delta, konst)),
        }
    };
    let certifies = |value: f64| -> bool {
        match spec.bound {
            Bound::Hb => value < spec.delta,
            Bound::Dkwm => value < spec.alpha,
        }
    };

    let m = curve.lambdas.len();
    let mut p_or_ucb = vec![0.0; m];
    for (i, slot) in p_or_ucb.iter_mut().enumerate() {
        *slot = criterion_value(i)?;
    }

    let mut first_certified = m;
    for i in (0..m).rev() {
        if certifies(p_or_ucb[i]) {
            first_certified = i;
        } else {
            break;
        }
    }

    let certified: Vec<f64> = curve.lambdas[first_certified..].to_vec();
    let (outcome, lambda_hat) = if certified.is_empty() {
        (Outcome::Abstain, None)
    } else {
        (Outcome::Selected, Some(certified[0]))
    };

    let dkwm_width = 2.0 * konst * ((1.0 / spec.delta).ln() / (2.0 * n as f64)).sqrt();
    let grid = (0..m)
        .map(|i| GridRow {
            lambda: curve.lambdas[i],
            r_hat: curve.r_hat[i],
            r_tilde: curve.r_tilde[i],
            p_or_ucb: p_or_ucb[i],
            disparity: curve.disparity[i],
            dkwm_p_bound: curve.r_hat[i] + dkwm_width,
        })
        .collect();

    Ok(CalibrationResult {
        outcome,
        lambda_hat,
        alpha: spec.alpha,
        delta: spec.delta,
        bound: spec.bound,
        certified,
        grid,
    })
}

/// Convenience wrapper: build the curve and select in one call.
pub fn calibrate(
    table: &RcScoreTable,
    config: &TplConfig,
    spec: &RiskSpec,
    seed: u64,
) -> Result<CalibrationResult> {
    let curve = build_risk_curve(table, config, spec, seed)?;
    select_threshold(&curve, spec)
}
