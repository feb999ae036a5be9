//! Utility (NDCG@K), utility risk, expected exposure, and the
//! squared-disparity fairness measure, each with Monte Carlo and
//! exact-enumeration estimators.
//!
//! NDCG uses exponential gains `2^rel - 1` and `log2(i+1)` discounts (the
//! LETOR convention). The utility risk of a stochastic ranker is the
//! expected `1 - NDCG@K` under its ranking distribution; per-query risks are
//! averaged arithmetically across queries.
//!
//! Expected exposure of a document is the positional weight mass it
//! receives under the ranking distribution,
//! `E(d) = Σ_y π(y) Σ_k θ_k 1(y_k = d)`; documents outside the top K get 0.
//! The squared disparity of a query sums `(E(d)·ρ_d' - E(d')·ρ_d)^2` over
//! ordered document pairs — zero exactly when exposure is proportional to
//! relevance — and is reported both raw and normalized by the pair count
//! n(n-1), so long queries cannot dominate collection means.
//!
//! Monte Carlo estimators derive one random stream per (query, sample)
//! from an explicit seed, so re-evaluating with a different threshold λ but
//! the same seed reuses the same underlying uniforms (common random
//! numbers). Risk curves over λ are therefore smooth, which the threshold
//! search depends on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::plmodel::{
    exact_ranking_distribution, sample_ranking, Ranking, RcQuery, RcScoreTable, TplConfig,
    EXACT_ENUMERATION_LIMIT,
};
use crate::seeds::{fnv1a, mix};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exponential gain, `2^rel - 1`.
fn gain(rel: u8) -> f64 {
    f64::exp2(f64::from(rel)) - 1.0
}

fn dcg<I: IntoIterator<Item = u8>>(rels: I, k: usize) -> f64 {
    rels.into_iter()
        .take(k)
        .enumerate()
        .map(|(i, rel)| gain(rel) / ((i + 2) as f64).log2())
        .sum()
}

/// Ideal DCG: the DCG of the relevance-sorted ordering, truncated at k.
pub fn ideal_dcg(row: &RcQuery, k: usize) -> f64 {
    let mut rels: Vec<u8> = row.docs().iter().map(|d| d.relevance).collect();
    rels.sort_unstable_by(|a, b| b.cmp(a));
    dcg(rels, k)
}

/// NDCG@k of one ranking. Errors when the query has no relevant document
/// (IDCG = 0); such queries are filtered upstream.
pub fn ndcg_at_k(ranking: &Ranking, row: &RcQuery, k: usize) -> Result<f64> {
    let idcg = ideal_dcg(row, k);
    if idcg <= 0.0 {
        return Err(Error::Domain(format!(
            "query {} has no relevant documents (IDCG = 0)",
            row.qid()
        )));
    }
    let dcg = dcg(ranking.indices().map(|i| row.docs()[i].relevance), k);
    Ok((dcg / idcg).clamp(0.0, 1.0))
}

/// The deterministic ranking: canonical score order, truncated at k.
pub fn deterministic_ranking(row: &RcQuery, k: usize) -> Ranking {
    Ranking::new((0..k.min(row.len()) as u32).collect())
}

/// Precomputed gains, discounts, and IDCG for one query, so Monte Carlo
/// loops score rankings with multiplications only.
pub(crate) struct QueryScorer {
    gains: Vec<f64>,
    discounts: Vec<f64>,
    idcg: f64,
}

impl QueryScorer {
    pub(crate) fn new(row: &RcQuery, k: usize) -> Result<Self> {
        let idcg = ideal_dcg(row, k);
        if idcg <= 0.0 {
            return Err(Error::Domain(format!(
                "query {} has no relevant documents (IDCG = 0)",
                row.qid()
            )));
        }
        Ok(QueryScorer {
            gains: row.docs().iter().map(|d| gain(d.relevance)).collect(),
            discounts: (0..k.min(row.len()))
                .map(|i| 1.0 / ((i + 2) as f64).log2())
                .collect(),
            idcg,
        })
    }

    pub(crate) fn ndcg(&self, ranking: &Ranking) -> f64 {
        let mut dcg = 0.0;
        for (pos, i) in ranking.indices().enumerate() {
            dcg += self.gains[i] * self.discounts[pos];
        }
        (dcg / self.idcg).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    MonteCarlo,
    Exact,
}

/// Per-query and mean utility risk (`1 - NDCG@K`).
#[derive(Debug, Clone, Serialize)]
pub struct RiskEstimate {
    pub per_query: Vec<QueryRisk>,
    pub mean: f64,
    /// Samples per query (0 for exact enumeration).
    pub m: usize,
    pub estimator: EstimatorKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRisk {
    pub qid: String,
    pub risk: f64,
}

/// The (query, sample) random stream used by every Monte Carlo estimator in
/// this module. Keyed by qid rather than position so that subsetting or
/// reordering a collection never changes a query's draws.
pub(crate) fn sample_stream(seed: u64, qid: &str, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, fnv1a(qid.as_bytes())));
    rng.set_stream(sample as u64);
    rng
}

/// Pre-draw the uniforms for all m samples of one query, flattened as
/// m x min(K, n). Replaying slices of this buffer against different
/// thresholds implements common random numbers.
pub(crate) fn query_uniforms(row: &RcQuery, config: &TplConfig, seed: u64) -> Vec<f64> {
    let len = config.k.min(row.len());
    let mut out = Vec::with_capacity(config.m * len);
    for j in 0..config.m {
        let mut rng = sample_stream(seed, row.qid(), j);
        for _ in 0..len {
            out.push(rng.random::<f64>());
        }
    }
    out
}

fn mc_query_risk(row: &RcQuery, config: &TplConfig, seed: u64) -> Result<f64> {
    let scorer = QueryScorer::new(row, config.k)?;
    let len = config.k.min(row.len());
    let mut loss_sum = 0.0;
    let mut uniforms = vec![0.0; len];
    for j in 0..config.m {
        let mut rng = sample_stream(seed, row.qid(), j);
        for u in uniforms.iter_mut() {
            *u = rng.random::<f64>();
        }
        let ranking = sample_ranking(row, config, &uniforms);
        loss_sum += 1.0 - scorer.ndcg(&ranking);
    }
    Ok(loss_sum / config.m as f64)
}

/// Monte Carlo utility risk with m samples per query (m from `config`).
pub fn mc_risk(table: &RcScoreTable, config: &TplConfig, seed: u64) -> Result<RiskEstimate> {
    let per_query: Vec<QueryRisk> = table
        .queries()
        .par_iter()
        .map(|row| {
            Ok(QueryRisk {
                qid: row.qid().to_string(),
                risk: mc_query_risk(row, config, seed)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean = per_query.iter().map(|q| q.risk).sum::<f64>() / per_query.len().max(1) as f64;
    Ok(RiskEstimate {
        per_query,
        mean,
        m: config.m,
        estimator: EstimatorKind::MonteCarlo,
    })
}

fn exact_query_risk(row: &RcQuery, config: &TplConfig) -> Result<f64> {
    let dist = exact_ranking_distribution(row, config)?;
    let mut risk = 0.0;
    for (ranking, p) in &dist {
        risk += p * (1.0 - ndcg_at_k(ranking, row, config.k)?);
    }
    Ok(risk)
}

/// Exact utility risk by enumeration; every query must have n <= 8.
pub fn exact_risk(table: &RcScoreTable, config: &TplConfig) -> Result<RiskEstimate> {
    let per_query: Vec<QueryRisk> = table
        .queries()
        .par_iter()
        .map(|row| {
            Ok(QueryRisk {
                qid: row.qid().to_string(),
                risk: exact_query_risk(row, config)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean = per_query.iter().map(|q| q.risk).sum::<f64>() / per_query.len().max(1) as f64;
    Ok(RiskEstimate {
        per_query,
        mean,
        m: 0,
        estimator: EstimatorKind::Exact,
    })
}

/// How to estimate an expectation over the TPL distribution.
#[derive(Debug, Clone, Copy)]
pub enum ExposureMode {
    Exact,
    MonteCarlo { m: usize, seed: u64 },
}

/// Expected positional weight mass per document (canonical index order).
pub fn expected_exposure(
    row: &RcQuery,
    config: &TplConfig,
    mode: ExposureMode,
) -> Result<Vec<f64>> {
    let mut exposure = vec![0.0; row.len()];
    match mode {
        ExposureMode::Exact => {
            for (ranking, p) in exact_ranking_distribution(row, config)? {
                for (pos, i) in ranking.indices().enumerate() {
                    exposure[i] += p * config.theta[pos];
                }
            }
        }
        ExposureMode::MonteCarlo { m, seed } => {
            let len = config.k.min(row.len());
            let mut uniforms = vec![0.0; len];
            for j in 0..m {
                let mut rng = sample_stream(seed, row.qid(), j);
                for u in uniforms.iter_mut() {
                    *u = rng.random::<f64>();
                }
                let ranking = sample_ranking(row, config, &uniforms);
                for (pos, i) in ranking.indices().enumerate() {
                    exposure[i] += config.theta[pos];
                }
            }
            for e in exposure.iter_mut() {
                *e /= m as f64;
            }
        }
    }
    Ok(exposure)
}

/// Exposure under the deterministic ranking: θ_k at rank k, 0 past K.
pub fn deterministic_exposure(row: &RcQuery, config: &TplConfig) -> Vec<f64> {
    let mut exposure = vec![0.0; row.len()];
    for (pos, e) in exposure.iter_mut().take(config.k).enumerate() {
        *e = config.theta[pos];
    }
    exposure
}

/// Relevance weighting ρ used in the disparity measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoMode {
    /// Raw relevance grade (default).
    Grade,
    /// Exponential gain `2^rel - 1`.
    ExpGain,
}

impl RhoMode {
    fn rho(self, rel: u8) -> f64 {
        match self {
            RhoMode::Grade => f64::from(rel),
            RhoMode::ExpGain => gain(rel),
        }
    }
}

/// Squared disparity of one query, raw and pair-normalized.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DisparityPair {
    /// Raw sum over ordered pairs of `(E(d)ρ_d' - E(d')ρ_d)^2`.
    pub raw: f64,
    /// Raw value divided by the ordered-pair count n(n-1).
    pub normalized: f64,
}

/// Squared exposure disparity of one query. Single-document queries have no
/// pairs and get 0 by convention.
pub fn sq_disparity(row: &RcQuery, exposures: &[f64], rho_mode: RhoMode) -> DisparityPair {
    let n = row.len();
    debug_assert_eq!(exposures.len(), n);
    if n < 2 {
        return DisparityPair {
            raw: 0.0,
            normalized: 0.0,
        };
    }
    let rho: Vec<f64> = row
        .docs()
        .iter()
        .map(|d| rho_mode.rho(d.relevance))
        .collect();
    let mut raw = 0.0;
    for d in 0..n {
        for d2 in 0..n {
            if d == d2 {
                continue;
            }
            raw += (exposures[d] * rho[d2] - exposures[d2] * rho[d]).powi(2);
        }
    }
    DisparityPair {
        raw,
        normalized: raw / (n * (n - 1)) as f64,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryDisparity {
    pub qid: String,
    pub raw: f64,
    pub normalized: f64,
}

/// Collection-level disparity: arithmetic mean over queries, in both
/// normalizations.
#[derive(Debug, Clone, Serialize)]
pub struct DisparityResult {
    pub per_query: Vec<QueryDisparity>,
    pub mean_normalized: f64,
    pub mean_raw: f64,
}

pub fn aggregate_fairness(per_query: Vec<QueryDisparity>) -> DisparityResult {
    let n = per_query.len().max(1) as f64;
    let mean_normalized = per_query.iter().map(|q| q.normalized).sum::<f64>() / n;
    let mean_raw = per_query.iter().map(|q| q.raw).sum::<f64>() / n;
    DisparityResult {
        per_query,
        mean_normalized,
        mean_raw,
    }
}

/// Per-query NDCG@K and its mean.
#[derive(Debug, Clone, Serialize)]
pub struct UtilityResult {
    pub per_query: Vec<QueryUtility>,
    pub mean_ndcg: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryUtility {
    pub qid: String,
    pub ndcg: f64,
}

/// NDCG@K of the deterministic (score-sorted) ranking for every query.
pub fn deterministic_utility(table: &RcScoreTable, k: usize) -> Result<UtilityResult> {
    let per_query: Vec<QueryUtility> = table
        .queries()
        .iter()
        .map(|row| {
            Ok(QueryUtility {
                qid: row.qid().to_string(),
                ndcg: ndcg_at_k(&deterministic_ranking(row, k), row, k)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean_ndcg = per_query.iter().map(|q| q.ndcg).sum::<f64>() / per_query.len().max(1) as f64;
    Ok(UtilityResult {
        per_query,
        mean_ndcg,
        k,
    })
}

/// Per-query metrics of one TPL configuration on one collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub qid: String,
    pub ndcg: f64,
    pub risk: f64,
    pub disparity: f64,
    pub disparity_raw: f64,
}

/// Collection-level metrics of one TPL configuration: expected NDCG@K,
/// utility risk, and exposure disparity, from shared samples.
#[derive(Debug, Clone, Serialize)]
pub struct EvaluationSummary {
    pub k: usize,
    pub lambda: Option<f64>,
    pub mean_ndcg: f64,
    pub mean_risk: f64,
    pub mean_disparity: f64,
    pub mean_disparity_raw: f64,
    pub estimator: EstimatorKind,
    pub m: usize,
    pub per_query: Vec<QueryMetrics>,
}

/// Estimator selection for [`evaluate_collection`].
#[derive(Debug, Clone, Copy)]
pub enum EvalMode {
    Exact,
    MonteCarlo {
        seed: u64,
    },
    /// Exact when every query has n <= 8, otherwise Monte Carlo.
    Auto {
        seed: u64,
    },
}

fn evaluate_query(
    row: &RcQuery,
    config: &TplConfig,
    exact: bool,
    seed: u64,
    rho: RhoMode,
) -> Result<QueryMetrics> {
    let (risk, exposure) = if exact {
        let dist = exact_ranking_distribution(row, config)?;
        let mut risk = 0.0;
        let mut exposure = vec![0.0; row.len()];
        for (ranking, p) in &dist {
            risk += p * (1.0 - ndcg_at_k(ranking, row, config.k)?);
            for (pos, i) in ranking.indices().enumerate() {
                exposure[i] += p * config.theta[pos];
            }
        }
        (risk, exposure)
    } else {
        let scorer = QueryScorer::new(row, config.k)?;
        let len = config.k.min(row.len());
        let mut uniforms = vec![0.0; len];
        let mut loss_sum = 0.0;
        let mut exposure = vec![0.0; row.len()];
        for j in 0..config.m {
            let mut rng = sample_stream(seed, row.qid(), j);
            for u in uniforms.iter_mut() {
                *u = rng.random::<f64>();
            }
            let ranking = sample_ranking(row, config, &uniforms);
            loss_sum += 1.0 - scorer.ndcg(&ranking);
            for (pos, i) in ranking.indices().enumerate() {
                exposure[i] += config.theta[pos];
            }
        }
        for e in exposure.iter_mut() {
            *e /= config.m as f64;
        }
        (loss_sum / config.m as f64, exposure)
    };
    let disparity = sq_disparity(row, &exposure, rho);
    Ok(QueryMetrics {
        qid: row.qid().to_string(),
        ndcg: 1.0 - risk,
        risk,
        disparity: disparity.normalized,
        disparity_raw: disparity.raw,
    })
}

/// Evaluate risk, NDCG, and disparity of `config` on a whole collection in
/// one pass, reusing the same samples for every metric.
pub fn evaluate_collection(
    table: &RcScoreTable,
    config: &TplConfig,
    mode: EvalMode,
) -> Result<EvaluationSummary> {
    let (exact, seed) = match mode {
        EvalMode::Exact => (true, 0),
        EvalMode::MonteCarlo { seed } => (false, seed),
        EvalMode::Auto { seed } => (table.max_docs() <= EXACT_ENUMERATION_LIMIT, seed),
    };
    let per_query: Vec<QueryMetrics> = table
        .queries()
        .par_iter()
        .map(|row| evaluate_query(row, config, exact, seed, RhoMode::Grade))
        .collect::<Result<_>>()?;
    Ok(summarize(per_query, config, exact))
}

/// Metrics of the deterministic baseline (no sampling).
pub fn evaluate_deterministic(
    table: &RcScoreTable,
    config: &TplConfig,
) -> Result<EvaluationSummary> {
    let per_query: Vec<QueryMetrics> = table
        .queries()
        .iter()
        .map(|row| {
            let ndcg = ndcg_at_k(&deterministic_ranking(row, config.k), row, config.k)?;
            let exposure = deterministic_exposure(row, config);
            let disparity = sq_disparity(row, &exposure, RhoMode::Grade);
            Ok(QueryMetrics {
                qid: row.qid().to_string(),
                ndcg,
                risk: 1.0 - ndcg,
                disparity: disparity.normalized,
                disparity_raw: disparity.raw,
            })
        })
        .collect::<Result<_>>()?;
    let mut summary = summarize(per_query, config, true);
    summary.lambda = None;
    Ok(summary)
}

fn summarize(per_query: Vec<QueryMetrics>, config: &TplConfig, exact: bool) -> EvaluationSummary {
    let n = per_query.len().max(1) as f64;
    let lambda = match &config.lambdas {
        crate::plmodel::Lambdas::Shared(l) => Some(*l),
        crate::plmodel::Lambdas::PerPosition(_) => None,
    };
    EvaluationSummary {
        k: config.k,
        lambda,
        mean_ndcg: per_query.iter().map(|q| q.ndcg).sum::<f64>() / n,
        mean_risk: per_query.iter().map(|q| q.risk).sum::<f64>() / n,
        mean_disparity: per_query.iter().map(|q| q.disparity).sum::<f64>() / n,
        mean_disparity_raw: per_query.iter().map(|q| q.disparity_raw).sum::<f64>() / n,
        estimator: if exact {
            EstimatorKind::Exact
        } else {
            EstimatorKind::MonteCarlo
        },
        m: if exact { 0 } else { config.m },
        per_query,
    }
}
