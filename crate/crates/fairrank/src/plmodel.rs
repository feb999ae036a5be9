//! Score normalization, risk-control scores, and the deterministic /
//! Plackett-Luce / thresholded-PL ranking models.
//!
//! Raw scores from the external scorer are standardized against a reference
//! collection, and each query's risk-control (RC) score is the softmax
//! probability of sampling that document first under a plain Plackett-Luce
//! model over the standardized scores:
//!
//! ```text
//!   s_d  = (s_d_raw - mean) / std
//!   s̃_d  = exp(s_d/τ) / Σ_d' exp(s_d'/τ)
//! ```
//!
//! Unlike raw scores, RC scores are bounded in (0, 1], so a threshold grid
//! has a known range. The thresholded PL (TPL) model fills each position k
//! by sampling from the prediction set `{d : s̃_d >= λ_k, d not yet ranked}`
//! with probability proportional to `exp(s_d/τ)`. λ = 0 recovers PL; λ above
//! every RC score collapses each prediction set to the highest-scored
//! remaining document (the clamp rule), which recovers the deterministic
//! ranking. The clamp rule makes the model total over λ ∈ [0, ∞), so the
//! abstention fallback λ = 1 always means "deterministic".
//!
//! Sampling consumes exactly one uniform variate per position regardless of
//! λ, which keeps a fixed stream of uniforms aligned across different
//! thresholds (common random numbers for threshold sweeps).

use rand::Rng;
use serde::Serialize;

use crate::dataset::{QueryCollection, ScoredQuery};
use crate::{Error, Result};

/// Tie-break and determinism rule everywhere: higher score first, then
/// doc_id ascending.
fn canonical_cmp(a: &RcDoc, b: &RcDoc) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Pooled mean and population standard deviation of raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

impl NormalizationStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(Error::Validation(format!(
                "invalid normalization stats: mean={mean}, std={std}"
            )));
        }
        Ok(NormalizationStats { mean, std })
    }

    /// All reference scores were identical; standardization is undefined.
    pub fn is_degenerate(&self) -> bool {
        self.std == 0.0
    }
}

/// Fit pooled normalization stats over every raw score in the reference
/// collection (population standard deviation, no Bessel correction).
pub fn fit_normalization(reference: &QueryCollection) -> Result<NormalizationStats> {
    let n = reference.num_docs();
    if n == 0 {
        return Err(Error::Validation(
            "cannot fit normalization on an empty collection".into(),
        ));
    }
    let scores = reference
        .queries
        .iter()
        .flat_map(|q| q.docs.iter().map(|d| d.raw_score));
    let mean = scores.clone().sum::<f64>() / n as f64;
    let var = scores.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    NormalizationStats::new(mean, var.sqrt())
}

/// Threshold parameterization: one shared λ (the calibrated case) or an
/// explicit per-position vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Lambdas {
    Shared(f64),
    PerPosition(Vec<f64>),
}

/// TPL model parameters: cutoff K, temperature τ, threshold(s) λ, Monte
/// Carlo sample count m, and position weights θ (positive, non-increasing).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TplConfig {
    pub k: usize,
    pub tau: f64,
    pub lambdas: Lambdas,
    pub m: usize,
    pub theta: Vec<f64>,
}

/// θ_k = 1/log2(k+1), matching the DCG discount so that "exposure
/// proportional to relevance" aligns the utility and fairness scales.
pub fn default_theta(k: usize) -> Vec<f64> {
    (1..=k).map(|i| 1.0 / ((i + 1) as f64).log2()).collect()
}

impl TplConfig {
    pub fn new(k: usize, tau: f64, lambdas: Lambdas, m: usize) -> Result<Self> {
        let cfg = TplConfig {
            k,
            tau,
            lambdas,
            m,
            theta: default_theta(k),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        self.theta = theta;
        self.validate()?;
        Ok(self)
    }

    /// Same configuration with a shared threshold λ.
    pub fn with_lambda(&self, lambda: f64) -> TplConfig {
        TplConfig {
            lambdas: Lambdas::Shared(lambda),
            ..self.clone()
        }
    }

    /// Threshold applied at 0-based position `pos`.
    pub fn lambda_at(&self, pos: usize) -> f64 {
        match &self.lambdas {
            Lambdas::Shared(l) => *l,
            Lambdas::PerPosition(v) => v[pos.min(v.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Validation("cutoff K must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Validation(format!(
                "temperature must be positive and finite, got {}",
                self.tau
            )));
        }
        if self.m < 1 {
            return Err(Error::Validation("sample count m must be >= 1".into()));
        }
        match &self.lambdas {
            Lambdas::Shared(l) => {
                if !(l.is_finite() && *l >= 0.0) {
                    return Err(Error::Validation(format!(
                        "threshold must be >= 0, got {l}"
                    )));
                }
            }
            Lambdas::PerPosition(v) => {
                if v.len() != self.k {
                    return Err(Error::Validation(format!(
                        "per-position thresholds need length K={}, got {}",
                        self.k,
                        v.len()
                    )));
                }
                if v.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err(Error::Validation("thresholds must be >= 0".into()));
                }
            }
        }
        if self.theta.len() != self.k {
            return Err(Error::Validation(format!(
                "theta needs length K={}, got {}",
                self.k,
                self.theta.len()
            )));
        }
        let non_increasing = self.theta.windows(2).all(|w| w[0] >= w[1]);
        if !non_increasing || self.theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Validation(
                "theta must be positive and non-increasing".into(),
            ));
        }
        Ok(())
    }
}

/// One document with its standardized score and RC score.
#[derive(Debug, Clone, Serialize)]
pub struct RcDoc {
    pub doc_id: String,
    pub relevance: u8,
    /// Standardized score `(raw - mean) / std`.
    pub score: f64,
    /// Softmax probability of sampling this doc first; in (0, 1]. At
    /// extreme temperatures the weight of a badly trailing document can
    /// underflow to 0; sampling then clamps to the best remaining document.
    pub rc_score: f64,
    /// `exp((score - max_score)/τ)`, cached for restricted-softmax sampling.
    #[serde(skip_serializing)]
    pub(crate) weight: f64,
}

/// One query's documents in canonical order (score descending, doc_id
/// ascending on ties). Index 0 is therefore the deterministic top pick.
#[derive(Debug, Clone, Serialize)]
pub struct RcQuery {
    qid: String,
    docs: Vec<RcDoc>,
}

impl RcQuery {
    pub fn qid(&self) -> &str {
        &self.qid
    }

    pub fn docs(&self) -> &[RcDoc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Largest RC score in the query.
    pub fn p_max(&self) -> f64 {
        self.docs[0].rc_score
    }

    /// Number of documents with RC score >= λ; they occupy indices
    /// `0..cutoff` in canonical order.
    fn cutoff(&self, lambda: f64) -> usize {
        self.docs.partition_point(|d| d.rc_score >= lambda)
    }
}

/// Compute standardized scores and RC scores for one query.
///
/// Errors with [`Error::DegenerateStats`] when `stats.std == 0`; callers
/// that want constant scorers to keep working should fall back to uniform
/// scores (see [`RcScoreTable::build_or_uniform`]).
pub fn rc_scores(query: &ScoredQuery, stats: &NormalizationStats, tau: f64) -> Result<RcQuery> {
    if stats.is_degenerate() {
        return Err(Error::DegenerateStats);
    }
    build_row(query, |raw| (raw - stats.mean) / stats.std, tau)
}

fn build_row(query: &ScoredQuery, normalize: impl Fn(f64) -> f64, tau: f64) -> Result<RcQuery> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Validation(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let mut docs: Vec<RcDoc> = query
        .docs
        .iter()
        .map(|d| RcDoc {
            doc_id: d.doc_id.clone(),
            relevance: d.relevance,
            score: normalize(d.raw_score),
            rc_score: 0.0,
            weight: 0.0,
        })
        .collect();
    docs.sort_by(canonical_cmp);

    // Log-domain softmax: subtract the per-query max before exponentiation.
    let max_score = docs[0].score;
    let mut total = 0.0;
    for d in &mut docs {
        d.weight = ((d.score - max_score) / tau).exp();
        total += d.weight;
    }
    for d in &mut docs {
        d.rc_score = d.weight / total;
    }
    Ok(RcQuery {
        qid: query.qid.clone(),
        docs,
    })
}

/// RC scores for a whole collection plus the observed global maximum
/// `P^max`, which bounds any useful threshold grid.
#[derive(Debug, Clone, Serialize)]
pub struct RcScoreTable {
    queries: Vec<RcQuery>,
    pub p_max_global: f64,
    pub tau: f64,
}

impl RcScoreTable {
    pub fn build(
        collection: &QueryCollection,
        stats: &NormalizationStats,
        tau: f64,
    ) -> Result<Self> {
        if stats.is_degenerate() {
            return Err(Error::DegenerateStats);
        }
        Self::from_rows(
            collection
                .queries
                .iter()
                .map(|q| rc_scores(q, stats, tau))
                .collect::<Result<Vec<_>>>()?,
            tau,
        )
    }

    /// Like [`RcScoreTable::build`], but degenerate stats fall back to a
    /// standardized score of 0 for every document (uniform softmax).
    pub fn build_or_uniform(
        collection: &QueryCollection,
        stats: &NormalizationStats,
        tau: f64,
    ) -> Result<Self> {
        if !stats.is_degenerate() {
            return Self::build(collection, stats, tau);
        }
        log::warn!("degenerate normalization stats; falling back to uniform scores");
        Self::from_rows(
            collection
                .queries
                .iter()
                .map(|q| build_row(q, |_| 0.0, tau))
                .collect::<Result<Vec<_>>>()?,
            tau,
        )
    }

    fn from_rows(queries: Vec<RcQuery>, tau: f64) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Validation(
                "cannot build an RC score table from an empty collection".into(),
            ));
        }
        let p_max_global = queries.iter().map(|r| r.p_max()).fold(0.0, f64::max);
        Ok(RcScoreTable {
            queries,
            p_max_global,
            tau,
        })
    }

    pub fn queries(&self) -> &[RcQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Largest document count across queries.
    pub fn max_docs(&self) -> usize {
        self.queries.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Sorted copy of every RC score in the table (for quantile grids).
    pub fn all_rc_scores(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .queries
            .iter()
            .flat_map(|r| r.docs.iter().map(|d| d.rc_score))
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }
}

/// A top-K ranking: indices into one query's canonical doc order, without
/// repetition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Ranking {
    idx: Vec<u32>,
}

impl Ranking {
    pub fn new(idx: Vec<u32>) -> Self {
        Ranking { idx }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// Canonical-order doc index at 0-based position `pos`.
    pub fn index_at(&self, pos: usize) -> usize {
        self.idx[pos] as usize
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.idx.iter().map(|&i| i as usize)
    }

    pub fn doc_ids<'a>(&self, row: &'a RcQuery) -> Vec<&'a str> {
        self.indices()
            .map(|i| row.docs()[i].doc_id.as_str())
            .collect()
    }
}

/// The prediction set for one position: canonical indices of documents with
/// RC score >= λ that are not already ranked.
///
/// When that set is empty but unranked documents remain, the singleton
/// holding the highest-scored remaining document is returned instead (the
/// clamp rule), so callers can always fill min(K, n) positions.
pub fn prediction_set(row: &RcQuery, prefix: &[usize], lambda: f64) -> Result<Vec<usize>> {
    let n = row.len();
    if prefix.len() >= n {
        return Err(Error::Domain(format!(
            "prefix of length {} exhausts all {} documents of query {}",
            prefix.len(),
            n,
            row.qid()
        )));
    }
    debug_assert!(prefix.iter().all(|&i| i < n));
    let cutoff = row.cutoff(lambda);
    let eligible: Vec<usize> = (0..cutoff).filter(|i| !prefix.contains(i)).collect();
    if eligible.is_empty() {
        let fallback = (0..n).find(|i| !prefix.contains(i)).unwrap();
        return Ok(vec![fallback]);
    }
    Ok(eligible)
}

fn min_len(row: &RcQuery, config: &TplConfig) -> usize {
    config.k.min(row.len())
}

/// Draw one TPL ranking from a pre-drawn uniform stream.
///
/// `uniforms` must hold at least `min(K, n)` values in [0, 1); exactly one
/// is consumed per position whatever λ is, so the same stream replayed with
/// a different threshold yields common-random-number coupled rankings. The
/// result is a deterministic function of `(row, config, uniforms)`.
pub fn sample_ranking(row: &RcQuery, config: &TplConfig, uniforms: &[f64]) -> Ranking {
    let len = min_len(row, config);
    assert!(
        uniforms.len() >= len,
        "need {} uniforms, got {}",
        len,
        uniforms.len()
    );
    let docs = row.docs();
    let mut chosen: Vec<u32> = Vec::with_capacity(len);
    for (pos, &u) in uniforms.iter().take(len).enumerate() {
        let cutoff = row.cutoff(config.lambda_at(pos));
        let mut total = 0.0;
        for (i, d) in docs.iter().enumerate().take(cutoff) {
            if !chosen.contains(&(i as u32)) {
                total += d.weight;
            }
        }
        let pick = if total > 0.0 {
            let target = u * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in docs.iter().enumerate().take(cutoff) {
                if chosen.contains(&(i as u32)) {
                    continue;
                }
                acc += d.weight;
                if acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Float round-off can leave acc slightly below target at the end;
            // fall back to the last eligible index.
            pick.unwrap_or_else(|| {
                (0..cutoff)
                    .rev()
                    .find(|i| !chosen.contains(&(*i as u32)))
                    .unwrap()
            })
        } else {
            // Empty prediction set (or all weights underflowed): clamp to the
            // highest-scored remaining document.
            (0..docs.len())
                .find(|i| !chosen.contains(&(*i as u32)))
                .unwrap()
        };
        chosen.push(pick as u32);
    }
    Ranking::new(chosen)
}

/// Draw one TPL ranking, consuming `min(K, n)` uniforms from `rng`.
pub fn sample_ranking_rng<R: Rng + ?Sized>(
    row: &RcQuery,
    config: &TplConfig,
    rng: &mut R,
) -> Ranking {
    let len = min_len(row, config);
    let uniforms: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    sample_ranking(row, config, &uniforms)
}

/// Maximum document count for exact enumeration.
pub const EXACT_ENUMERATION_LIMIT: usize = 8;

/// Enumerate the full TPL distribution over length-min(K, n) rankings.
///
/// Guarded to n <= 8 documents; probabilities sum to 1. Entries come out in
/// lexicographic order of the index sequences.
pub fn exact_ranking_distribution(
    row: &RcQuery,
    config: &TplConfig,
) -> Result<Vec<(Ranking, f64)>> {
    if row.len() > EXACT_ENUMERATION_LIMIT {
        return Err(Error::SizeGuard(format!(
            "query {} has {} documents (limit {})",
            row.qid(),
            row.len(),
            EXACT_ENUMERATION_LIMIT
        )));
    }
    let len = min_len(row, config);
    let mut out = Vec::new();
    let mut prefix: Vec<u32> = Vec::with_capacity(len);
    enumerate(row, config, len, &mut prefix, 1.0, &mut out);
    Ok(out)
}

fn enumerate(
    row: &RcQuery,
    config: &TplConfig,
    len: usize,
    prefix: &mut Vec<u32>,
    prob: f64,
    out: &mut Vec<(Ranking, f64)>,
) {
    if prefix.len() == len {
        out.push((Ranking::new(prefix.clone()), prob));
        return;
    }
    let docs = row.docs();
    let cutoff = row.cutoff(config.lambda_at(prefix.len()));
    let eligible: Vec<usize> = (0..cutoff)
        .filter(|i| !prefix.contains(&(*i as u32)))
        .collect();
    if eligible.is_empty() {
        let fallback = (0..docs.len())
            .find(|i| !prefix.contains(&(*i as u32)))
            .expect("len <= n guarantees a remaining document");
        prefix.push(fallback as u32);
        enumerate(row, config, len, prefix, prob, out);
        prefix.pop();
        return;
    }
    let total: f64 = eligible.iter().map(|&i| docs[i].weight).sum();
    if total <= 0.0 {
        // All eligible weights underflowed; the limit distribution puts all
        // mass on the highest-scored eligible document.
        let first = eligible[0];
        prefix.push(first as u32);
        enumerate(row, config, len, prefix, prob, out);
        prefix.pop();
        return;
    }
    for &i in &eligible {
        prefix.push(i as u32);
        enumerate(row, config, len, prefix, prob * docs[i].weight / total, out);
        prefix.pop();
    }
}

/// Verify that TPL with a shared λ equals the two-phase construction
/// "PL restricted to A = {d : s̃_d >= λ} for the first min(K, |A|)
/// positions, then deterministic score-order completion", by exact
/// enumeration of both sides (total variation <= 1e-9).
pub fn shared_lambda_equivalence_check(
    row: &RcQuery,
    lambda: f64,
    config: &TplConfig,
) -> Result<bool> {
    let tpl = exact_ranking_distribution(row, &config.with_lambda(lambda))?;

    let len = min_len(row, config);
    let set_size = row.cutoff(lambda);
    let mut reference = Vec::new();
    let mut prefix: Vec<u32> = Vec::with_capacity(len);
    two_phase(row, set_size, len, &mut prefix, 1.0, &mut reference);

    let mut tv = 0.0;
    let lookup: std::collections::HashMap<&Ranking, f64> =
        reference.iter().map(|(r, p)| (r, *p)).collect();
    let mut seen = 0usize;
    for (r, p) in &tpl {
        let q = lookup.get(r).copied().unwrap_or(0.0);
        if lookup.contains_key(r) {
            seen += 1;
        }
        tv += (p - q).abs();
    }
    if seen < lookup.len() {
        // Reference has support the TPL enumeration missed entirely.
        let tpl_lookup: std::collections::HashMap<&Ranking, f64> =
            tpl.iter().map(|(r, p)| (r, *p)).collect();
        for (r, q) in &reference {
            if !tpl_lookup.contains_key(r) {
                tv += q;
            }
        }
    }
    Ok(tv / 2.0 <= 1e-9)
}

/// Phase 1: PL over the first `set_size` canonical docs; phase 2: fill the
/// rest in canonical (score) order. Built directly from the product formula,
/// without going through `prediction_set`.
fn two_phase(
    row: &RcQuery,
    set_size: usize,
    len: usize,
    prefix: &mut Vec<u32>,
    prob: f64,
    out: &mut Vec<(Ranking, f64)>,
) {
    if prefix.len() == len {
        out.push((Ranking::new(prefix.clone()), prob));
        return;
    }
    let docs = row.docs();
    if prefix.len() < set_size.min(len) {
        let remaining: Vec<usize> = (0..set_size)
            .filter(|i| !prefix.contains(&(*i as u32)))
            .collect();
        let total: f64 = remaining.iter().map(|&i| docs[i].weight).sum();
        for &i in &remaining {
            let p = if total > 0.0 {
                docs[i].weight / total
            } else if i == remaining[0] {
                1.0
            } else {
                0.0
            };
            if p == 0.0 {
                continue;
            }
            prefix.push(i as u32);
            two_phase(row, set_size, len, prefix, prob * p, out);
            prefix.pop();
        }
    } else {
        let next = (0..docs.len())
            .find(|i| !prefix.contains(&(*i as u32)))
            .expect("len <= n");
        prefix.push(next as u32);
        two_phase(row, set_size, len, prefix, prob, out);
        prefix.pop();
    }
}
