//! Desk-scale experimental protocol: synthetic benchmark data,
//! repeated-split coverage experiments, utility/fairness trade-off sweeps,
//! and report emission.
//!
//! A coverage experiment repeats T times: split the collection into
//! calibration and test parts, calibrate λ̂ on the calibration part, then
//! check whether the realized test risk stays below α. Abstained trials
//! fall back to the deterministic ranker (λ = 1) and are reported two ways:
//! excluded from the primary coverage rate, and included in an all-trials
//! rate.
//!
//! Trials are embarrassingly parallel; each owns a random lineage keyed by
//! `(master seed, trial index)`, so reports are identical whatever the
//! thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Document, QueryCollection, ScoredQuery, SplitSpec};
use crate::metrics::{self, EstimatorKind, EvalMode};
use crate::plmodel::{fit_normalization, RcScoreTable, TplConfig};
use crate::riskcontrol::{
    self, build_grid, Bound, CalibrationResult, DkwmConst, GridMode, Outcome, RiskSpec,
};
use crate::seeds::mix;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

const CAL_TAG: u64 = 0xCA11B8;
const TEST_TAG: u64 = 0x7E57;

fn now_epoch_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Synthetic benchmark generator standing in for the large LTR datasets.
///
/// Scores follow `score = rel + N(0, sigma)`. With probability
/// `tie_cluster_prob` a query receives a cluster of >= 2 documents sharing
/// one relevance grade with near-identical scores (perturbed by at most
/// `0.01 * sigma`) — the regime where a deterministic ranker is maximally
/// unfair. Every emitted query has at least one relevant document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_queries: usize,
    /// Inclusive (min, max) document count per query.
    pub docs_per_query: (usize, usize),
    /// Probabilities of grades 0..=4; must sum to 1 with some mass above 0.
    pub relevance_dist: [f64; 5],
    pub noise_sigma: f64,
    pub tie_cluster_prob: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_queries: 2000,
            docs_per_query: (5, 20),
            relevance_dist: [0.55, 0.20, 0.13, 0.08, 0.04],
            noise_sigma: 0.5,
            tie_cluster_prob: 0.5,
            seed: 17,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 {
            return Err(Error::Validation("num_queries must be positive".into()));
        }
        let (lo, hi) = self.docs_per_query;
        if lo < 1 || hi < lo {
            return Err(Error::Validation(format!(
                "docs_per_query range ({lo}, {hi}) is invalid"
            )));
        }
        let total: f64 = self.relevance_dist.iter().sum();
        if self.relevance_dist.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(
                "relevance_dist must be non-negative and sum to 1".into(),
            ));
        }
        if self.relevance_dist[1..].iter().sum::<f64>() <= 0.0 {
            return Err(Error::Validation(
                "relevance_dist needs some mass on grades >= 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.tie_cluster_prob) {
            return Err(Error::Validation(format!(
                "tie_cluster_prob must lie in [0,1], got {}",
                self.tie_cluster_prob
            )));
        }
        Ok(())
    }
}

fn sample_grade(dist: &[f64; 5], min_grade: u8, rng: &mut impl Rng) -> u8 {
    let lo = min_grade as usize;
    let total: f64 = dist[lo..].iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (g, p) in dist.iter().enumerate().skip(lo) {
        u -= p;
        if u <= 0.0 {
            return g as u8;
        }
    }
    4
}

/// Generate a synthetic collection; a deterministic function of the seed.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<QueryCollection> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::Validation(format!("bad noise sigma: {e}")))?;
    let (lo, hi) = spec.docs_per_query;
    let queries: Vec<ScoredQuery> = (0..spec.num_queries)
        .map(|qi| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(qi as u64);
            let n = rng.random_range(lo..=hi);
            loop {
                let mut docs: Vec<Document> = (0..n)
                    .map(|di| {
                        let rel = sample_grade(&spec.relevance_dist, 0, &mut rng);
                        Document {
                            doc_id: format!("q{qi}:d{di}"),
                            raw_score: f64::from(rel) + noise.sample(&mut rng),
                            relevance: rel,
                        }
                    })
                    .collect();
                if n >= 2 && rng.random::<f64>() < spec.tie_cluster_prob {
                    let size = 2 + usize::from(n >= 3 && rng.random::<f64>() < 0.5);
                    let grade = sample_grade(&spec.relevance_dist, 1, &mut rng);
                    let base = f64::from(grade) + noise.sample(&mut rng);
                    let eps = 0.01 * spec.noise_sigma;
                    for doc in docs.iter_mut().take(size) {
                        doc.relevance = grade;
                        doc.raw_score = base + (2.0 * rng.random::<f64>() - 1.0) * eps;
                    }
                }
                if docs.iter().any(|d| d.relevance >= 1) {
                    return ScoredQuery {
                        qid: format!("q{qi}"),
                        docs,
                    };
                }
            }
        })
        .collect();
    QueryCollection::new(queries, format!("synthetic(seed={})", spec.seed))
}

/// How the target risk level is chosen per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMode {
    /// Fixed α for every trial.
    Absolute(f64),
    /// α_t = 1 − ρ·U*_t, where U*_t is the deterministic model's NDCG@K on
    /// the trial's calibration split ("keep at least ρ of the deterministic
    /// utility"). Computed on the calibration split to avoid test leakage.
    Relative(f64),
}

impl AlphaMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaMode::Absolute(a) if a > 0.0 && a < 1.0 => Ok(()),
            AlphaMode::Relative(rho) if rho > 0.0 && rho <= 1.0 => Ok(()),
            AlphaMode::Absolute(a) => Err(Error::Validation(format!(
                "absolute alpha must lie in (0,1), got {a}"
            ))),
            AlphaMode::Relative(rho) => Err(Error::Validation(format!(
                "relative utility fraction must lie in (0,1], got {rho}"
            ))),
        }
    }
}

/// Calibration settings shared across trials; the concrete grid and α are
/// recomputed per trial from the calibration split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub delta: f64,
    pub bound: Bound,
    pub grid_points: usize,
    pub grid_mode: GridMode,
    pub dkwm_const: DkwmConst,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            delta: 0.1,
            bound: Bound::Hb,
            grid_points: 101,
            grid_mode: GridMode::Uniform,
            dkwm_const: DkwmConst::Conservative,
        }
    }
}

/// One coverage trial's record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub alpha: f64,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_hat: Option<f64>,
    pub test_ndcg: f64,
    pub test_risk: f64,
    pub test_disparity: f64,
    pub det_ndcg: f64,
    pub det_disparity: f64,
    /// Whether test risk <= α (with the deterministic fallback applied on
    /// abstained trials).
    pub covered: bool,
}

/// Repeated-split coverage report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema_version: u32,
    pub generated_at: u64,
    pub k: usize,
    pub alpha_mode: AlphaMode,
    pub delta: f64,
    pub bound: Bound,
    pub trials: usize,
    pub abstentions: usize,
    /// Covered trials among the non-abstained ones.
    pub covered: usize,
    /// covered / (trials − abstentions); absent when every trial abstained.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_rate: Option<f64>,
    /// Coverage over all trials, counting abstention-fallback trials.
    pub coverage_rate_all_trials: f64,
    pub per_trial: Vec<TrialRecord>,
}

impl CoverageReport {
    pub fn all_abstained(&self) -> bool {
        self.abstentions == self.trials
    }
}

fn run_trial(
    collection: &QueryCollection,
    alpha_mode: AlphaMode,
    settings: &CalibrationSettings,
    split_template: &SplitSpec,
    config: &TplConfig,
    master_seed: u64,
    trial: u32,
) -> Result<TrialRecord> {
    let (cal, test) = dataset::split(collection, &split_template.for_trial(trial))?;
    let stats = fit_normalization(&cal)?;
    let cal_table = RcScoreTable::build_or_uniform(&cal, &stats, config.tau)?;
    let test_table = RcScoreTable::build_or_uniform(&test, &stats, config.tau)?;

    let alpha = match alpha_mode {
        AlphaMode::Absolute(a) => a,
        AlphaMode::Relative(rho) => {
            let det = metrics::deterministic_utility(&cal_table, config.k)?;
            1.0 - rho * det.mean_ndcg
        }
    };
    let grid = build_grid(settings.grid_mode, settings.grid_points, &cal_table)?;
    let spec = RiskSpec::new(alpha, settings.delta, settings.bound, grid)?
        .with_dkwm_const(settings.dkwm_const);

    let cal_seed = mix(master_seed, mix(CAL_TAG, u64::from(trial)));
    let result = riskcontrol::calibrate(&cal_table, config, &spec, cal_seed)?;

    let lambda = result.lambda_or_fallback();
    let tpl = config.with_lambda(lambda);
    let test_seed = mix(master_seed, mix(TEST_TAG, u64::from(trial)));
    let tpl_eval =
        metrics::evaluate_collection(&test_table, &tpl, EvalMode::Auto { seed: test_seed })?;
    let det_eval = metrics::evaluate_deterministic(&test_table, config)?;

    Ok(TrialRecord {
        trial,
        alpha,
        outcome: result.outcome,
        lambda_hat: result.lambda_hat,
        test_ndcg: tpl_eval.mean_ndcg,
        test_risk: tpl_eval.mean_risk,
        test_disparity: tpl_eval.mean_disparity,
        det_ndcg: det_eval.mean_ndcg,
        det_disparity: det_eval.mean_disparity,
        covered: tpl_eval.mean_risk <= alpha,
    })
}

/// Run T repeated-split coverage trials. The collection must already be
/// filtered of queries with no relevant documents.
pub fn run_coverage(
    collection: &QueryCollection,
    alpha_mode: AlphaMode,
    settings: &CalibrationSettings,
    trials: u32,
    split_template: &SplitSpec,
    config: &TplConfig,
    master_seed: u64,
) -> Result<CoverageReport> {
    alpha_mode.validate()?;
    config.validate()?;
    if trials < 1 {
        return Err(Error::Validation("need at least one trial".into()));
    }
    if let Some(q) = collection.queries.iter().find(|q| q.max_relevance() < 1) {
        return Err(Error::Validation(format!(
            "query {:?} has no relevant documents; run filter_no_relevant first",
            q.qid
        )));
    }

    let per_trial: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|t| {
            run_trial(
                collection,
                alpha_mode,
                settings,
                split_template,
                config,
                master_seed,
                t,
            )
        })
        .collect::<Result<_>>()?;

    let abstentions = per_trial
        .iter()
        .filter(|r| r.outcome == Outcome::Abstain)
        .count();
    let covered = per_trial
        .iter()
        .filter(|r| r.outcome == Outcome::Selected && r.covered)
        .count();
    let covered_all = per_trial.iter().filter(|r| r.covered).count();
    let selected = per_trial.len() - abstentions;

    Ok(CoverageReport {
        schema_version: SCHEMA_VERSION,
        generated_at: now_epoch_secs(),
        k: config.k,
        alpha_mode,
        delta: settings.delta,
        bound: settings.bound,
        trials: per_trial.len(),
        abstentions,
        covered,
        coverage_rate: (selected > 0).then(|| covered as f64 / selected as f64),
        coverage_rate_all_trials: covered_all as f64 / per_trial.len() as f64,
        per_trial,
    })
}

/// One point of a utility/fairness trade-off sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub lambda: f64,
    pub mean_ndcg: f64,
    pub mean_risk: f64,
    pub mean_disparity: f64,
    pub mean_disparity_raw: f64,
}

/// Metrics at every swept threshold, with common random numbers across the
/// grid, plus independently computed endpoint references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub schema_version: u32,
    pub generated_at: u64,
    pub k: usize,
    pub rows: Vec<TradeoffRow>,
    /// Plain PL metrics (λ = 0, same sampler and seeds as the rows).
    pub pl_reference: TradeoffRow,
    /// Deterministic-ranker metrics, computed without any sampling.
    pub det_reference: TradeoffRow,
}

fn row_from_summary(summary: &metrics::EvaluationSummary, lambda: f64) -> TradeoffRow {
    TradeoffRow {
        lambda,
        mean_ndcg: summary.mean_ndcg,
        mean_risk: summary.mean_risk,
        mean_disparity: summary.mean_disparity,
        mean_disparity_raw: summary.mean_disparity_raw,
    }
}

/// Sweep metrics over a threshold grid on a fixed evaluation table.
pub fn run_tradeoff_sweep(
    table: &RcScoreTable,
    config: &TplConfig,
    lambda_grid: &[f64],
    seed: u64,
) -> Result<TradeoffCurve> {
    if lambda_grid.is_empty() {
        return Err(Error::Validation("sweep grid is empty".into()));
    }
    config.validate()?;
    let rows: Vec<TradeoffRow> = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let summary = metrics::evaluate_collection(
                table,
                &config.with_lambda(lambda),
                EvalMode::Auto { seed },
            )?;
            Ok(row_from_summary(&summary, lambda))
        })
        .collect::<Result<_>>()?;
    let pl =
        metrics::evaluate_collection(table, &config.with_lambda(0.0), EvalMode::Auto { seed })?;
    let det = metrics::evaluate_deterministic(table, config)?;
    Ok(TradeoffCurve {
        schema_version: SCHEMA_VERSION,
        generated_at: now_epoch_secs(),
        k: config.k,
        rows,
        pl_reference: row_from_summary(&pl, 0.0),
        det_reference: row_from_summary(&det, 1.0),
    })
}

/// A metrics report for one fixed threshold (the `evaluate` subcommand).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub generated_at: u64,
    pub k: usize,
    pub lambda: f64,
    pub estimator: EstimatorKind,
    pub m: usize,
    pub mean_ndcg: f64,
    pub mean_risk: f64,
    pub mean_disparity: f64,
    pub mean_disparity_raw: f64,
    pub per_query: Vec<metrics::QueryMetrics>,
}

pub fn evaluation_report(summary: metrics::EvaluationSummary, lambda: f64) -> EvaluationReport {
    EvaluationReport {
        schema_version: SCHEMA_VERSION,
        generated_at: now_epoch_secs(),
        k: summary.k,
        lambda,
        estimator: summary.estimator,
        m: summary.m,
        mean_ndcg: summary.mean_ndcg,
        mean_risk: summary.mean_risk,
        mean_disparity: summary.mean_disparity,
        mean_disparity_raw: summary.mean_disparity_raw,
        per_query: summary.per_query,
    }
}

/// Output format for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    Json,
    Csv,
}

/// Anything emittable as a JSON document or a flat CSV table.
pub trait Report: Serialize {
    fn csv_header(&self) -> Vec<&'static str>;
    fn csv_records(&self) -> Vec<Vec<String>>;
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report for CoverageReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec![
            "trial",
            "alpha",
            "outcome",
            "lambda_hat",
            "test_ndcg",
            "test_risk",
            "test_disparity",
            "det_ndcg",
            "det_disparity",
            "covered",
        ]
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        self.per_trial
            .iter()
            .map(|r| {
                vec![
                    r.trial.to_string(),
                    r.alpha.to_string(),
                    match r.outcome {
                        Outcome::Selected => "selected".into(),
                        Outcome::Abstain => "abstain".into(),
                    },
                    fmt_opt(r.lambda_hat),
                    r.test_ndcg.to_string(),
                    r.test_risk.to_string(),
                    r.test_disparity.to_string(),
                    r.det_ndcg.to_string(),
                    r.det_disparity.to_string(),
                    r.covered.to_string(),
                ]
            })
            .collect()
    }
}

impl Report for TradeoffCurve {
    fn csv_header(&self) -> Vec<&'static str> {
        vec![
            "lambda",
            "mean_ndcg",
            "mean_risk",
            "mean_disparity",
            "mean_disparity_raw",
        ]
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.lambda.to_string(),
                    r.mean_ndcg.to_string(),
                    r.mean_risk.to_string(),
                    r.mean_disparity.to_string(),
                    r.mean_disparity_raw.to_string(),
                ]
            })
            .collect()
    }
}

impl Report for EvaluationReport {
    fn csv_header(&self) -> Vec<&'static str> {
        vec!["qid", "ndcg", "risk", "disparity"]
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        self.per_query
            .iter()
            .map(|q| {
                vec![
                    q.qid.clone(),
                    q.ndcg.to_string(),
                    q.risk.to_string(),
                    q.disparity.to_string(),
                ]
            })
            .collect()
    }
}

impl Report for CalibrationResult {
    fn csv_header(&self) -> Vec<&'static str> {
        vec![
            "lambda",
            "r_hat",
            "r_tilde",
            "p_or_ucb",
            "disparity",
            "dkwm_p_bound",
        ]
    }

    fn csv_records(&self) -> Vec<Vec<String>> {
        self.grid
            .iter()
            .map(|row| {
                vec![
                    row.lambda.to_string(),
                    row.r_hat.to_string(),
                    row.r_tilde.to_string(),
                    row.p_or_ucb.to_string(),
                    row.disparity.to_string(),
                    row.dkwm_p_bound.to_string(),
                ]
            })
            .collect()
    }
}

/// Serialize a report to a writer.
pub fn write_report<R: Report, W: Write>(report: &R, writer: W, format: OutFormat) -> Result<()> {
    let err = |e: std::io::Error| Error::io("<writer>", e);
    match format {
        OutFormat::Json => {
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, report)
                .map_err(|e| Error::Validation(format!("serialize report: {e}")))?;
            writer.write_all(b"\n").map_err(err)?;
            writer.flush().map_err(err)?;
        }
        OutFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(report.csv_header())
                .map_err(|e| Error::Validation(format!("write csv header: {e}")))?;
            for record in report.csv_records() {
                w.write_record(&record)
                    .map_err(|e| Error::Validation(format!("write csv record: {e}")))?;
            }
            w.flush().map_err(err)?;
        }
    }
    Ok(())
}

/// Write a report to a file, surfacing I/O failures with path context.
pub fn emit_report<R: Report>(report: &R, path: impl AsRef<Path>, format: OutFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_report(report, BufWriter::new(file), format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}
