//! Acceptance suite: one test per criterion, each printing a `[PASS]` line
//! (run with `--nocapture` to see them). Every tolerance is pinned in code.
//!
//! 1. Reduction identities: exact TPL at λ=0 equals the PL product-formula
//!    oracle and at λ=1 is a point mass on the score-sorted ranking
//!    (total variation <= 1e-9, 200 random instances, < 10 s).
//! 2. Oracle equivalence: Monte Carlo risk (m = 20,000) within 3 standard
//!    errors of exact enumeration on 50 instances; Monte Carlo exposure
//!    within 4 sigma per document (< 2 min).
//! 3. Bound correctness: Hoeffding-Bentkus p-values and DKWM UCBs match
//!    independent high-precision evaluations on a 1,000-point grid to
//!    relative error <= 1e-10; the DKWM constant telescopes to max − min
//!    on 1,000 level sets.
//! 4. Statistical coverage: on the default synthetic benchmark with
//!    δ = 0.1, relative target ρ = 0.9, T = 100 trials, the coverage rate
//!    excluding abstentions is >= 0.81 for both bounds (< 5 min).
//! 5. Conservativeness ordering: the DKWM path selects λ̂ >= the HB path's
//!    λ̂ in >= 81% of trials (90% minus binomial 3σ) and abstains at least
//!    as often.
//! 6. Fairness improvement: calibrated TPL strictly lowers mean squared
//!    disparity vs the deterministic baseline in >= 95% of non-abstained
//!    trials while keeping the criterion-4 utility floor rate.
//! 7. Trade-off trend: Spearman(λ, NDCG@5) > 0.8 and
//!    Spearman(λ, disparity) > 0.8 over a 101-point sweep.
//! 8. Pipeline compatibility: `convert` + `coverage` run end-to-end on the
//!    bundled 50-query LETOR extract and produce schema-valid reports.

use std::path::PathBuf;
use std::process::Command;
use std::sync::LazyLock;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairrank::dataset::{Document, QueryCollection, ScoredQuery, SplitSpec};
use fairrank::harness::{
    generate_synthetic, run_coverage, run_tradeoff_sweep, spearman, AlphaMode, CalibrationSettings,
    CoverageReport, SynthSpec,
};
use fairrank::metrics::{exact_risk, expected_exposure, mc_risk, ndcg_at_k, ExposureMode};
use fairrank::plmodel::{
    exact_ranking_distribution, rc_scores, Lambdas, NormalizationStats, RcScoreTable, TplConfig,
};
use fairrank::riskcontrol::{dkwm_constant, dkwm_ucb, hb_p_value, Bound};

fn identity_stats() -> NormalizationStats {
    NormalizationStats::new(0.0, 1.0).unwrap()
}

fn config(k: usize, lambda: f64, m: usize) -> TplConfig {
    TplConfig::new(k, 1.0, Lambdas::Shared(lambda), m).unwrap()
}

/// Random small instance: n docs with uniform scores and grades, at least
/// one relevant document.
fn random_instance(rng: &mut ChaCha8Rng, id: usize, max_docs: usize) -> ScoredQuery {
    let n = rng.random_range(2..=max_docs);
    loop {
        let docs: Vec<Document> = (0..n)
            .map(|d| Document {
                doc_id: format!("i{id}:d{d}"),
                raw_score: rng.random_range(-2.0..2.0),
                relevance: rng.random_range(0..=4),
            })
            .collect();
        if docs.iter().any(|d| d.relevance > 0) {
            return ScoredQuery {
                qid: format!("i{id}"),
                docs,
            };
        }
    }
}

/// Independent PL oracle: P(sequence) from the product formula over
/// standardized scores, with no shared code beyond `exp`.
fn pl_product(scores: &[f64], sequence: &[usize], tau: f64) -> f64 {
    let mut placed: Vec<usize> = Vec::new();
    let mut p = 1.0;
    for &pick in sequence {
        let denom: f64 = (0..scores.len())
            .filter(|i| !placed.contains(i))
            .map(|i| (scores[i] / tau).exp())
            .sum();
        p *= (scores[pick] / tau).exp() / denom;
        placed.push(pick);
    }
    p
}

#[test]
fn criterion_1_reduction_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..200 {
        let query = random_instance(&mut rng, trial, 6);
        let row = rc_scores(&query, &identity_stats(), 1.0).unwrap();
        let n = row.len();
        let k = rng.random_range(1..=n);

        // λ = 0: TPL is plain Plackett-Luce.
        let scores: Vec<f64> = row.docs().iter().map(|d| d.score).collect();
        let dist = exact_ranking_distribution(&row, &config(k, 0.0, 1)).unwrap();
        let mut tv = 0.0;
        let mut total = 0.0;
        for (ranking, p) in &dist {
            let seq: Vec<usize> = ranking.indices().collect();
            tv += (p - pl_product(&scores, &seq, 1.0)).abs();
            total += p;
        }
        assert!(tv / 2.0 <= 1e-9, "instance {trial}: PL TV = {}", tv / 2.0);
        assert!((total - 1.0).abs() <= 1e-9);

        // λ = 1: point mass on the score-sorted ranking (indices 0..k).
        let dist = exact_ranking_distribution(&row, &config(k, 1.0, 1)).unwrap();
        assert_eq!(dist.len(), 1, "instance {trial}: not a point mass");
        let (ranking, p) = &dist[0];
        assert!((p - 1.0).abs() <= 1e-9);
        let expected: Vec<usize> = (0..k).collect();
        assert_eq!(ranking.indices().collect::<Vec<_>>(), expected);
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: reduction identities on 200 instances (TV <= 1e-9) in {elapsed:?}"
    );
}

#[test]
fn criterion_2_monte_carlo_matches_exact_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    for trial in 0..50 {
        let query = random_instance(&mut rng, trial, 6);
        let collection = QueryCollection::new(vec![query], "acceptance").unwrap();
        let table = RcScoreTable::build(&collection, &identity_stats(), 1.0).unwrap();
        let row = &table.queries()[0];
        let n = row.len();
        let k = rng.random_range(1..=n);
        let lambda = rng.random_range(0.0..row.p_max());

        // Risk: exact mean and variance of the loss under the enumerated
        // distribution give the Monte Carlo standard error.
        let cfg = config(k, lambda, 20_000);
        let dist = exact_ranking_distribution(row, &cfg).unwrap();
        let mut mean = 0.0;
        for (ranking, p) in &dist {
            mean += p * (1.0 - ndcg_at_k(ranking, row, k).unwrap());
        }
        let mut var = 0.0;
        for (ranking, p) in &dist {
            let loss = 1.0 - ndcg_at_k(ranking, row, k).unwrap();
            var += p * (loss - mean).powi(2);
        }
        let exact = exact_risk(&table, &cfg).unwrap();
        assert!((exact.mean - mean).abs() <= 1e-12);

        let mc = mc_risk(&table, &cfg, 7000 + trial as u64).unwrap();
        let se = (var / cfg.m as f64).sqrt();
        assert!(
            (mc.mean - mean).abs() <= 3.0 * se + 1e-12,
            "instance {trial}: mc {} vs exact {mean} (se {se})",
            mc.mean
        );

        // Exposure: per-document comparison at 4 sigma.
        let m_exp = 50_000;
        let exact_exp = expected_exposure(row, &cfg, ExposureMode::Exact).unwrap();
        let mut var_exp = vec![0.0; n];
        for (ranking, p) in &dist {
            let mut e = vec![0.0; n];
            for (pos, i) in ranking.indices().enumerate() {
                e[i] += cfg.theta[pos];
            }
            for d in 0..n {
                var_exp[d] += p * (e[d] - exact_exp[d]).powi(2);
            }
        }
        let mc_exp = expected_exposure(
            row,
            &cfg,
            ExposureMode::MonteCarlo {
                m: m_exp,
                seed: 8000 + trial as u64,
            },
        )
        .unwrap();
        for d in 0..n {
            let sigma = (var_exp[d] / m_exp as f64).sqrt();
            assert!(
                (mc_exp[d] - exact_exp[d]).abs() <= 4.0 * sigma + 1e-9,
                "instance {trial} doc {d}: mc {} vs exact {} (sigma {sigma})",
                mc_exp[d],
                exact_exp[d]
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "[PASS] criterion 2: MC risk within 3 SE and MC exposure within 4 sigma \
         on 50 instances in {elapsed:?}"
    );
}

/// Exact binomial tail in integer arithmetic: decompose p = m/2^t from the
/// f64 bit pattern, then P(Bin(n,p) <= j) = Σ C(n,i) m^i (2^t−m)^(n−i) / 2^(tn).
fn binomial_tail_bigint(n: u64, p: f64, j: u64) -> f64 {
    let bits = p.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    assert!(raw_exp > 0, "subnormal p unsupported");
    let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    let t = (1075 - raw_exp) as u64;
    let m = BigInt::from(mant);
    let q = (BigInt::one() << t) - &m;

    let mut numer = BigInt::zero();
    let mut term = q.pow(n as u32);
    numer += &term;
    for i in 1..=j {
        term = term * BigInt::from(n - i + 1) * &m / (BigInt::from(i) * &q);
        numer += &term;
    }
    let total_shift = t * n;
    let bits_len = numer.bits();
    let keep = 96u64;
    let (scaled, dropped) = if bits_len > keep {
        (&numer >> (bits_len - keep), bits_len - keep)
    } else {
        (numer.clone(), 0)
    };
    scaled.to_f64().unwrap() * 2f64.powi(dropped as i32 - total_shift as i32)
}

#[test]
fn criterion_3_bounds_match_high_precision_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_hb = 0.0f64;
    let mut worst_ucb = 0.0f64;

    for _ in 0..1000 {
        let n = rng.random_range(1..=200u64);
        let alpha = rng.random_range(0.1..0.9);
        let r_hat = rng.random_range(0.0..=1.0);
        let delta = rng.random_range(0.01..0.5);

        // Hoeffding-Bentkus against an independently coded closed form:
        // h1 via separated logarithms, the binomial tail via exact integer
        // arithmetic.
        let p_impl = hb_p_value(r_hat, n, alpha).unwrap();
        let a = r_hat.min(alpha);
        let h1_alt = if a == 0.0 {
            -(1.0f64 - alpha).ln()
        } else {
            a * (a.ln() - alpha.ln()) + (1.0 - a) * ((1.0 - a).ln() - (1.0 - alpha).ln())
        };
        let hoeffding = (-(n as f64) * h1_alt).exp();
        let j = ((n as f64 * r_hat).ceil() as u64).min(n);
        let bentkus = std::f64::consts::E * binomial_tail_bigint(n, alpha, j);
        let p_oracle = hoeffding.min(bentkus).min(1.0);
        let rel = (p_impl - p_oracle).abs() / p_oracle;
        worst_hb = worst_hb.max(rel);
        assert!(
            rel <= 1e-10,
            "hb({r_hat}, {n}, {alpha}): {p_impl} vs {p_oracle} (rel {rel})"
        );

        // DKWM UCB against a different association of the same closed form.
        let konst = rng.random_range(0.0..=1.0);
        let ucb_impl = dkwm_ucb(r_hat, n, delta, konst);
        let ucb_oracle = r_hat + konst * (2.0 / delta).ln().sqrt() / (2.0 * n as f64).sqrt();
        let rel = (ucb_impl - ucb_oracle).abs() / ucb_oracle;
        worst_ucb = worst_ucb.max(rel);
        assert!(
            rel <= 1e-10,
            "dkwm_ucb({r_hat}, {n}, {delta}, {konst}): {ucb_impl} vs {ucb_oracle}"
        );
    }

    // DKWM constant telescopes to max − min on sorted distinct level sets.
    for _ in 0..1000 {
        let len = rng.random_range(1..=30usize);
        let mut levels: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        let c = dkwm_constant(&levels).unwrap();
        let range = levels.last().unwrap() - levels.first().unwrap();
        assert!(
            (c - range).abs() <= 1e-12 * range.max(1.0),
            "constant {c} vs range {range}"
        );
    }
    println!(
        "[PASS] criterion 3: bounds match oracles on 1000 points \
         (worst HB rel {worst_hb:.2e}, worst UCB rel {worst_ucb:.2e}); \
         DKWM constant telescopes on 1000 level sets"
    );
}

const TRIALS: u32 = 100;
const RHO: f64 = 0.9;
const DELTA: f64 = 0.1;
// 0.90 − 3·sqrt(0.9·0.1/100): the binomial 3-sigma slack below (1 − δ).
const COVERAGE_FLOOR: f64 = 0.81;

static BENCHMARK: LazyLock<QueryCollection> =
    LazyLock::new(|| generate_synthetic(&SynthSpec::default()).unwrap());

struct CoveragePair {
    hb: CoverageReport,
    dkwm: CoverageReport,
    elapsed: Duration,
}

static COVERAGE: LazyLock<CoveragePair> = LazyLock::new(|| {
    let cfg = config(5, 0.0, 100);
    let split = SplitSpec::new(0.25, 7131, 0).unwrap();
    let start = Instant::now();
    let run = |bound: Bound| {
        let settings = CalibrationSettings {
            delta: DELTA,
            bound,
            ..CalibrationSettings::default()
        };
        run_coverage(
            &BENCHMARK,
            AlphaMode::Relative(RHO),
            &settings,
            TRIALS,
            &split,
            &cfg,
            20_260_810,
        )
        .unwrap()
    };
    let hb = run(Bound::Hb);
    let dkwm = run(Bound::Dkwm);
    CoveragePair {
        hb,
        dkwm,
        elapsed: start.elapsed(),
    }
});

#[test]
fn criterion_4_statistical_coverage() {
    let pair = &*COVERAGE;
    for (name, report) in [("hb", &pair.hb), ("dkwm", &pair.dkwm)] {
        assert_eq!(report.trials, TRIALS as usize);
        let rate = report
            .coverage_rate
            .unwrap_or_else(|| panic!("{name}: every trial abstained"));
        assert!(
            rate >= COVERAGE_FLOOR,
            "{name}: coverage {rate} below {COVERAGE_FLOOR}"
        );
    }
    assert!(
        pair.elapsed < Duration::from_secs(300),
        "took {:?}",
        pair.elapsed
    );
    println!(
        "[PASS] criterion 4: coverage hb = {:.3} ({} abstentions), dkwm = {:.3} ({} abstentions), \
         floor {COVERAGE_FLOOR}, both paths in {:?}",
        pair.hb.coverage_rate.unwrap(),
        pair.hb.abstentions,
        pair.dkwm.coverage_rate.unwrap(),
        pair.dkwm.abstentions,
        pair.elapsed
    );
}

#[test]
fn criterion_5_dkwm_is_more_conservative_than_hb() {
    let pair = &*COVERAGE;
    let mut ordered = 0usize;
    for (h, d) in pair.hb.per_trial.iter().zip(&pair.dkwm.per_trial) {
        assert_eq!(h.trial, d.trial);
        let lh = h.lambda_hat.unwrap_or(f64::INFINITY);
        let ld = d.lambda_hat.unwrap_or(f64::INFINITY);
        if ld >= lh {
            ordered += 1;
        }
    }
    let frac = ordered as f64 / TRIALS as f64;
    assert!(
        frac >= COVERAGE_FLOOR,
        "dkwm lambda >= hb lambda in only {frac} of trials"
    );
    assert!(
        pair.dkwm.abstentions >= pair.hb.abstentions,
        "dkwm abstained {} times, hb {} times",
        pair.dkwm.abstentions,
        pair.hb.abstentions
    );
    println!(
        "[PASS] criterion 5: dkwm lambda >= hb lambda in {:.0}% of trials; \
         abstentions dkwm {} >= hb {}",
        frac * 100.0,
        pair.dkwm.abstentions,
        pair.hb.abstentions
    );
}

#[test]
fn criterion_6_fairness_improves_under_utility_floor() {
    let pair = &*COVERAGE;
    let selected: Vec<_> = pair
        .hb
        .per_trial
        .iter()
        .filter(|r| r.lambda_hat.is_some())
        .collect();
    assert!(!selected.is_empty(), "every trial abstained");

    let improved = selected
        .iter()
        .filter(|r| r.test_disparity < r.det_disparity)
        .count();
    let improve_rate = improved as f64 / selected.len() as f64;
    assert!(
        improve_rate >= 0.95,
        "disparity improved in only {improve_rate} of non-abstained trials"
    );

    // test NDCG@K >= rho * U*_t is exactly the coverage indicator in
    // relative mode.
    let floor_rate = selected.iter().filter(|r| r.covered).count() as f64 / selected.len() as f64;
    assert!(
        floor_rate >= COVERAGE_FLOOR,
        "utility floor held in only {floor_rate} of non-abstained trials"
    );
    println!(
        "[PASS] criterion 6: disparity strictly improved in {:.0}% of {} non-abstained \
         trials; utility floor rate {:.3}",
        improve_rate * 100.0,
        selected.len(),
        floor_rate
    );
}

#[test]
fn criterion_7_tradeoff_trend_is_monotone() {
    let collection = &*BENCHMARK;
    let stats = fairrank::plmodel::fit_normalization(collection).unwrap();
    let table = RcScoreTable::build(collection, &stats, 1.0).unwrap();
    let cfg = config(5, 0.0, 100);
    let grid: Vec<f64> = (0..101)
        .map(|i| table.p_max_global * i as f64 / 100.0)
        .collect();
    let curve = run_tradeoff_sweep(&table, &cfg, &grid, 4242).unwrap();

    let lambdas: Vec<f64> = curve.rows.iter().map(|r| r.lambda).collect();
    let ndcg: Vec<f64> = curve.rows.iter().map(|r| r.mean_ndcg).collect();
    let disparity: Vec<f64> = curve.rows.iter().map(|r| r.mean_disparity).collect();
    let rho_ndcg = spearman(&lambdas, &ndcg);
    let rho_disp = spearman(&lambdas, &disparity);
    assert!(rho_ndcg > 0.8, "Spearman(lambda, ndcg) = {rho_ndcg}");
    assert!(rho_disp > 0.8, "Spearman(lambda, disparity) = {rho_disp}");
    println!(
        "[PASS] criterion 7: Spearman(lambda, NDCG@5) = {rho_ndcg:.3}, \
         Spearman(lambda, disparity) = {rho_disp:.3} over a 101-point sweep"
    );
}

#[test]
fn criterion_8_letor_pipeline_end_to_end() {
    let bin = env!("CARGO_BIN_EXE_fairrank");
    let data = |name: &str| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("data")
            .join(name)
            .display()
            .to_string()
    };
    let dir = tempfile::tempdir().unwrap();

    let out = Command::new(bin)
        .args([
            "convert",
            "--input",
            &data("toy_letor.features.txt"),
            "--scores",
            &data("toy_letor.scores.txt"),
            "--out",
            "toy.jsonl",
        ])
        .current_dir(dir.path())
        .env("FAIRRANK_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "convert failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = Command::new(bin)
        .args([
            "coverage",
            "--input",
            "toy.jsonl",
            "--alpha",
            "0.6",
            "--delta",
            "0.2",
            "--trials",
            "10",
            "--cal-fraction",
            "0.25",
            "--grid-points",
            "21",
            "--mc-samples",
            "100",
            "--bound",
            "hb",
            "--seed",
            "11",
            "--out",
            "coverage.json",
        ])
        .current_dir(dir.path())
        .env("FAIRRANK_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "coverage failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = std::fs::read_to_string(dir.path().join("coverage.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["trials"], 10);
    let per_trial = v["per_trial"].as_array().unwrap();
    assert_eq!(per_trial.len(), 10);
    for row in per_trial {
        for key in [
            "trial",
            "alpha",
            "outcome",
            "test_ndcg",
            "test_risk",
            "test_disparity",
            "det_ndcg",
            "det_disparity",
            "covered",
        ] {
            assert!(!row[key].is_null(), "missing per-trial key {key}");
        }
    }
    let selected = per_trial
        .iter()
        .filter(|r| r["outcome"] == "selected")
        .count();
    assert!(
        selected > 0,
        "alpha = 0.6 should certify on the toy extract"
    );

    // The CSV flavor of the same report.
    let out = Command::new(bin)
        .args([
            "coverage",
            "--input",
            "toy.jsonl",
            "--alpha",
            "0.6",
            "--delta",
            "0.2",
            "--trials",
            "10",
            "--cal-fraction",
            "0.25",
            "--grid-points",
            "21",
            "--mc-samples",
            "100",
            "--bound",
            "hb",
            "--seed",
            "11",
            "--out",
            "coverage.csv",
            "--out-format",
            "csv",
        ])
        .current_dir(dir.path())
        .env("FAIRRANK_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "trial,alpha,outcome,lambda_hat,test_ndcg,test_risk,test_disparity,det_ndcg,det_disparity,covered"
    );
    assert_eq!(csv.lines().count(), 11);
    println!(
        "[PASS] criterion 8: convert + coverage ran end-to-end on the bundled LETOR extract \
         ({selected}/10 trials certified)"
    );
}
