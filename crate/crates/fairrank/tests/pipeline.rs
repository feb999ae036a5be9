//! End-to-end library pipeline on the bundled toy LETOR extract:
//! parse -> filter -> split -> normalize -> calibrate -> evaluate.

use std::path::PathBuf;

use fairrank::dataset::{self, SplitSpec};
use fairrank::metrics::{self, EvalMode};
use fairrank::plmodel::{fit_normalization, Lambdas, RcScoreTable, TplConfig};
use fairrank::riskcontrol::{self, build_grid, Bound, GridMode, Outcome, RiskSpec};

fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn toy_collection() -> dataset::QueryCollection {
    dataset::parse_svmlight(
        data_file("toy_letor.features.txt"),
        data_file("toy_letor.scores.txt"),
    )
    .unwrap()
}

#[test]
fn toy_extract_parses_with_expected_shape() {
    let c = toy_collection();
    assert_eq!(c.len(), 50);
    assert_eq!(c.num_docs(), 282);
    for q in &c.queries {
        assert!(q.docs.len() >= 3 && q.docs.len() <= 8);
        for (i, d) in q.docs.iter().enumerate() {
            assert_eq!(d.doc_id, format!("{}:{i}", q.qid));
            assert!(d.raw_score.is_finite());
            assert!(d.relevance <= 4);
        }
    }
}

#[test]
fn filtering_drops_queries_without_relevant_docs() {
    let c = toy_collection();
    let (filtered, removed) = dataset::filter_no_relevant(&c, 1).unwrap();
    assert_eq!(
        removed, 3,
        "the toy extract bundles 3 all-irrelevant queries"
    );
    assert_eq!(filtered.len(), 47);
    let (again, removed_again) = dataset::filter_no_relevant(&filtered, 1).unwrap();
    assert_eq!(removed_again, 0);
    assert_eq!(again.queries, filtered.queries);
}

#[test]
fn jsonl_roundtrip_preserves_the_collection() {
    let c = toy_collection();
    let dir = tempfile::tempdir().unwrap();
    for name in ["toy.jsonl", "toy.jsonl.gz"] {
        let path = dir.path().join(name);
        dataset::write_jsonl(&c, &path).unwrap();
        let back = dataset::parse_jsonl(&path).unwrap();
        assert_eq!(back.queries, c.queries, "{name} roundtrip");
    }
}

#[test]
fn calibrate_then_evaluate_on_toy_data() {
    let (collection, _) = dataset::filter_no_relevant(&toy_collection(), 1).unwrap();
    let (cal, test) = dataset::split(&collection, &SplitSpec::new(0.5, 11, 0).unwrap()).unwrap();
    assert_eq!(cal.len() + test.len(), collection.len());

    let stats = fit_normalization(&cal).unwrap();
    assert!(!stats.is_degenerate());
    let cal_table = RcScoreTable::build(&cal, &stats, 1.0).unwrap();
    let test_table = RcScoreTable::build(&test, &stats, 1.0).unwrap();

    let config = TplConfig::new(5, 1.0, Lambdas::Shared(0.0), 200).unwrap();
    let grid = build_grid(GridMode::Uniform, 41, &cal_table).unwrap();
    let spec = RiskSpec::new(0.5, 0.2, Bound::Hb, grid).unwrap();
    let result = riskcontrol::calibrate(&cal_table, &config, &spec, 99).unwrap();

    assert_eq!(result.outcome, Outcome::Selected, "alpha = 0.5 is generous");
    let lambda = result.lambda_hat.unwrap();
    assert_eq!(lambda, result.certified[0]);
    assert_eq!(result.grid.len(), 41);
    for row in &result.grid {
        assert!(row.r_tilde >= row.r_hat - 1e-15);
        assert!(row.p_or_ucb.is_finite());
    }

    let summary = metrics::evaluate_collection(
        &test_table,
        &config.with_lambda(lambda),
        EvalMode::MonteCarlo { seed: 5 },
    )
    .unwrap();
    assert!(summary.mean_risk >= 0.0 && summary.mean_risk <= 1.0);
    assert_eq!(summary.per_query.len(), test.len());

    // The calibrated TPL should sit between PL and deterministic on NDCG.
    let pl = metrics::evaluate_collection(
        &test_table,
        &config.with_lambda(0.0),
        EvalMode::MonteCarlo { seed: 5 },
    )
    .unwrap();
    let det = metrics::evaluate_deterministic(&test_table, &config).unwrap();
    assert!(
        summary.mean_ndcg >= pl.mean_ndcg - 0.02 && summary.mean_ndcg <= det.mean_ndcg + 0.02,
        "tpl {} should sit between pl {} and det {}",
        summary.mean_ndcg,
        pl.mean_ndcg,
        det.mean_ndcg
    );
}

#[test]
fn quantile_grid_calibration_also_works() {
    let (collection, _) = dataset::filter_no_relevant(&toy_collection(), 1).unwrap();
    let stats = fit_normalization(&collection).unwrap();
    let table = RcScoreTable::build(&collection, &stats, 1.0).unwrap();
    let config = TplConfig::new(5, 1.0, Lambdas::Shared(0.0), 100).unwrap();
    let grid = build_grid(GridMode::Quantile, 31, &table).unwrap();
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
    let spec = RiskSpec::new(0.6, 0.2, Bound::Dkwm, grid).unwrap();
    let result = riskcontrol::calibrate(&table, &config, &spec, 7).unwrap();
    assert!(result.grid.iter().all(|r| r.lambda <= table.p_max_global));
    if let Some(lh) = result.lambda_hat {
        assert!(lh <= table.p_max_global);
    }
}
