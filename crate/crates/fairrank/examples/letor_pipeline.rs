//! Full pipeline on the bundled LETOR-format toy extract: parse the
//! SVMLight features plus score sidecar, filter queries with no relevant
//! documents, calibrate a threshold, and evaluate it — the same flow the
//! `convert` / `calibrate` / `evaluate` subcommands drive from files.
//!
//! ```bash
//! cargo run --example letor_pipeline
//! ```

use std::path::PathBuf;

use fairrank::dataset::{filter_no_relevant, parse_svmlight, split, SplitSpec};
use fairrank::metrics::{evaluate_collection, evaluate_deterministic, EvalMode};
use fairrank::plmodel::{fit_normalization, Lambdas, RcScoreTable, TplConfig};
use fairrank::riskcontrol::{build_grid, calibrate, Bound, GridMode, RiskSpec};

fn main() -> anyhow::Result<()> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data");
    let collection = parse_svmlight(
        data.join("toy_letor.features.txt"),
        data.join("toy_letor.scores.txt"),
    )?;
    println!(
        "parsed {} queries, {} documents from {}",
        collection.len(),
        collection.num_docs(),
        collection.provenance
    );

    let (collection, removed) = filter_no_relevant(&collection, 1)?;
    println!(
        "filtered {removed} queries with no relevant documents; {} remain",
        collection.len()
    );

    let (cal, test) = split(&collection, &SplitSpec::new(0.5, 4, 0)?)?;
    println!(
        "split into {} calibration / {} test queries",
        cal.len(),
        test.len()
    );

    let stats = fit_normalization(&cal)?;
    let cal_table = RcScoreTable::build(&cal, &stats, 1.0)?;
    let test_table = RcScoreTable::build(&test, &stats, 1.0)?;

    let config = TplConfig::new(5, 1.0, Lambdas::Shared(0.0), 200)?;
    let grid = build_grid(GridMode::Quantile, 31, &cal_table)?;
    let spec = RiskSpec::new(0.45, 0.2, Bound::Hb, grid)?;
    let result = calibrate(&cal_table, &config, &spec, 6)?;
    let lambda = result.lambda_or_fallback();
    println!(
        "calibration outcome: {:?}, lambda = {lambda:.4} ({} certified candidates)",
        result.outcome,
        result.certified.len()
    );

    let tpl = evaluate_collection(
        &test_table,
        &config.with_lambda(lambda),
        EvalMode::MonteCarlo { seed: 12 },
    )?;
    let det = evaluate_deterministic(&test_table, &config)?;
    println!("\ntest-set metrics (K = 5):");
    println!("  {:16} {:>8} {:>10}", "", "ndcg", "disparity");
    println!(
        "  {:16} {:>8.4} {:>10.4}",
        "calibrated TPL", tpl.mean_ndcg, tpl.mean_disparity
    );
    println!(
        "  {:16} {:>8.4} {:>10.4}",
        "deterministic", det.mean_ndcg, det.mean_disparity
    );
    Ok(())
}
