//! Sweep the threshold over its full range and watch the utility/fairness
//! trade-off: NDCG@5 rises with λ while exposure disparity rises too.
//! Common random numbers across the grid keep the curves smooth.
//!
//! ```bash
//! cargo run --example tradeoff_sweep
//! ```

use fairrank::harness::{generate_synthetic, run_tradeoff_sweep, spearman, SynthSpec};
use fairrank::plmodel::{fit_normalization, Lambdas, RcScoreTable, TplConfig};

fn main() -> anyhow::Result<()> {
    let collection = generate_synthetic(&SynthSpec {
        num_queries: 400,
        seed: 8,
        ..SynthSpec::default()
    })?;
    let stats = fit_normalization(&collection)?;
    let table = RcScoreTable::build(&collection, &stats, 1.0)?;
    let config = TplConfig::new(5, 1.0, Lambdas::Shared(0.0), 100)?;

    let grid: Vec<f64> = (0..=20)
        .map(|i| table.p_max_global * i as f64 / 20.0)
        .collect();
    let curve = run_tradeoff_sweep(&table, &config, &grid, 5)?;

    println!(
        "{:>8} {:>10} {:>10} {:>12}",
        "lambda", "ndcg@5", "risk", "disparity"
    );
    for row in &curve.rows {
        println!(
            "{:>8.4} {:>10.4} {:>10.4} {:>12.4}",
            row.lambda, row.mean_ndcg, row.mean_risk, row.mean_disparity
        );
    }
    println!(
        "\nPL reference (lambda 0):    ndcg {:.4}, disparity {:.4}",
        curve.pl_reference.mean_ndcg, curve.pl_reference.mean_disparity
    );
    println!(
        "deterministic reference:    ndcg {:.4}, disparity {:.4}",
        curve.det_reference.mean_ndcg, curve.det_reference.mean_disparity
    );

    let lambdas: Vec<f64> = curve.rows.iter().map(|r| r.lambda).collect();
    let ndcg: Vec<f64> = curve.rows.iter().map(|r| r.mean_ndcg).collect();
    let disp: Vec<f64> = curve.rows.iter().map(|r| r.mean_disparity).collect();
    println!(
        "\nSpearman(lambda, ndcg) = {:.3}, Spearman(lambda, disparity) = {:.3}",
        spearman(&lambdas, &ndcg),
        spearman(&lambdas, &disp)
    );
    Ok(())
}
