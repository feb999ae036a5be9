//! Calibrate the TPL threshold on a synthetic dataset under both
//! certification backends and inspect the diagnostics: empirical risk, its
//! monotone envelope, the p-value / UCB at every candidate, and the
//! certified set.
//!
//! ```bash
//! cargo run --example calibrate_threshold
//! ```

use fairrank::harness::{generate_synthetic, SynthSpec};
use fairrank::plmodel::{fit_normalization, Lambdas, RcScoreTable, TplConfig};
use fairrank::riskcontrol::{build_grid, calibrate, Bound, GridMode, Outcome, RiskSpec};

fn main() -> anyhow::Result<()> {
    let collection = generate_synthetic(&SynthSpec {
        num_queries: 600,
        seed: 3,
        ..SynthSpec::default()
    })?;
    let stats = fit_normalization(&collection)?;
    let table = RcScoreTable::build(&collection, &stats, 1.0)?;
    let config = TplConfig::new(5, 1.0, Lambdas::Shared(0.0), 100)?;

    let grid = build_grid(GridMode::Uniform, 21, &table)?;
    let (alpha, delta) = (0.10, 0.1);

    for bound in [Bound::Hb, Bound::Dkwm] {
        let spec = RiskSpec::new(alpha, delta, bound, grid.clone())?;
        let result = calibrate(&table, &config, &spec, 11)?;

        println!("== bound {bound}, alpha {alpha}, delta {delta} ==");
        println!(
            "  {:>8} {:>8} {:>8} {:>10} {:>10}  certified",
            "lambda", "r_hat", "r_tilde", "p_or_ucb", "disparity"
        );
        for row in &result.grid {
            let mark = if result.certified.contains(&row.lambda) {
                "*"
            } else {
                ""
            };
            println!(
                "  {:>8.4} {:>8.4} {:>8.4} {:>10.3e} {:>10.4}  {mark}",
                row.lambda, row.r_hat, row.r_tilde, row.p_or_ucb, row.disparity
            );
        }
        match result.outcome {
            Outcome::Selected => println!(
                "  -> selected lambda_hat = {:.4} (smallest certified; minimizes disparity)\n",
                result.lambda_hat.unwrap()
            ),
            Outcome::Abstain => println!(
                "  -> abstained; fall back to lambda = {} (deterministic ranking)\n",
                result.lambda_or_fallback()
            ),
        }
    }
    Ok(())
}
