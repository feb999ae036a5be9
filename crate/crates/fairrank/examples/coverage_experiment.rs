//! Repeated-split coverage experiment: calibrate on 25% of the queries,
//! test on the rest, repeat, and count how often the realized test risk
//! stays below the target. The distribution-free guarantee promises
//! coverage at least 1 − δ; the bounds are conservative, so the observed
//! rate usually sits near 1.
//!
//! ```bash
//! cargo run --example coverage_experiment
//! ```

use fairrank::dataset::SplitSpec;
use fairrank::harness::{
    generate_synthetic, run_coverage, AlphaMode, CalibrationSettings, SynthSpec,
};
use fairrank::plmodel::{Lambdas, TplConfig};
use fairrank::riskcontrol::Bound;

fn main() -> anyhow::Result<()> {
    let collection = generate_synthetic(&SynthSpec {
        num_queries: 800,
        seed: 14,
        ..SynthSpec::default()
    })?;
    let config = TplConfig::new(5, 1.0, Lambdas::Shared(0.0), 100)?;
    let split = SplitSpec::new(0.25, 77, 0)?;
    let trials = 30;

    for bound in [Bound::Hb, Bound::Dkwm] {
        let settings = CalibrationSettings {
            delta: 0.1,
            bound,
            grid_points: 51,
            ..CalibrationSettings::default()
        };
        // Guarantee at least 90% of the deterministic ranker's NDCG@5.
        let report = run_coverage(
            &collection,
            AlphaMode::Relative(0.9),
            &settings,
            trials,
            &split,
            &config,
            2718,
        )?;

        println!("== bound {bound} ==");
        println!("  trials:                 {}", report.trials);
        println!("  abstentions:            {}", report.abstentions);
        match report.coverage_rate {
            Some(rate) => println!("  coverage (non-abstained): {rate:.3}"),
            None => println!("  coverage (non-abstained): n/a"),
        }
        println!(
            "  coverage (all trials):  {:.3}",
            report.coverage_rate_all_trials
        );

        let selected: Vec<_> = report
            .per_trial
            .iter()
            .filter(|r| r.lambda_hat.is_some())
            .collect();
        if !selected.is_empty() {
            let mean = |f: fn(&fairrank::harness::TrialRecord) -> f64| -> f64 {
                selected.iter().map(|r| f(r)).sum::<f64>() / selected.len() as f64
            };
            println!(
                "  mean lambda_hat:        {:.4}",
                mean(|r| r.lambda_hat.unwrap())
            );
            println!(
                "  mean test ndcg:         {:.4} (deterministic {:.4})",
                mean(|r| r.test_ndcg),
                mean(|r| r.det_ndcg)
            );
            println!(
                "  mean test disparity:    {:.4} (deterministic {:.4})",
                mean(|r| r.test_disparity),
                mean(|r| r.det_disparity)
            );
        }
        println!();
    }
    Ok(())
}
