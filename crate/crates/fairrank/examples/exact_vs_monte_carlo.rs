//! Cross-check the two estimator routes on a small instance: exact
//! enumeration of the TPL distribution against Monte Carlo sampling, for
//! the ranking distribution itself, the utility risk, and expected
//! exposure.
//!
//! ```bash
//! cargo run --example exact_vs_monte_carlo
//! ```

use std::collections::HashMap;

use fairrank::dataset::{Document, QueryCollection, ScoredQuery};
use fairrank::metrics::{exact_risk, expected_exposure, mc_risk, ExposureMode};
use fairrank::plmodel::{
    exact_ranking_distribution, sample_ranking_rng, Lambdas, NormalizationStats, Ranking,
    RcScoreTable, TplConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let query = ScoredQuery {
        qid: "q".into(),
        docs: [(1.2, 2), (0.9, 3), (0.4, 0), (-0.2, 1)]
            .iter()
            .enumerate()
            .map(|(i, &(score, rel))| Document {
                doc_id: format!("d{i}"),
                raw_score: score,
                relevance: rel,
            })
            .collect(),
    };
    let collection = QueryCollection::new(vec![query], "example")?;
    let stats = NormalizationStats::new(0.0, 1.0)?;
    let table = RcScoreTable::build(&collection, &stats, 1.0)?;
    let row = &table.queries()[0];
    let config = TplConfig::new(2, 1.0, Lambdas::Shared(0.15), 20_000)?;

    // Ranking distribution: enumeration vs 20k samples.
    let exact = exact_ranking_distribution(row, &config)?;
    let m = config.m;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts: HashMap<Ranking, usize> = HashMap::new();
    for _ in 0..m {
        *counts
            .entry(sample_ranking_rng(row, &config, &mut rng))
            .or_default() += 1;
    }
    println!("ranking distribution at lambda = 0.15, K = 2:");
    println!("  {:12} {:>9} {:>9}", "ranking", "exact", "mc");
    for (ranking, p) in &exact {
        let freq = counts.get(ranking).copied().unwrap_or(0) as f64 / m as f64;
        println!(
            "  {:12} {p:>9.4} {freq:>9.4}",
            format!("{:?}", ranking.doc_ids(row))
        );
    }

    // Risk.
    let exact = exact_risk(&table, &config)?;
    let mc = mc_risk(&table, &config, 7)?;
    println!("\nutility risk (1 - NDCG@2):");
    println!(
        "  exact {:.5}   mc {:.5}   |diff| {:.2e}",
        exact.mean,
        mc.mean,
        (exact.mean - mc.mean).abs()
    );

    // Exposure.
    let exact = expected_exposure(row, &config, ExposureMode::Exact)?;
    let mc = expected_exposure(row, &config, ExposureMode::MonteCarlo { m, seed: 9 })?;
    println!("\nexpected exposure per document:");
    println!("  {:4} {:>9} {:>9}", "doc", "exact", "mc");
    for (i, d) in row.docs().iter().enumerate() {
        println!("  {:4} {:>9.4} {:>9.4}", d.doc_id, exact[i], mc[i]);
    }
    let conserved: f64 = exact.iter().sum();
    let theta_sum: f64 = config.theta.iter().sum();
    println!("  exposure mass {conserved:.6} = theta sum {theta_sum:.6}");
    Ok(())
}
