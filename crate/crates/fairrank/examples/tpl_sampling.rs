//! The thresholded Plackett-Luce model on one query: risk-control scores,
//! prediction sets, and how the threshold λ interpolates between the plain
//! PL sampler (λ = 0) and the deterministic ranking (λ = 1).
//!
//! ```bash
//! cargo run --example tpl_sampling
//! ```

use fairrank::dataset::{Document, ScoredQuery};
use fairrank::plmodel::{
    prediction_set, rc_scores, sample_ranking_rng, Lambdas, NormalizationStats, TplConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    // One query: two clearly strong documents with near-identical scores,
    // one mid-tier, two weak.
    let query = ScoredQuery {
        qid: "demo".into(),
        docs: vec![
            doc("a", 2.01, 3),
            doc("b", 2.00, 3),
            doc("c", 1.10, 2),
            doc("d", 0.10, 0),
            doc("e", -0.30, 0),
        ],
    };
    let stats = NormalizationStats::new(1.0, 1.0)?;
    let row = rc_scores(&query, &stats, 1.0)?;

    println!("risk-control scores (softmax of standardized scores):");
    for d in row.docs() {
        println!(
            "  {}  score {:+.3}  rc {:.4}  rel {}",
            d.doc_id, d.score, d.rc_score, d.relevance
        );
    }

    println!("\nprediction sets at position 1:");
    for lambda in [0.0, 0.1, 0.3, 0.5] {
        let set = prediction_set(&row, &[], lambda)?;
        let ids: Vec<&str> = set.iter().map(|&i| row.docs()[i].doc_id.as_str()).collect();
        println!("  lambda {lambda:.1} -> {{{}}}", ids.join(", "));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for lambda in [0.0, 0.3, 1.0] {
        let config = TplConfig::new(3, 1.0, Lambdas::Shared(lambda), 1)?;
        println!("\nfive samples at lambda = {lambda}:");
        for _ in 0..5 {
            let ranking = sample_ranking_rng(&row, &config, &mut rng);
            println!("  {:?}", ranking.doc_ids(&row));
        }
    }
    println!("\nlambda = 0 behaves like Plackett-Luce; lambda = 1 is always [a, b, c].");
    Ok(())
}

fn doc(id: &str, score: f64, rel: u8) -> Document {
    Document {
        doc_id: id.into(),
        raw_score: score,
        relevance: rel,
    }
}
