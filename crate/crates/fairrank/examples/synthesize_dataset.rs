//! Generate a synthetic pre-scored ranking dataset and write it as JSONL.
//!
//! The generator injects tie clusters: groups of equally relevant documents
//! whose scores differ by a hair. A deterministic ranker orders such
//! documents arbitrarily but rigidly, which is exactly the unfairness the
//! stochastic ranker corrects.
//!
//! ```bash
//! cargo run --example synthesize_dataset
//! ```

use fairrank::dataset::write_jsonl;
use fairrank::harness::{generate_synthetic, SynthSpec};

fn main() -> anyhow::Result<()> {
    let spec = SynthSpec {
        num_queries: 500,
        docs_per_query: (5, 12),
        noise_sigma: 0.5,
        tie_cluster_prob: 0.7,
        seed: 42,
        ..SynthSpec::default()
    };
    let collection = generate_synthetic(&spec)?;

    println!(
        "generated {} queries, {} documents (seed {})",
        collection.len(),
        collection.num_docs(),
        spec.seed
    );

    let mut grade_counts = [0usize; 5];
    for q in &collection.queries {
        for d in &q.docs {
            grade_counts[d.relevance as usize] += 1;
        }
    }
    println!("relevance grade histogram:");
    for (grade, count) in grade_counts.iter().enumerate() {
        println!("  grade {grade}: {count}");
    }

    let q = &collection.queries[0];
    println!("\nfirst query ({}):", q.qid);
    for d in &q.docs {
        println!(
            "  {:8}  rel {}  score {:+.4}",
            d.doc_id, d.relevance, d.raw_score
        );
    }

    let out = std::env::temp_dir().join("fairrank_synthetic.jsonl");
    write_jsonl(&collection, &out)?;
    println!("\nwrote {}", out.display());
    Ok(())
}
