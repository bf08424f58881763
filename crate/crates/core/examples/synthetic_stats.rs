//! Synthetic click log with ground truth, and per-label length and session histograms.
//!
//! cargo run --example synthetic_stats

use std::collections::HashMap;

use query_specificity::eval::{distribution_stats, generate_synthetic, Feature, SyntheticCorpusConfig};
use query_specificity::querylog::ingest;
use query_specificity::Label;

fn main() -> query_specificity::Result<()> {
    let synth = generate_synthetic(&SyntheticCorpusConfig::balanced(2), 5)?;
    for q in synth.anchors() {
        println!("anchor {:<40} {}", q.text, q.label);
    }
    let corpus = ingest(synth.records)?;
    println!("{} queries, {} urls, {} clicks", corpus.num_queries(), corpus.num_urls(), corpus.total_clicks());
    let labels: HashMap<_, _> = synth
        .queries
        .iter()
        .filter_map(|q| corpus.query_id(&q.text).map(|id| (id, q.label)))
        .collect();
    let stats = distribution_stats(&corpus, &labels);
    for label in [Label::Lookup, Label::Exploratory] {
        for feature in [Feature::QueryLength, Feature::SessionPosition] {
            println!("{label:<12} {:<16} {}", feature.as_str(), stats.mass(label, feature));
        }
    }
    let mut csv = Vec::new();
    stats.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
