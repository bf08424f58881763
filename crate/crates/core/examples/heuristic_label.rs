//! Lookup vs Exploratory from the shape of a pattern dictionary.
//!
//! cargo run --example heuristic_label

use query_specificity::embeddings::EmbeddingSpec;
use query_specificity::heuristic::{classify, HeuristicParams};
use query_specificity::patterns::{mine_patterns, MinedQuery, MiningParams};
use query_specificity::querylog::QueryId;

fn label(name: &str, related: &[(String, u64)]) -> query_specificity::Result<()> {
    let queries: Vec<MinedQuery> = related.iter().map(|(t, f)| MinedQuery::new(t, *f)).collect();
    let dict = mine_patterns(&queries, &MiningParams::default())?;
    let provider = EmbeddingSpec::default().build()?;
    match classify(QueryId(0), &dict, provider.as_ref(), &HeuristicParams::default())? {
        Some(l) => println!("{name:<8} {} (core weight {:.3}, {} patterns)", l.kind, l.density, l.n_patterns),
        None => println!("{name:<8} no patterns, unlabeled"),
    }
    Ok(())
}

fn combine(heads: &[&str], tails: &[&str]) -> Vec<(String, u64)> {
    let mut out = Vec::new();
    for (i, h) in heads.iter().enumerate() {
        for (j, t) in tails.iter().enumerate() {
            out.push((format!("{h} {t}").trim().to_string(), 1 + ((i * 5 + j * 3) % 9) as u64));
        }
    }
    out
}

fn main() -> query_specificity::Result<()> {
    let years: Vec<String> = (1980..2024).map(|y| y.to_string()).collect();
    let years: Vec<&str> = years.iter().map(String::as_str).collect();
    // One ordered need in a few variants: the heavy patterns overlap and form a dense core.
    let narrow = combine(
        &[
            "nissan leaf battery range per charge us",
            "nissan leaf battery range per charge uk",
            "nissan leaf battery range per charge eu",
            "nissan leaf battery range per charge ca",
        ],
        &years[..11],
    );
    // Separate facets: each facet yields its own pattern and they do not cluster.
    let broad = combine(
        &["wine tasting", "history timeline", "football league", "train pass", "visa rules", "opera houses", "olive harvest"],
        &years[..6],
    );
    label("narrow", &narrow)?;
    label("broad", &broad)
}
