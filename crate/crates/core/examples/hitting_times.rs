//! Truncated hitting times on a small click log.
//!
//! cargo run --example hitting_times

use query_specificity::bipartite::{BipartiteGraph, WalkParams};
use query_specificity::querylog::{ingest, SearchRecord};

fn main() -> query_specificity::Result<()> {
    let log = [
        ("cheap flights", "flights.example", 30),
        ("cheap flights", "travel.example", 10),
        ("flight deals", "flights.example", 20),
        ("flight deals", "deals.example", 5),
        ("last minute travel", "travel.example", 12),
        ("last minute travel", "deals.example", 8),
        ("weather tomorrow", "weather.example", 40),
    ];
    let corpus = ingest(log.iter().map(|&(q, u, c)| SearchRecord::new(q, u, c)))?;
    let graph = BipartiteGraph::from_corpus(&corpus);
    let anchor = corpus.query_id("cheap flights").expect("query in log");
    let table = graph.hitting_times(anchor, WalkParams::default())?;
    println!("from {:?} (horizon {})", corpus.query_text(anchor), table.horizon);
    for (q, h) in &table.entries {
        println!("  {:<22} {h:.3}", corpus.query_text(*q));
    }
    Ok(())
}
