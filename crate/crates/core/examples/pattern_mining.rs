//! Ordered keyword patterns mined from a related-query set.
//!
//! cargo run --example pattern_mining

use query_specificity::patterns::{mine_patterns, MinedQuery, MiningParams};

fn main() -> query_specificity::Result<()> {
    // Word sets of a related-query set; mining needs at least 40 queries.
    let lead = ["how to", "", "quick", "easy", "steps to"];
    let tail = ["iphone", "iphone password", "iphone settings", "ipad", "router", "iphone 13", "apple id", "iphone passcode", "airpods"];
    let mut queries = Vec::new();
    for (i, l) in lead.iter().enumerate() {
        for (j, t) in tail.iter().enumerate() {
            let text = format!("{l} reset {t}");
            queries.push(MinedQuery::new(text.trim(), 1 + ((i * 7 + j * 3) % 11) as u64));
        }
    }
    queries.push(MinedQuery::new("iphone reset how to", 4));
    let dict = mine_patterns(&queries, &MiningParams::default())?;
    println!("k_min {}", dict.k_min);
    println!("{:<22} {:>7} {:>7} {:>8}", "pattern", "support", "conf", "weight");
    for p in &dict.patterns {
        println!("{:<22} {:>7.3} {:>7.3} {:>8.4}", p.text(), p.support, p.confidence, p.weight);
    }
    Ok(())
}
