//! Query-query graph, goodness-driven partition and relation scores.
//!
//! cargo run --example query_clusters

use query_specificity::bipartite::BipartiteGraph;
use query_specificity::qqgraph::{induce_qq, partition, relation_scores};
use query_specificity::querylog::{ingest, SearchRecord};

fn main() -> query_specificity::Result<()> {
    let mut log = Vec::new();
    for q in ["python list sort", "sort list python", "python sorted function"] {
        log.push(SearchRecord::new(q, "docs.python.example/sorting", 10));
        log.push(SearchRecord::new(q, "forum.example/python", 2));
    }
    for q in ["rust borrow checker", "borrow checker error", "rust lifetimes"] {
        log.push(SearchRecord::new(q, "doc.rust.example/book/ch04", 10));
        log.push(SearchRecord::new(q, "forum.example/rust", 2));
    }
    log.push(SearchRecord::new("python sorted function", "forum.example/rust", 1));
    let corpus = ingest(log)?;
    let qq = induce_qq(&BipartiteGraph::from_corpus(&corpus));
    println!("{} queries, {} edges", qq.num_nodes(), qq.num_edges());
    for cluster in partition(&qq, 0.6)? {
        let names: Vec<&str> = cluster.members.iter().map(|&q| corpus.query_text(q)).collect();
        println!("cluster goodness {:.3}: {names:?}", cluster.goodness);
        for s in relation_scores(&qq, &cluster, 0.3) {
            println!("  {} ~ {} = {:.3}", corpus.query_text(s.a), corpus.query_text(s.b), s.value);
        }
    }
    Ok(())
}
