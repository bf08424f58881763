//! Full run on a synthetic corpus, artifacts written to a directory.
//!
//! cargo run --release --example end_to_end -- [DIR]

use std::path::PathBuf;

use query_specificity::pipeline::{self, RunConfig};

fn main() -> query_specificity::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("qspec-run"));
    let cfg = RunConfig::default();
    let summary = pipeline::run(&cfg, &dir, None)?;
    for (stage, secs) in summary.timings {
        println!("{stage:>9} {secs:7.2}s");
    }
    println!("{}", std::fs::read_to_string(dir.join("metrics.json"))?);
    Ok(())
}
