//! Per-label histograms of query length and session position.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::label::Label;
use crate::querylog::{Corpus, QueryId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// Words in the normalized query.
    QueryLength,
    /// Earliest position at which the query appears in a session.
    SessionPosition,
}

impl Feature {
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::QueryLength => "query_length",
            Feature::SessionPosition => "session_position",
        }
    }
}

/// One histogram per (label, feature) that has any mass. Each labeled query
/// contributes once; queries without session data are absent from the
/// position histograms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistributionStats {
    pub histograms: BTreeMap<(Label, Feature), BTreeMap<u32, u64>>,
}

impl DistributionStats {
    pub fn mass(&self, label: Label, feature: Feature) -> u64 {
        self.histograms.get(&(label, feature)).map_or(0, |h| h.values().sum())
    }

    /// `label,feature,value,count`, sorted.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "label,feature,value,count")?;
        for ((label, feature), hist) in &self.histograms {
            for (value, count) in hist {
                writeln!(out, "{},{},{},{}", label, feature.as_str(), value, count)?;
            }
        }
        Ok(())
    }
}

pub fn distribution_stats(corpus: &Corpus, labels: &HashMap<QueryId, Label>) -> DistributionStats {
    let mut stats = DistributionStats::default();
    for (&q, &label) in labels {
        let length = corpus.query_text(q).split_whitespace().count() as u32;
        *stats
            .histograms
            .entry((label, Feature::QueryLength))
            .or_default()
            .entry(length)
            .or_default() += 1;
        if let Some(&pos) = corpus.session_positions(q).iter().min() {
            *stats
                .histograms
                .entry((label, Feature::SessionPosition))
                .or_default()
                .entry(pos)
                .or_default() += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querylog::{ingest, SearchRecord};

    #[test]
    fn single_label_mass_equals_query_count() {
        let corpus = ingest(vec![
            SearchRecord::new("a b", "u", 1).with_session("s", 1),
            SearchRecord::new("a b c", "u", 1).with_session("s", 2),
            SearchRecord::new("d", "v", 2),
        ])
        .unwrap();
        let labels: HashMap<QueryId, Label> = corpus.query_ids().map(|q| (q, Label::Lookup)).collect();
        let stats = distribution_stats(&corpus, &labels);
        assert_eq!(stats.mass(Label::Lookup, Feature::QueryLength), 3);
        assert_eq!(stats.mass(Label::Lookup, Feature::SessionPosition), 2);
        assert!(stats.histograms.keys().all(|(l, _)| *l == Label::Lookup));
        let mut buf = Vec::new();
        stats.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,feature,value,count\nlookup,query_length,1,1\n"));
    }
}
