//! Related-query sets: the union of the hitting-time neighbors and the
//! cluster relation-score neighbors of an anchor, capped by fused rank.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bipartite::{BipartiteGraph, HittingTimeTable, WalkParams};
use crate::error::{Error, Result};
use crate::qqgraph::{self, ClusterParams};
use crate::querylog::{Corpus, QueryId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Walk,
    Cluster,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub query: QueryId,
    pub source: Source,
    /// `1 / (1 + fused rank)`, so the closest member scores 1.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedQuerySet {
    pub anchor: QueryId,
    /// Closest first.
    pub members: Vec<Member>,
}

impl RelatedQuerySet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = QueryId> + '_ {
        self.members.iter().map(|m| m.query)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assembled {
    Eligible(RelatedQuerySet),
    /// Too few related queries; carries the union size.
    Ineligible(usize),
}

impl Assembled {
    pub fn eligible(&self) -> Option<&RelatedQuerySet> {
        match self {
            Assembled::Eligible(set) => Some(set),
            Assembled::Ineligible(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeWindow {
    pub min: usize,
    pub max: usize,
}

impl Default for SizeWindow {
    fn default() -> Self {
        Self { min: 40, max: 1000 }
    }
}

/// Union of the two neighbor lists for `anchor`.
///
/// `walk` is ranked by ascending hitting time and `relation` by descending
/// relation score, ties by id in both, so input order is irrelevant. Each
/// member's fused rank is the smaller of its two ranks.
pub fn assemble(anchor: QueryId, walk: &[(QueryId, f64)], relation: &[(QueryId, f64)], window: SizeWindow) -> Assembled {
    let mut walk: Vec<_> = walk.iter().copied().filter(|e| e.0 != anchor).collect();
    walk.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut relation: Vec<_> = relation.iter().copied().filter(|e| e.0 != anchor).collect();
    relation.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut fused: HashMap<QueryId, (usize, Source)> = HashMap::new();
    for (rank, &(q, _)) in walk.iter().enumerate() {
        fused.entry(q).or_insert((rank, Source::Walk));
    }
    for (rank, &(q, _)) in relation.iter().enumerate() {
        fused
            .entry(q)
            .and_modify(|e| {
                if e.1 == Source::Walk {
                    e.0 = e.0.min(rank);
                    e.1 = Source::Both;
                }
            })
            .or_insert((rank, Source::Cluster));
    }
    let count = fused.len();
    if count < window.min {
        return Assembled::Ineligible(count);
    }
    let mut ranked: Vec<(QueryId, usize, Source)> = fused.into_iter().map(|(q, (r, s))| (q, r, s)).collect();
    ranked.sort_by_key(|&(q, r, _)| (r, q));
    ranked.truncate(window.max);
    Assembled::Eligible(RelatedQuerySet {
        anchor,
        members: ranked
            .into_iter()
            .map(|(query, rank, source)| Member {
                query,
                source,
                score: 1.0 / (1.0 + rank as f64),
            })
            .collect(),
    })
}

/// Everything needed to compute related sets for a whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelatedParams {
    pub walk: WalkParams,
    pub cluster: ClusterParams,
    pub window: SizeWindow,
}

/// Walk tables, clusters and assembled sets for every non-isolated query.
pub struct RelatedIndex {
    pub walk: Vec<HittingTimeTable>,
    pub clusters: Vec<qqgraph::Cluster>,
    pub sets: Vec<(QueryId, Assembled)>,
}

pub fn build_all(graph: &BipartiteGraph, params: &RelatedParams) -> Result<RelatedIndex> {
    let walk = graph.all_hitting_times(params.walk);
    let qq = qqgraph::induce_qq(graph);
    let clusters = qqgraph::partition(&qq, params.cluster.goodness)?;
    let relation = qqgraph::relation_lists(&qq, &clusters, params.cluster.relation_threshold);
    let sets = (0..graph.num_queries() as u32)
        .into_par_iter()
        .map(QueryId)
        .filter(|&q| !graph.urls_of(q).is_empty())
        .map(|q| {
            let rel = relation.get(&q).map_or(&[][..], Vec::as_slice);
            (q, assemble(q, &walk[q.index()].entries, rel, params.window))
        })
        .collect();
    Ok(RelatedIndex { walk, clusters, sets })
}

#[derive(Serialize, Deserialize)]
struct MemberLine {
    query: String,
    source: Source,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct SetLine {
    anchor: String,
    members: Vec<MemberLine>,
}

/// One JSON object per eligible set, queries by text.
pub fn write_jsonl<W: Write>(out: &mut W, sets: &[RelatedQuerySet], corpus: &Corpus) -> Result<()> {
    for set in sets {
        let line = SetLine {
            anchor: corpus.query_text(set.anchor).to_string(),
            members: set
                .members
                .iter()
                .map(|m| MemberLine {
                    query: corpus.query_text(m.query).to_string(),
                    source: m.source,
                    score: m.score,
                })
                .collect(),
        };
        serde_json::to_writer(&mut *out, &line)?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R, corpus: &Corpus) -> Result<Vec<RelatedQuerySet>> {
    let lookup = |text: &str| corpus.query_id(text).ok_or_else(|| Error::UnknownQueryText(text.to_string()));
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SetLine =
            serde_json::from_str(&line).map_err(|e| Error::malformed("related.jsonl", i + 1, e.to_string()))?;
        let members = parsed
            .members
            .iter()
            .map(|m| {
                Ok(Member {
                    query: lookup(&m.query)?,
                    source: m.source,
                    score: m.score,
                })
            })
            .collect::<Result<_>>()?;
        out.push(RelatedQuerySet {
            anchor: lookup(&parsed.anchor)?,
            members,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(range: std::ops::Range<u32>, base: f64) -> Vec<(QueryId, f64)> {
        range.map(|i| (QueryId(i), base + i as f64)).collect()
    }

    #[test]
    fn overlapping_union_is_eligible() {
        let walk = ids(1..31, 1.0);
        let rel: Vec<_> = (21..46).map(|i| (QueryId(i), 0.9)).collect();
        match assemble(QueryId(0), &walk, &rel, SizeWindow::default()) {
            Assembled::Eligible(set) => {
                assert_eq!(set.len(), 45);
                let both = set.members.iter().filter(|m| m.source == Source::Both).count();
                assert_eq!(both, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_union_is_ineligible() {
        let walk = ids(1..21, 1.0);
        let rel: Vec<_> = (16..26).map(|i| (QueryId(i), 0.5)).collect();
        assert_eq!(assemble(QueryId(0), &walk, &rel, SizeWindow::default()), Assembled::Ineligible(25));
    }

    #[test]
    fn anchor_never_a_member() {
        let walk = ids(0..50, 1.0);
        let set = assemble(QueryId(0), &walk, &[(QueryId(0), 1.0)], SizeWindow::default());
        let set = set.eligible().unwrap();
        assert_eq!(set.len(), 49);
        assert!(set.ids().all(|q| q != QueryId(0)));
    }

    #[test]
    fn cap_keeps_best_fused_ranks() {
        // 900 walk-only, 600 cluster-only: fused ranks interleave.
        let walk = ids(1..901, 1.0);
        let rel: Vec<_> = (901..1501).map(|i| (QueryId(i), 1.0 / i as f64)).collect();
        let set = assemble(QueryId(0), &walk, &rel, SizeWindow::default());
        let set = set.eligible().unwrap();
        assert_eq!(set.len(), 1000);
        // Independent rank oracle: walk rank = i - 1, relation rank = i - 901.
        let mut ranks: Vec<(usize, u32)> = (1..901).map(|i| ((i - 1) as usize, i)).collect();
        ranks.extend((901..1501).map(|i| ((i - 901) as usize, i)));
        ranks.sort();
        let kept: std::collections::HashSet<u32> = set.ids().map(|q| q.0).collect();
        let expected: std::collections::HashSet<u32> = ranks[..1000].iter().map(|r| r.1).collect();
        assert_eq!(kept, expected);
    }
}
