//! Query-URL bipartite click graph and truncated random-walk hitting times.
//!
//! The walk alternates query -> URL -> query, choosing each neighbor with
//! probability proportional to its click weight. The truncated hitting time
//! from `i` to `j` with horizon `h` is `E[min(tau_j, h)]`, where `tau_j` is
//! the first step at which the walk started at `i` stands on `j`. It is
//! computed exactly by a backward recursion absorbing at the target:
//!
//! ```text
//! V_0(x) = 0,   V_t(j) = 0,   V_t(x) = 1 + sum_y P(x, y) V_{t-1}(y)
//! ```
//!
//! One recursion per target yields the value from every source at once.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::querylog::{Corpus, QueryId, UrlId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Query(QueryId),
    Url(UrlId),
}

/// Walk configuration: horizon in bipartite steps and the relatedness cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub horizon: usize,
    pub threshold: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            horizon: 20,
            threshold: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTimeTable {
    pub anchor: QueryId,
    /// Ascending by expected steps, ties by id. Excludes the anchor.
    pub entries: Vec<(QueryId, f64)>,
    pub horizon: usize,
}

/// Adjacency lists in both directions, weights are click counts.
#[derive(Debug, Clone, Default)]
pub struct BipartiteGraph {
    forward: Vec<Vec<(UrlId, f64)>>,
    backward: Vec<Vec<(QueryId, f64)>>,
    query_out: Vec<f64>,
    url_out: Vec<f64>,
}

impl BipartiteGraph {
    /// Build from explicit edges. Non-positive weights are rejected.
    pub fn from_edges(num_queries: usize, num_urls: usize, edges: &[(QueryId, UrlId, f64)]) -> Result<Self> {
        let mut forward = vec![Vec::new(); num_queries];
        let mut backward = vec![Vec::new(); num_urls];
        for &(q, u, w) in edges {
            if q.index() >= num_queries {
                return Err(Error::UnknownQuery(q.0));
            }
            if u.index() >= num_urls {
                return Err(Error::InvalidParameter(format!("url id {} out of range", u.0)));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("edge weight {w} must be positive")));
            }
            forward[q.index()].push((u, w));
            backward[u.index()].push((q, w));
        }
        for list in &mut forward {
            list.sort_by_key(|&(u, _)| u);
            list.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        for list in &mut backward {
            list.sort_by_key(|&(q, _)| q);
            list.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        let query_out = forward.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
        let url_out = backward.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
        Ok(Self {
            forward,
            backward,
            query_out,
            url_out,
        })
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        let edges: Vec<_> = corpus.edges().map(|(q, u, c)| (q, u, c as f64)).collect();
        Self::from_edges(corpus.num_queries(), corpus.num_urls(), &edges).expect("corpus edges are valid")
    }

    pub fn num_queries(&self) -> usize {
        self.forward.len()
    }

    pub fn num_urls(&self) -> usize {
        self.backward.len()
    }

    pub fn urls_of(&self, q: QueryId) -> &[(UrlId, f64)] {
        &self.forward[q.index()]
    }

    pub fn queries_of(&self, u: UrlId) -> &[(QueryId, f64)] {
        &self.backward[u.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.forward.iter().all(Vec::is_empty)
    }

    /// One-step transition distribution from `node`.
    pub fn walk_transition(&self, node: Node) -> Result<Vec<(Node, f64)>> {
        match node {
            Node::Query(q) => {
                let list = self.forward.get(q.index()).ok_or(Error::UnknownQuery(q.0))?;
                if list.is_empty() {
                    return Err(Error::DanglingNode(format!("query {}", q.0)));
                }
                let total = self.query_out[q.index()];
                Ok(list.iter().map(|&(u, w)| (Node::Url(u), w / total)).collect())
            }
            Node::Url(u) => {
                let list = self
                    .backward
                    .get(u.index())
                    .ok_or_else(|| Error::InvalidParameter(format!("url id {} out of range", u.0)))?;
                if list.is_empty() {
                    return Err(Error::DanglingNode(format!("url {}", u.0)));
                }
                let total = self.url_out[u.index()];
                Ok(list.iter().map(|&(q, w)| (Node::Query(q), w / total)).collect())
            }
        }
    }

    /// `E[min(tau_target, horizon)]` from every query (index = query id).
    /// The target itself gets 0; queries that cannot reach the target within
    /// the horizon get exactly `horizon`.
    pub fn truncated_to_target(&self, target: QueryId, horizon: usize) -> Vec<f64> {
        let mut out = vec![horizon as f64; self.num_queries()];
        for (q, v) in self.local_values(target, horizon) {
            out[q.index()] = v;
        }
        out
    }

    /// Backward recursion restricted to nodes within `horizon` steps of the
    /// target. A node outside that ball cannot reach the target within the
    /// remaining steps, so its value at step `t` is exactly `t`.
    fn local_values(&self, target: QueryId, horizon: usize) -> Vec<(QueryId, f64)> {
        let (queries, urls) = self.ball(target, horizon);
        let qpos: HashMap<QueryId, usize> = queries.iter().enumerate().map(|(i, &q)| (q, i)).collect();
        let upos: HashMap<UrlId, usize> = urls.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        // Local adjacency with `None` for neighbors outside the ball.
        let qadj: Vec<Vec<(Option<usize>, f64)>> = queries
            .iter()
            .map(|&q| self.forward[q.index()].iter().map(|&(u, w)| (upos.get(&u).copied(), w)).collect())
            .collect();
        let uadj: Vec<Vec<(Option<usize>, f64)>> = urls
            .iter()
            .map(|&u| self.backward[u.index()].iter().map(|&(q, w)| (qpos.get(&q).copied(), w)).collect())
            .collect();
        let qtot: Vec<f64> = queries.iter().map(|q| self.query_out[q.index()]).collect();
        let utot: Vec<f64> = urls.iter().map(|u| self.url_out[u.index()]).collect();

        let mut vq = vec![0.0_f64; queries.len()];
        let mut vu = vec![0.0_f64; urls.len()];
        let mut next_q = vec![0.0_f64; queries.len()];
        let mut next_u = vec![0.0_f64; urls.len()];
        for step in 0..horizon {
            let outside = step as f64;
            for (i, adj) in qadj.iter().enumerate() {
                next_q[i] = if queries[i] == target {
                    0.0
                } else if adj.is_empty() {
                    outside + 1.0
                } else {
                    let s: f64 = adj.iter().map(|&(j, w)| w * j.map_or(outside, |j| vu[j])).sum();
                    1.0 + s / qtot[i]
                };
            }
            for (i, adj) in uadj.iter().enumerate() {
                let s: f64 = adj.iter().map(|&(j, w)| w * j.map_or(outside, |j| vq[j])).sum();
                next_u[i] = 1.0 + s / utot[i];
            }
            std::mem::swap(&mut vq, &mut next_q);
            std::mem::swap(&mut vu, &mut next_u);
        }
        queries.into_iter().zip(vq).collect()
    }

    /// Query and URL nodes within `horizon` bipartite steps of `center`.
    fn ball(&self, center: QueryId, horizon: usize) -> (Vec<QueryId>, Vec<UrlId>) {
        let mut qseen: HashMap<QueryId, usize> = HashMap::new();
        let mut useen: HashSet<UrlId> = HashSet::new();
        let mut queries = vec![center];
        let mut urls = Vec::new();
        qseen.insert(center, 0);
        let mut queue = VecDeque::from([(center, 0usize)]);
        while let Some((q, d)) = queue.pop_front() {
            if d + 1 > horizon {
                continue;
            }
            for &(u, _) in &self.forward[q.index()] {
                if !useen.insert(u) {
                    continue;
                }
                urls.push(u);
                if d + 2 > horizon {
                    continue;
                }
                for &(q2, _) in &self.backward[u.index()] {
                    if let std::collections::hash_map::Entry::Vacant(e) = qseen.entry(q2) {
                        e.insert(d + 2);
                        queries.push(q2);
                        queue.push_back((q2, d + 2));
                    }
                }
            }
        }
        (queries, urls)
    }

    /// Queries reachable from `anchor` within `horizon` bipartite steps,
    /// excluding the anchor.
    pub fn reachable_queries(&self, anchor: QueryId, horizon: usize) -> Vec<QueryId> {
        let mut qdist = vec![usize::MAX; self.num_queries()];
        let mut useen = vec![false; self.num_urls()];
        let mut queue = VecDeque::new();
        qdist[anchor.index()] = 0;
        queue.push_back(anchor);
        while let Some(q) = queue.pop_front() {
            let d = qdist[q.index()];
            if d + 2 > horizon {
                continue;
            }
            for &(u, _) in &self.forward[q.index()] {
                if useen[u.index()] {
                    continue;
                }
                useen[u.index()] = true;
                for &(q2, _) in &self.backward[u.index()] {
                    if qdist[q2.index()] == usize::MAX {
                        qdist[q2.index()] = d + 2;
                        queue.push_back(q2);
                    }
                }
            }
        }
        let mut out: Vec<QueryId> = (0..self.num_queries() as u32)
            .map(QueryId)
            .filter(|&q| q != anchor && qdist[q.index()] != usize::MAX)
            .collect();
        out.sort();
        out
    }

    fn check_anchor(&self, anchor: QueryId) -> Result<()> {
        match self.forward.get(anchor.index()) {
            None => Err(Error::UnknownQuery(anchor.0)),
            Some(list) if list.is_empty() => Err(Error::DanglingNode(format!("query {}", anchor.0))),
            Some(_) => Ok(()),
        }
    }

    /// Truncated hitting times from one anchor to every query reachable within
    /// the horizon; entries with value below the threshold are kept.
    pub fn hitting_times(&self, anchor: QueryId, params: WalkParams) -> Result<HittingTimeTable> {
        self.check_anchor(anchor)?;
        let targets = self.reachable_queries(anchor, params.horizon);
        let mut entries: Vec<(QueryId, f64)> = targets
            .par_iter()
            .filter_map(|&t| {
                self.local_values(t, params.horizon)
                    .into_iter()
                    .find(|&(src, _)| src == anchor)
                    .map(|(_, v)| (t, v))
            })
            .filter(|&(_, v)| keep(v, params))
            .collect();
        sort_entries(&mut entries);
        Ok(HittingTimeTable {
            anchor,
            entries,
            horizon: params.horizon,
        })
    }

    /// Tables for every non-isolated query, one backward recursion per target.
    pub fn all_hitting_times(&self, params: WalkParams) -> Vec<HittingTimeTable> {
        let nq = self.num_queries();
        let per_target: Vec<Vec<(QueryId, f64)>> = (0..nq as u32)
            .into_par_iter()
            .map(|t| {
                let target = QueryId(t);
                if self.forward[t as usize].is_empty() {
                    return Vec::new();
                }
                self.local_values(target, params.horizon)
                    .into_iter()
                    .filter(|&(src, v)| src != target && keep(v, params))
                    .collect()
            })
            .collect();
        let mut tables: Vec<HittingTimeTable> = (0..nq as u32)
            .map(|a| HittingTimeTable {
                anchor: QueryId(a),
                entries: Vec::new(),
                horizon: params.horizon,
            })
            .collect();
        for (t, sources) in per_target.into_iter().enumerate() {
            for (src, v) in sources {
                tables[src.index()].entries.push((QueryId(t as u32), v));
            }
        }
        for table in &mut tables {
            sort_entries(&mut table.entries);
        }
        tables
    }
}

// Unreachable targets sit at exactly `horizon` up to rounding.
fn keep(value: f64, params: WalkParams) -> bool {
    value < params.threshold && value < params.horizon as f64 - 1e-9
}

fn sort_entries(entries: &mut [(QueryId, f64)]) {
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(i: u32) -> QueryId {
        QueryId(i)
    }
    fn u(i: u32) -> UrlId {
        UrlId(i)
    }

    #[test]
    fn transition_proportional_to_clicks() {
        let g = BipartiteGraph::from_edges(2, 2, &[(q(0), u(0), 3.0), (q(0), u(1), 1.0), (q(1), u(0), 3.0)]).unwrap();
        let t = g.walk_transition(Node::Query(q(0))).unwrap();
        assert_eq!(t, vec![(Node::Url(u(0)), 0.75), (Node::Url(u(1)), 0.25)]);
        let t = g.walk_transition(Node::Url(u(0))).unwrap();
        assert_eq!(t, vec![(Node::Query(q(0)), 0.5), (Node::Query(q(1)), 0.5)]);
    }

    #[test]
    fn uniform_star_is_uniform() {
        let edges: Vec<_> = (0..5).map(|i| (q(i), u(0), 2.0)).collect();
        let g = BipartiteGraph::from_edges(5, 1, &edges).unwrap();
        let t = g.walk_transition(Node::Url(u(0))).unwrap();
        assert!(t.iter().all(|&(_, p)| (p - 0.2).abs() < 1e-15));
        assert!((t.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dangling_node_is_an_error() {
        let g = BipartiteGraph::from_edges(2, 1, &[(q(0), u(0), 1.0)]).unwrap();
        assert!(matches!(g.walk_transition(Node::Query(q(1))), Err(Error::DanglingNode(_))));
        assert!(matches!(g.hitting_times(q(1), WalkParams::default()), Err(Error::DanglingNode(_))));
        assert!(matches!(g.hitting_times(q(9), WalkParams::default()), Err(Error::UnknownQuery(9))));
    }

    #[test]
    fn chain_hitting_time_close_to_four() {
        let g = BipartiteGraph::from_edges(2, 1, &[(q(0), u(0), 1.0), (q(1), u(0), 1.0)]).unwrap();
        let params = WalkParams {
            horizon: 40,
            threshold: 100.0,
        };
        let table = g.hitting_times(q(0), params).unwrap();
        assert_eq!(table.entries.len(), 1);
        let (target, value) = table.entries[0];
        assert_eq!(target, q(1));
        // E[(tau - h)^+] = 4 * 2^(-h/2) for this chain.
        assert!((value - (4.0 - 4.0 * 0.5f64.powi(20))).abs() < 1e-12);
    }

    #[test]
    fn anchor_excluded_and_components_respected() {
        let g = BipartiteGraph::from_edges(
            4,
            2,
            &[(q(0), u(0), 1.0), (q(1), u(0), 1.0), (q(2), u(1), 1.0), (q(3), u(1), 1.0)],
        )
        .unwrap();
        let table = g
            .hitting_times(
                q(0),
                WalkParams {
                    horizon: 20,
                    threshold: 20.0,
                },
            )
            .unwrap();
        let ids: Vec<_> = table.entries.iter().map(|e| e.0).collect();
        assert_eq!(ids, vec![q(1)]);
    }

    #[test]
    fn all_pairs_matches_single_anchor() {
        let edges = [
            (q(0), u(0), 2.0),
            (q(0), u(1), 1.0),
            (q(1), u(0), 1.0),
            (q(2), u(1), 3.0),
            (q(2), u(2), 1.0),
            (q(3), u(2), 1.0),
        ];
        let g = BipartiteGraph::from_edges(4, 3, &edges).unwrap();
        let params = WalkParams {
            horizon: 12,
            threshold: 11.0,
        };
        let all = g.all_hitting_times(params);
        for a in 0..4 {
            let single = g.hitting_times(q(a), params).unwrap();
            assert_eq!(single.entries.len(), all[a as usize].entries.len());
            for (x, y) in single.entries.iter().zip(&all[a as usize].entries) {
                assert_eq!(x.0, y.0);
                assert!((x.1 - y.1).abs() < 1e-12);
            }
        }
    }
}
