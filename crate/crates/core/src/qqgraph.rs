//! Query-query graph induced from shared clicked URLs, density-driven
//! clustering, and max-product relation scores inside clusters.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bipartite::BipartiteGraph;
use crate::error::{Error, Result};
use crate::querylog::{Corpus, QueryId};

/// Undirected weighted graph over queries, weights in (0, 1].
#[derive(Debug, Clone, Default)]
pub struct QQGraph {
    adj: HashMap<QueryId, Vec<(QueryId, f64)>>,
    num_edges: usize,
}

impl QQGraph {
    /// Build from an explicit undirected edge list. Duplicate pairs keep the
    /// last weight.
    pub fn from_edges(edges: &[(QueryId, QueryId, f64)]) -> Result<Self> {
        let mut map: HashMap<(QueryId, QueryId), f64> = HashMap::new();
        for &(a, b, w) in edges {
            if a == b {
                return Err(Error::InvalidParameter(format!("self-loop on query {}", a.0)));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::InvalidParameter(format!("edge weight {w} outside (0, 1]")));
            }
            map.insert((a.min(b), a.max(b)), w);
        }
        let mut sorted: Vec<_> = map.into_iter().collect();
        sorted.sort_by_key(|&(k, _)| k);
        let mut adj: HashMap<QueryId, Vec<(QueryId, f64)>> = HashMap::new();
        for &((a, b), w) in &sorted {
            adj.entry(a).or_default().push((b, w));
            adj.entry(b).or_default().push((a, w));
        }
        for list in adj.values_mut() {
            list.sort_by_key(|e| e.0);
        }
        Ok(Self {
            adj,
            num_edges: sorted.len(),
        })
    }

    /// Sorted node ids.
    pub fn nodes(&self) -> Vec<QueryId> {
        let mut v: Vec<_> = self.adj.keys().copied().collect();
        v.sort();
        v
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn neighbors(&self, q: QueryId) -> &[(QueryId, f64)] {
        self.adj.get(&q).map_or(&[], Vec::as_slice)
    }

    pub fn weight(&self, a: QueryId, b: QueryId) -> Option<f64> {
        let list = self.adj.get(&a)?;
        list.binary_search_by_key(&b, |e| e.0).ok().map(|i| list[i].1)
    }

    /// Every edge once, `a < b`, sorted.
    pub fn edges(&self) -> Vec<(QueryId, QueryId, f64)> {
        let mut out = Vec::with_capacity(self.num_edges);
        for (&a, list) in &self.adj {
            out.extend(list.iter().filter(|e| a < e.0).map(|&(b, w)| (a, b, w)));
        }
        out.sort_by_key(|x| (x.0, x.1));
        out
    }

    fn induced_edges(&self, members: &[QueryId]) -> Vec<(QueryId, QueryId, f64)> {
        let set: HashSet<QueryId> = members.iter().copied().collect();
        let mut out = Vec::new();
        for &a in members {
            for &(b, w) in self.neighbors(a) {
                if a < b && set.contains(&b) {
                    out.push((a, b, w));
                }
            }
        }
        out
    }
}

/// Weighted Jaccard of two sparse click vectors sorted by key.
pub fn weighted_jaccard<K: Ord + Copy>(x: &[(K, f64)], y: &[(K, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut num, mut den) = (0.0, 0.0);
    while i < x.len() || j < y.len() {
        let ord = match (x.get(i), y.get(j)) {
            (Some(a), Some(b)) => a.0.cmp(&b.0),
            (Some(_), None) => Ordering::Less,
            _ => Ordering::Greater,
        };
        match ord {
            Ordering::Less => {
                den += x[i].1;
                i += 1;
            }
            Ordering::Greater => {
                den += y[j].1;
                j += 1;
            }
            Ordering::Equal => {
                num += x[i].1.min(y[j].1);
                den += x[i].1.max(y[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Edge between every pair of queries sharing a URL, weighted by the
/// weighted Jaccard of their click vectors.
pub fn induce_qq(graph: &BipartiteGraph) -> QQGraph {
    let nq = graph.num_queries();
    let per_query: Vec<Vec<(QueryId, QueryId, f64)>> = (0..nq as u32)
        .into_par_iter()
        .map(|a| {
            let a = QueryId(a);
            let mut partners = BTreeSet::new();
            for &(u, _) in graph.urls_of(a) {
                partners.extend(graph.queries_of(u).iter().map(|e| e.0).filter(|&b| b > a));
            }
            partners
                .into_iter()
                .map(|b| (a, b, weighted_jaccard(graph.urls_of(a), graph.urls_of(b))))
                .collect()
        })
        .collect();
    let edges: Vec<_> = per_query.into_iter().flatten().collect();
    QQGraph::from_edges(&edges).expect("jaccard weights lie in (0, 1]")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Sorted ascending.
    pub members: Vec<QueryId>,
    pub goodness: f64,
}

/// Weighted density: edge weight mass over the number of possible pairs.
/// A single node has density 1.
pub fn goodness(graph: &QQGraph, members: &[QueryId]) -> f64 {
    let n = members.len();
    if n < 2 {
        return 1.0;
    }
    let mass: f64 = graph.induced_edges(members).iter().map(|e| e.2).sum();
    mass / (n * (n - 1) / 2) as f64
}

/// Recursive splitting until each cluster reaches `target` goodness.
///
/// A cluster below target loses its edges lighter than the median weight (or,
/// when none are lighter, all edges at the minimum weight) until it falls
/// apart; each resulting component is then handled on its own induced edges.
pub fn partition(graph: &QQGraph, target: f64) -> Result<Vec<Cluster>> {
    if !(target > 0.0) {
        return Err(Error::InvalidParameter(format!("goodness target {target} must be positive")));
    }
    let nodes = graph.nodes();
    let all = graph.induced_edges(&nodes);
    let mut out = Vec::new();
    let mut stack = components(&nodes, &all);
    while let Some(members) = stack.pop() {
        let g = goodness(graph, &members);
        if members.len() == 1 || g >= target {
            out.push(Cluster { members, goodness: g });
            continue;
        }
        let mut edges = graph.induced_edges(&members);
        loop {
            prune(&mut edges);
            let parts = components(&members, &edges);
            if parts.len() > 1 {
                stack.extend(parts);
                break;
            }
        }
    }
    out.sort_by(|a, b| a.members[0].cmp(&b.members[0]));
    Ok(out)
}

fn prune(edges: &mut Vec<(QueryId, QueryId, f64)>) {
    let mut weights: Vec<f64> = edges.iter().map(|e| e.2).collect();
    weights.sort_by(f64::total_cmp);
    let n = weights.len();
    let median = if n % 2 == 1 {
        weights[n / 2]
    } else {
        0.5 * (weights[n / 2 - 1] + weights[n / 2])
    };
    let before = edges.len();
    edges.retain(|e| e.2 >= median);
    if edges.len() == before {
        let min = weights[0];
        edges.retain(|e| e.2 > min);
    }
}

fn components(members: &[QueryId], edges: &[(QueryId, QueryId, f64)]) -> Vec<Vec<QueryId>> {
    let index: HashMap<QueryId, usize> = members.iter().enumerate().map(|(i, &q)| (q, i)).collect();
    let mut parent: Vec<usize> = (0..members.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b, _) in edges {
        let (ra, rb) = (find(&mut parent, index[&a]), find(&mut parent, index[&b]));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: HashMap<usize, Vec<QueryId>> = HashMap::new();
    for (i, &q) in members.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(q);
    }
    let mut out: Vec<Vec<QueryId>> = groups.into_values().collect();
    for g in &mut out {
        g.sort();
    }
    out.sort_by(|a, b| a[0].cmp(&b[0]));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub a: QueryId,
    pub b: QueryId,
    pub value: f64,
}

#[derive(PartialEq)]
struct Frontier(f64, QueryId);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Min-heap on cost, ties by id.
impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Best path products from `source` to every other member of `cluster`,
/// via Dijkstra on `-ln w`. Unreachable members are omitted.
pub fn relation_from(graph: &QQGraph, cluster: &[QueryId], source: QueryId) -> Vec<(QueryId, f64)> {
    let inside: HashSet<QueryId> = cluster.iter().copied().collect();
    let mut dist: HashMap<QueryId, f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(source, 0.0);
    heap.push(Frontier(0.0, source));
    let mut done = HashSet::new();
    while let Some(Frontier(d, v)) = heap.pop() {
        if !done.insert(v) {
            continue;
        }
        for &(w, weight) in graph.neighbors(v) {
            if !inside.contains(&w) || done.contains(&w) {
                continue;
            }
            let nd = d - weight.ln();
            if dist.get(&w).is_none_or(|&old| nd < old) {
                dist.insert(w, nd);
                heap.push(Frontier(nd, w));
            }
        }
    }
    let mut out: Vec<(QueryId, f64)> = dist
        .into_iter()
        .filter(|&(q, _)| q != source)
        .map(|(q, d)| (q, (-d).exp()))
        .collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    out
}

/// All member pairs `a < b` whose max-product relation score reaches `threshold`.
pub fn relation_scores(graph: &QQGraph, cluster: &Cluster, threshold: f64) -> Vec<RelationScore> {
    let mut out: Vec<RelationScore> = cluster
        .members
        .par_iter()
        .flat_map_iter(|&a| {
            relation_from(graph, &cluster.members, a)
                .into_iter()
                .filter(move |&(b, r)| a < b && r >= threshold)
                .map(move |(b, value)| RelationScore { a, b, value })
        })
        .collect();
    out.sort_by_key(|x| (x.a, x.b));
    out
}

/// Clustering parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub goodness: f64,
    pub relation_threshold: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            goodness: 0.6,
            relation_threshold: 0.3,
        }
    }
}

/// For every clustered query, its related queries by relation score
/// (descending, ties by id), restricted to scores at or above the threshold.
pub fn relation_lists(graph: &QQGraph, clusters: &[Cluster], threshold: f64) -> HashMap<QueryId, Vec<(QueryId, f64)>> {
    clusters
        .par_iter()
        .filter(|c| c.members.len() > 1)
        .flat_map_iter(|c| {
            c.members.iter().map(move |&a| {
                let list: Vec<_> = relation_from(graph, &c.members, a)
                    .into_iter()
                    .filter(|&(_, r)| r >= threshold)
                    .collect();
                (a, list)
            })
        })
        .collect()
}

pub fn write_edges<W: Write>(out: &mut W, graph: &QQGraph, corpus: &Corpus) -> Result<()> {
    for (a, b, w) in graph.edges() {
        writeln!(out, "{}\t{}\t{}", corpus.query_text(a), corpus.query_text(b), w)?;
    }
    Ok(())
}

pub fn write_clusters<W: Write>(out: &mut W, clusters: &[Cluster], corpus: &Corpus) -> Result<()> {
    for (i, c) in clusters.iter().enumerate() {
        for &q in &c.members {
            writeln!(out, "{}\t{}", i, corpus.query_text(q))?;
        }
    }
    Ok(())
}

pub fn write_relations<W: Write>(out: &mut W, scores: &[RelationScore], corpus: &Corpus) -> Result<()> {
    for s in scores {
        writeln!(out, "{}\t{}\t{}", corpus.query_text(s.a), corpus.query_text(s.b), s.value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querylog::UrlId;

    fn q(i: u32) -> QueryId {
        QueryId(i)
    }

    fn clique(ids: &[u32], w: f64) -> Vec<(QueryId, QueryId, f64)> {
        let mut out = Vec::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                out.push((q(a), q(b), w));
            }
        }
        out
    }

    #[test]
    fn jaccard_examples() {
        let g = BipartiteGraph::from_edges(
            4,
            3,
            &[
                (q(0), UrlId(0), 2.0),
                (q(0), UrlId(1), 2.0),
                (q(1), UrlId(0), 2.0),
                (q(1), UrlId(2), 2.0),
                (q(2), UrlId(0), 2.0),
                (q(2), UrlId(1), 2.0),
            ],
        )
        .unwrap();
        let qq = induce_qq(&g);
        assert!((qq.weight(q(0), q(1)).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(qq.weight(q(0), q(2)), Some(1.0));
        assert_eq!(qq.weight(q(3), q(0)), None);
    }

    #[test]
    fn disjoint_urls_give_no_edge() {
        let g = BipartiteGraph::from_edges(2, 2, &[(q(0), UrlId(0), 1.0), (q(1), UrlId(1), 1.0)]).unwrap();
        assert_eq!(induce_qq(&g).num_edges(), 0);
    }

    #[test]
    fn complete_graph_is_one_cluster() {
        let g = QQGraph::from_edges(&clique(&[0, 1, 2, 3, 4], 1.0)).unwrap();
        let clusters = partition(&g, 0.5).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].goodness, 1.0);
    }

    #[test]
    fn bridged_cliques_split() {
        let mut edges = clique(&[0, 1, 2, 3], 1.0);
        edges.extend(clique(&[4, 5, 6, 7], 1.0));
        edges.push((q(3), q(4), 0.05));
        let g = QQGraph::from_edges(&edges).unwrap();
        let all: Vec<_> = (0..8).map(q).collect();
        assert!((goodness(&g, &all) - 12.05 / 28.0).abs() < 1e-12);
        let clusters = partition(&g, 0.8).unwrap();
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].members, vec![q(0), q(1), q(2), q(3)]);
        assert_eq!(clusters[1].members, vec![q(4), q(5), q(6), q(7)]);
        assert!(clusters.iter().all(|c| c.goodness == 1.0));
    }

    #[test]
    fn empty_graph_partitions_to_nothing() {
        assert!(partition(&QQGraph::default(), 0.6).unwrap().is_empty());
        assert!(partition(&QQGraph::default(), 0.0).is_err());
    }

    #[test]
    fn uniform_sparse_graph_falls_to_singletons() {
        // A path has density 2/n and uniform weights; pruning must still end.
        let edges: Vec<_> = (0..5).map(|i| (q(i), q(i + 1), 0.5)).collect();
        let g = QQGraph::from_edges(&edges).unwrap();
        let clusters = partition(&g, 0.9).unwrap();
        assert_eq!(clusters.len(), 6);
    }

    #[test]
    fn triangle_relation_uses_two_hop_path() {
        let g = QQGraph::from_edges(&[(q(0), q(1), 0.5), (q(1), q(2), 0.5), (q(0), q(2), 0.2)]).unwrap();
        let c = Cluster {
            members: vec![q(0), q(1), q(2)],
            goodness: 0.4,
        };
        let scores = relation_scores(&g, &c, 0.0);
        let ac = scores.iter().find(|s| s.a == q(0) && s.b == q(2)).unwrap();
        assert!((ac.value - 0.25).abs() < 1e-15);
        let single = QQGraph::from_edges(&[(q(0), q(1), 0.7)]).unwrap();
        let c = Cluster {
            members: vec![q(0), q(1)],
            goodness: 0.7,
        };
        assert!((relation_scores(&single, &c, 0.3)[0].value - 0.7).abs() < 1e-15);
        assert!(relation_scores(&single, &c, 0.8).is_empty());
    }
}
