//! Specificity heuristic over a mined pattern dictionary.
//!
//! Patterns become weighted nodes, joined when their embeddings are close.
//! The k-core of the largest connected component is the cohesive part of the
//! graph; its share of total node weight `w_k` decides the label. A query whose
//! patterns all say the same thing has one dense cluster (high `w_k`), one
//! whose patterns scatter over unrelated facets has little or no core.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::label::LabelKind;
use crate::patterns::PatternDictionary;
use crate::querylog::QueryId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    pub k_core: usize,
    pub t_high: f64,
    pub t_low: f64,
    pub similarity: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            k_core: 2,
            t_high: 0.9,
            t_low: 0.5,
            similarity: 0.8,
        }
    }
}

impl HeuristicParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_low && self.t_low < self.t_high && self.t_high <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= t_low < t_high <= 1, got {} and {}",
                self.t_low, self.t_high
            )));
        }
        if self.k_core == 0 {
            return Err(Error::InvalidParameter("k_core must be at least 1".into()));
        }
        Ok(())
    }
}

/// Simple undirected node-weighted graph. Node ids are indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatternGraph {
    pub weights: Vec<f64>,
    adj: Vec<Vec<usize>>,
}

impl PatternGraph {
    pub fn new(weights: Vec<f64>, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); weights.len()];
        for &(a, b) in edges {
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Self { weights, adj }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Most nodes; ties to the larger weight sum, then the lowest node id.
    pub fn largest_component(&self) -> Vec<usize> {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for comp in self.components() {
            let w: f64 = comp.iter().map(|&v| self.weights[v]).sum();
            let better = match &best {
                None => true,
                Some((b, bw)) => comp.len() > b.len() || (comp.len() == b.len() && w > *bw),
            };
            if better {
                best = Some((comp, w));
            }
        }
        best.map(|b| b.0).unwrap_or_default()
    }

    /// Maximal subset of `within` whose induced subgraph has minimum degree
    /// `k`, found by repeatedly peeling nodes of lower degree. Sorted.
    pub fn k_core(&self, within: &[usize], k: usize) -> Vec<usize> {
        let mut alive = vec![false; self.len()];
        within.iter().for_each(|&v| alive[v] = true);
        let mut degree: Vec<usize> = (0..self.len())
            .map(|v| if alive[v] { self.adj[v].iter().filter(|&&w| alive[w]).count() } else { 0 })
            .collect();
        let mut queue: VecDeque<usize> = within.iter().copied().filter(|&v| degree[v] < k).collect();
        while let Some(v) = queue.pop_front() {
            if !alive[v] {
                continue;
            }
            alive[v] = false;
            for &w in &self.adj[v] {
                if alive[w] {
                    degree[w] -= 1;
                    if degree[w] < k {
                        queue.push_back(w);
                    }
                }
            }
        }
        let mut out: Vec<usize> = within.iter().copied().filter(|&v| alive[v]).collect();
        out.sort_unstable();
        out
    }
}

/// Node per pattern weighted by its pattern weight, edge when the cosine of
/// the pattern embeddings reaches `similarity`.
pub fn build_pattern_graph(
    dict: &PatternDictionary,
    provider: &dyn EmbeddingProvider,
    similarity: f64,
) -> Result<PatternGraph> {
    let vectors: Vec<Vec<f64>> = dict
        .patterns
        .iter()
        .map(|p| {
            let text = p.text();
            let v = provider.embed(&text)?;
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::DegenerateEmbedding(text));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut edges = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            if cosine(&vectors[i], &vectors[j]) >= similarity {
                edges.push((i, j));
            }
        }
    }
    Ok(PatternGraph::new(dict.patterns.iter().map(|p| p.weight).collect(), &edges))
}

/// Core weight share: node weight inside `core` over the weight of the whole graph.
pub fn density(graph: &PatternGraph, core: &[usize]) -> f64 {
    let total = graph.total_weight();
    if total <= 0.0 {
        return 0.0;
    }
    (core.iter().fold(0.0, |s, &v| s + graph.weights[v]) / total).clamp(0.0, 1.0)
}

pub fn label(w_k: f64, params: &HeuristicParams) -> LabelKind {
    if w_k >= params.t_high {
        LabelKind::Lookup
    } else if w_k <= params.t_low {
        LabelKind::Exploratory
    } else {
        LabelKind::Ambiguous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityLabel {
    pub anchor: QueryId,
    pub kind: LabelKind,
    pub density: f64,
    pub n_patterns: usize,
    /// Set when the decision rests on a single pattern.
    pub degenerate: bool,
}

/// Full heuristic for one anchor. `None` when the dictionary is empty.
pub fn classify(
    anchor: QueryId,
    dict: &PatternDictionary,
    provider: &dyn EmbeddingProvider,
    params: &HeuristicParams,
) -> Result<Option<SpecificityLabel>> {
    if dict.is_empty() {
        return Ok(None);
    }
    let graph = build_pattern_graph(dict, provider, params.similarity)?;
    let largest = graph.largest_component();
    let core = graph.k_core(&largest, params.k_core);
    let w_k = density(&graph, &core);
    Ok(Some(SpecificityLabel {
        anchor,
        kind: label(w_k, params),
        density: w_k,
        n_patterns: dict.len(),
        degenerate: dict.len() == 1,
    }))
}

/// `query \t label \t w_k \t n_patterns`.
pub fn write_tsv<W: Write>(out: &mut W, rows: &[(String, SpecificityLabel)]) -> Result<()> {
    for (query, l) in rows {
        writeln!(out, "{}\t{}\t{:.6}\t{}", query, l.kind, l.density, l.n_patterns)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_is_its_own_two_core() {
        let g = PatternGraph::new(vec![1.0; 3], &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(g.k_core(&[0, 1, 2], 2), vec![0, 1, 2]);
        assert_eq!(density(&g, &[0, 1, 2]), 1.0);
    }

    #[test]
    fn path_has_empty_two_core() {
        let g = PatternGraph::new(vec![1.0; 3], &[(0, 1), (1, 2)]);
        assert!(g.k_core(&[0, 1, 2], 2).is_empty());
        assert_eq!(density(&g, &[]), 0.0);
    }

    #[test]
    fn density_of_partial_core() {
        let g = PatternGraph::new(vec![5.0, 3.0, 2.0], &[]);
        assert!((density(&g, &[0, 1]) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn thresholds() {
        let p = HeuristicParams::default();
        assert_eq!(label(1.0, &p), LabelKind::Lookup);
        assert_eq!(label(0.9, &p), LabelKind::Lookup);
        assert_eq!(label(0.7, &p), LabelKind::Ambiguous);
        assert_eq!(label(0.5, &p), LabelKind::Exploratory);
        assert_eq!(label(0.0, &p), LabelKind::Exploratory);
    }

    #[test]
    fn largest_component_tie_breaks_on_weight() {
        let g = PatternGraph::new(vec![1.0, 1.0, 2.0, 2.0], &[(0, 1), (2, 3)]);
        assert_eq!(g.largest_component(), vec![2, 3]);
        let g = PatternGraph::new(vec![1.0, 1.0, 1.0, 1.0], &[(0, 1), (2, 3)]);
        assert_eq!(g.largest_component(), vec![0, 1]);
    }

    #[test]
    fn core_ignores_nodes_outside_subset() {
        // Square with a chord; restricting to three nodes leaves a triangle.
        let g = PatternGraph::new(vec![1.0; 4], &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
        assert_eq!(g.k_core(&[0, 1, 2], 2), vec![0, 1, 2]);
        assert_eq!(g.k_core(&[0, 1, 2, 3], 3), Vec::<usize>::new());
    }
}
