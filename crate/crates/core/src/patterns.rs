//! Ordered word-pattern mining over a related-query set.
//!
//! Rules start as single frequent words. Sweeps over rule pairs merge a rule
//! into another when most of the queries matching one also match the other;
//! the merged rule orders its words by the most common first-occurrence order
//! among the shared queries. Sweeps repeat until the rule set stops changing,
//! then overlapping patterns are folded together and low-confidence ones
//! dropped.
//!
//! For a pattern `p` over the set `Q`:
//!
//! - `Q_p`: queries containing the words of `p` as an ordered subsequence
//! - `Q_p'`: queries containing all of the words in any order
//! - support `s = |Q_p| / |Q|`, confidence `c = |Q_p| / |Q_p'|`
//! - cumulative frequency `f`: summed frequency of the queries in `Q_p`
//! - weight `ln(1 + f) * s / (1 - c + eps)`

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    /// Minimum number of queries a keyword or pattern must occur in.
    /// `None` derives it from `delta` and the set size.
    pub k_min: Option<usize>,
    pub delta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Smallest related set mining accepts.
    pub min_queries: usize,
    /// Safety cap on merge sweeps.
    pub max_sweeps: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self {
            k_min: None,
            delta: 0.1,
            gamma: 0.8,
            epsilon: 0.1,
            min_queries: 40,
            max_sweeps: 64,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.delta && self.delta < self.gamma && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta < gamma <= 1, got delta={} gamma={}",
                self.delta, self.gamma
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    /// `max(2, ceil(delta * n))` unless overridden.
    pub fn k_min_for(&self, n: usize) -> usize {
        self.k_min
            .unwrap_or_else(|| ((self.delta * n as f64).ceil() as usize).max(2))
    }
}

/// A related query as seen by the miner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedQuery {
    pub words: Vec<String>,
    pub freq: u64,
}

impl MinedQuery {
    pub fn new(text: &str, freq: u64) -> Self {
        Self {
            words: text.split_whitespace().map(str::to_string).collect(),
            freq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub words: Vec<String>,
    /// Indices into the mined query list, ascending.
    pub q_p: Vec<usize>,
    pub q_pprime: Vec<usize>,
    pub support: f64,
    pub confidence: f64,
    pub cum_freq: u64,
    pub weight: f64,
}

impl Pattern {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Patterns sorted by weight, heaviest first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatternDictionary {
    pub patterns: Vec<Pattern>,
    pub k_min: usize,
}

impl PatternDictionary {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// `ln(1 + f) * s / (1 - c + eps)`.
pub fn pattern_weight(support: f64, confidence: f64, cum_freq: u64, epsilon: f64) -> f64 {
    (cum_freq as f64).ln_1p() * support / (1.0 - confidence + epsilon)
}

/// Words that occur in at least `k_min` distinct queries.
pub fn freq_keywords(queries: &[MinedQuery], k_min: usize) -> BTreeSet<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for q in queries {
        let distinct: HashSet<&str> = q.words.iter().map(String::as_str).collect();
        for w in distinct {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| c >= k_min)
        .map(|(w, _)| w.to_string())
        .collect()
}

/// Whether `pattern` appears in `words` as an ordered subsequence.
pub fn is_subsequence(pattern: &[String], words: &[String]) -> bool {
    let mut it = words.iter();
    pattern.iter().all(|p| it.any(|w| w == p))
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
    fn and_count(&self, other: &Bits) -> usize {
        self.0.iter().zip(&other.0).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &w)| (0..64).filter(move |b| w >> b & 1 == 1).map(move |b| i * 64 + b))
    }
}

#[derive(Clone)]
struct Rule {
    words: Vec<String>,
    matches: Bits,
    size: usize,
}

impl Rule {
    fn key(&self) -> Vec<String> {
        let mut k = self.words.clone();
        k.sort();
        k
    }
}

struct Miner<'a> {
    queries: &'a [MinedQuery],
    params: MiningParams,
    k_min: usize,
}

impl Miner<'_> {
    fn rule(&self, words: Vec<String>) -> Rule {
        let mut matches = Bits::new(self.queries.len());
        for (i, q) in self.queries.iter().enumerate() {
            if is_subsequence(&words, &q.words) {
                matches.set(i);
            }
        }
        let size = matches.count();
        Rule { words, matches, size }
    }

    /// Word order for the union of two rules: the most frequent first-occurrence
    /// order among queries matching both, ties to the lexicographically smaller.
    fn merge(&self, a: &Rule, b: &Rule) -> Option<Rule> {
        let union: BTreeSet<&String> = a.words.iter().chain(&b.words).collect();
        let mut orders: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for i in a.matches.iter().filter(|&i| b.matches.0[i / 64] >> (i % 64) & 1 == 1) {
            let mut seen = HashSet::new();
            let order: Vec<String> = self.queries[i]
                .words
                .iter()
                .filter(|w| union.contains(w) && seen.insert(w.as_str()))
                .cloned()
                .collect();
            *orders.entry(order).or_default() += 1;
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let mut best: Option<(&Vec<String>, usize)> = None;
        for (order, &n) in &orders {
            if best.is_none_or(|(_, m)| n > m) {
                best = Some((order, n));
            }
        }
        let (order, _) = best?;
        let merged = self.rule(order.clone());
        (merged.size >= self.k_min).then_some(merged)
    }

    fn conditional(a: &Rule, b: &Rule) -> f64 {
        // P(a | b)
        if b.size == 0 {
            0.0
        } else {
            a.matches.and_count(&b.matches) as f64 / b.size as f64
        }
    }

    fn sweep_to_fixed_point(&self, mut rules: Vec<Rule>) -> Vec<Rule> {
        let mut retired: HashSet<Vec<String>> = HashSet::new();
        for _ in 0..self.params.max_sweeps {
            rules.sort_by(|a, b| a.words.cmp(&b.words));
            let mut changed = vec![false; rules.len()];
            let mut produced: Vec<Rule> = Vec::new();
            for i in 0..rules.len() {
                for j in i + 1..rules.len() {
                    let (ri, rj) = (&rules[i], &rules[j]);
                    let p_ij = Self::conditional(ri, rj);
                    let p_ji = Self::conditional(rj, ri);
                    let fire = p_ij > self.params.gamma || (p_ij > self.params.delta && p_ji > self.params.gamma);
                    if !fire {
                        continue;
                    }
                    if let Some(m) = self.merge(ri, rj) {
                        changed[i] = true;
                        changed[j] = true;
                        produced.push(m);
                    }
                }
            }
            if produced.is_empty() {
                break;
            }
            let mut next: Vec<Rule> = Vec::new();
            for (r, c) in rules.iter().zip(&changed) {
                if *c {
                    retired.insert(r.key());
                } else {
                    next.push(r.clone());
                }
            }
            for m in produced {
                let k = m.key();
                if retired.contains(&k) && !rules.iter().any(|r| r.key() == k) {
                    continue;
                }
                retired.remove(&k);
                next.push(m);
            }
            let next = dedup_by_word_set(next);
            let before: BTreeSet<Vec<String>> = rules.iter().map(|r| r.words.clone()).collect();
            let after: BTreeSet<Vec<String>> = next.iter().map(|r| r.words.clone()).collect();
            rules = next;
            if before == after {
                break;
            }
        }
        rules
    }

    fn confidence(&self, rule: &Rule) -> (f64, Vec<usize>) {
        let words: HashSet<&String> = rule.words.iter().collect();
        let any_order: Vec<usize> = self
            .queries
            .iter()
            .enumerate()
            .filter(|(_, q)| {
                let have: HashSet<&String> = q.words.iter().collect();
                words.iter().all(|w| have.contains(w))
            })
            .map(|(i, _)| i)
            .collect();
        let c = if any_order.is_empty() {
            0.0
        } else {
            rule.size as f64 / any_order.len() as f64
        };
        (c, any_order)
    }

    fn valid(&self, rule: &Rule) -> bool {
        rule.size >= self.k_min && self.confidence(rule).0 > 0.5
    }

    /// Fold together patterns whose query sets overlap by at least `gamma`
    /// of the smaller one. When the fold is not a valid pattern the smaller
    /// one is dropped.
    fn fold_overlaps(&self, mut rules: Vec<Rule>) -> Vec<Rule> {
        loop {
            rules.sort_by(|a, b| a.words.cmp(&b.words));
            let mut hit = None;
            'outer: for i in 0..rules.len() {
                for j in i + 1..rules.len() {
                    let inter = rules[i].matches.and_count(&rules[j].matches) as f64;
                    let min = rules[i].size.min(rules[j].size) as f64;
                    if min > 0.0 && inter >= self.params.gamma * min {
                        hit = Some((i, j));
                        break 'outer;
                    }
                }
            }
            let Some((i, j)) = hit else {
                return rules;
            };
            let merged = self.merge(&rules[i], &rules[j]).filter(|m| self.valid(m));
            let smaller = if (rules[j].size, &rules[i].words) < (rules[i].size, &rules[j].words) {
                j
            } else {
                i
            };
            match merged {
                Some(m) => {
                    let (hi, lo) = (i.max(j), i.min(j));
                    rules.remove(hi);
                    rules.remove(lo);
                    rules.push(m);
                    rules = dedup_by_word_set(rules);
                }
                None => {
                    rules.remove(smaller);
                }
            }
        }
    }

    fn finish(&self, rules: Vec<Rule>) -> Vec<Pattern> {
        let n = self.queries.len() as f64;
        let mut out: Vec<Pattern> = rules
            .into_iter()
            .filter(|r| r.size >= self.k_min)
            .filter_map(|r| {
                let (c, q_pprime) = self.confidence(&r);
                if c <= 0.5 {
                    return None;
                }
                let q_p: Vec<usize> = r.matches.iter().collect();
                let cum_freq: u64 = q_p.iter().map(|&i| self.queries[i].freq).sum();
                let support = r.size as f64 / n;
                Some(Pattern {
                    weight: pattern_weight(support, c, cum_freq, self.params.epsilon),
                    words: r.words,
                    q_p,
                    q_pprime,
                    support,
                    confidence: c,
                    cum_freq,
                })
            })
            .collect();
        out.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.words.cmp(&b.words)));
        out
    }
}

/// Keep one word order per word set: the one matching more queries, then the
/// lexicographically smaller.
fn dedup_by_word_set(rules: Vec<Rule>) -> Vec<Rule> {
    let mut best: BTreeMap<Vec<String>, Rule> = BTreeMap::new();
    for r in rules {
        let k = r.key();
        match best.get(&k) {
            Some(old) if (old.size, std::cmp::Reverse(&old.words)) >= (r.size, std::cmp::Reverse(&r.words)) => {}
            _ => {
                best.insert(k, r);
            }
        }
    }
    best.into_values().collect()
}

/// Mine the pattern dictionary of a related-query set.
pub fn mine_patterns(queries: &[MinedQuery], params: &MiningParams) -> Result<PatternDictionary> {
    params.validate()?;
    if queries.len() < params.min_queries {
        return Err(Error::TooFewQueries {
            found: queries.len(),
            required: params.min_queries,
        });
    }
    let k_min = params.k_min_for(queries.len());
    let miner = Miner {
        queries,
        params: *params,
        k_min,
    };
    let keywords = freq_keywords(queries, k_min);
    let rules: Vec<Rule> = keywords.into_iter().map(|w| miner.rule(vec![w])).collect();
    let rules = miner.sweep_to_fixed_point(rules);
    let rules = miner.fold_overlaps(rules);
    Ok(PatternDictionary {
        patterns: miner.finish(rules),
        k_min,
    })
}

#[derive(Serialize, Deserialize)]
struct PatternLine {
    words: String,
    support: f64,
    confidence: f64,
    cum_freq: u64,
    weight: f64,
}

/// One JSON object per anchor: `{anchor, patterns: [...]}`.
pub fn write_jsonl_line<W: Write>(out: &mut W, anchor: &str, dict: &PatternDictionary) -> Result<()> {
    let patterns: Vec<PatternLine> = dict
        .patterns
        .iter()
        .map(|p| PatternLine {
            words: p.text(),
            support: p.support,
            confidence: p.confidence,
            cum_freq: p.cum_freq,
            weight: p.weight,
        })
        .collect();
    serde_json::to_writer(&mut *out, &DictLine { anchor: anchor.to_string(), patterns })?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DictLine {
    anchor: String,
    patterns: Vec<PatternLine>,
}

/// Read dictionaries written by [`write_jsonl_line`]. Query memberships are
/// not stored, so `q_p` and `q_pprime` come back empty and `k_min` is 0.
pub fn read_jsonl<R: BufRead>(input: R, path: &str) -> Result<Vec<(String, PatternDictionary)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DictLine = serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e.to_string()))?;
        let patterns = parsed
            .patterns
            .into_iter()
            .map(|p| Pattern {
                words: p.words.split_whitespace().map(str::to_string).collect(),
                q_p: Vec::new(),
                q_pprime: Vec::new(),
                support: p.support,
                confidence: p.confidence,
                cum_freq: p.cum_freq,
                weight: p.weight,
            })
            .collect();
        out.push((parsed.anchor, PatternDictionary { patterns, k_min: 0 }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qs(texts: &[&str]) -> Vec<MinedQuery> {
        texts.iter().map(|t| MinedQuery::new(t, 1)).collect()
    }

    #[test]
    fn keyword_threshold() {
        let mut texts = vec!["virat odi"; 4];
        texts.extend(["a b", "c d", "e f", "g h", "lonely x", "y z"]);
        let queries = qs(&texts);
        let params = MiningParams::default();
        let k = params.k_min_for(queries.len());
        assert_eq!(k, 2);
        let kw = freq_keywords(&queries, k);
        assert!(kw.contains("odi"));
        assert!(!kw.contains("lonely"));
    }

    #[test]
    fn weight_formula() {
        let w = pattern_weight(0.4, 0.8, 40, 0.1);
        assert!((w - 41f64.ln() * 0.4 / 0.3).abs() < 1e-12);
        assert!((w - 4.9515).abs() < 1e-4);
        assert_eq!(pattern_weight(1.0, 1.0, 0, 0.1), 0.0);
        assert!(pattern_weight(0.4, 0.8, 80, 0.1) > w);
    }

    #[test]
    fn identical_queries_give_one_full_pattern() {
        let queries = qs(&["how to bake bread"; 40]);
        let dict = mine_patterns(&queries, &MiningParams::default()).unwrap();
        assert_eq!(dict.len(), 1);
        let p = &dict.patterns[0];
        assert_eq!(p.text(), "how to bake bread");
        assert_eq!((p.support, p.confidence), (1.0, 1.0));
    }

    #[test]
    fn order_is_learned_once() {
        let mut texts: Vec<String> = (0..30).map(|i| format!("virat odi stats{i}")).collect();
        texts.extend((0..10).map(|i| format!("kohli{i} runs{i}")));
        let queries: Vec<_> = texts.iter().map(|t| MinedQuery::new(t, 2)).collect();
        let dict = mine_patterns(&queries, &MiningParams::default()).unwrap();
        let texts: Vec<String> = dict.patterns.iter().map(Pattern::text).collect();
        assert_eq!(texts, vec!["virat odi"]);
        assert_eq!(dict.patterns[0].cum_freq, 60);
    }

    #[test]
    fn too_few_queries() {
        let queries = qs(&["a b"; 10]);
        assert!(matches!(
            mine_patterns(&queries, &MiningParams::default()),
            Err(Error::TooFewQueries { found: 10, required: 40 })
        ));
    }

    #[test]
    fn nothing_frequent_gives_empty_dictionary() {
        let texts: Vec<String> = (0..40).map(|i| format!("w{i} v{i}")).collect();
        let queries: Vec<_> = texts.iter().map(|t| MinedQuery::new(t, 1)).collect();
        assert!(mine_patterns(&queries, &MiningParams::default()).unwrap().is_empty());
    }

    #[test]
    fn confidence_counts_reordered_queries() {
        // 30 in order, 10 reversed: c = 30 / 40.
        let mut texts = vec!["red apple"; 30];
        texts.extend(vec!["apple red"; 10]);
        let queries = qs(&texts);
        let dict = mine_patterns(&queries, &MiningParams::default()).unwrap();
        assert_eq!(dict.len(), 1);
        let p = &dict.patterns[0];
        assert_eq!(p.text(), "red apple");
        assert!((p.confidence - 0.75).abs() < 1e-12);
        assert_eq!(p.q_p.len(), 30);
        assert_eq!(p.q_pprime.len(), 40);
    }
}
