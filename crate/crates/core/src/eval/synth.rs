//! Synthetic click logs with known specificity labels.
//!
//! Every intent is a group of queries that click one shared hub URL, so the
//! click graph alone makes each intent one cluster. The label lives in the
//! wording:
//!
//! - Lookup intents repeat one long phrase with a few short suffixes, so the
//!   mined patterns are near-duplicates of each other.
//! - Exploratory intents spread over several facets, each a distinct word
//!   pair, with the intent's head word on about half of the queries.
//!
//! Lookup intent `k` and exploratory intent `k` form a pair. All their
//! queries click a shared portal URL lightly, and a few queries on each side
//! share a private link URL with their counterpart, heavily enough that a
//! short random walk crosses over. Those links put opposite-label queries into
//! each other's related sets without merging the two clusters.
//!
//! Every query also gets a unique trailing word so that no two normalize to
//! the same text.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::querylog::SearchRecord;
use crate::seed;

/// Smallest related set the heuristic accepts.
const MIN_RELATED: usize = 40;

/// Click counts behind the URL structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrlProfile {
    /// Clicks from every query to its intent's hub.
    pub hub_clicks: u64,
    /// Clicks from every query of a paired intent to the pair's portal.
    pub portal_clicks: u64,
    /// Clicks from a linked query to its private link URL.
    pub link_clicks: u64,
    /// Linked queries per intent, never the intent's anchor.
    pub links_per_intent: usize,
}

impl Default for UrlProfile {
    fn default() -> Self {
        Self {
            hub_clicks: 10,
            portal_clicks: 1,
            link_clicks: 12,
            links_per_intent: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusConfig {
    pub n_lookup_intents: usize,
    pub n_exploratory_intents: usize,
    pub queries_per_intent: usize,
    pub facets_per_exploratory: usize,
    pub suffixes_per_lookup: usize,
    pub urls: UrlProfile,
    /// Mean number of queries per synthetic session.
    pub session_length: usize,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            n_lookup_intents: 5,
            n_exploratory_intents: 5,
            queries_per_intent: 60,
            facets_per_exploratory: 4,
            suffixes_per_lookup: 4,
            urls: UrlProfile::default(),
            session_length: 4,
        }
    }
}

impl SyntheticCorpusConfig {
    /// `n` intents of each kind, otherwise default.
    pub fn balanced(n: usize) -> Self {
        Self {
            n_lookup_intents: n,
            n_exploratory_intents: n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.facets_per_exploratory < 3 {
            return Err(Error::InvalidParameter(format!(
                "exploratory intents need at least 3 facets, got {}",
                self.facets_per_exploratory
            )));
        }
        if self.suffixes_per_lookup < 3 {
            return Err(Error::InvalidParameter(format!(
                "lookup intents need at least 3 suffixes, got {}",
                self.suffixes_per_lookup
            )));
        }
        if self.n_lookup_intents + self.n_exploratory_intents == 0 {
            return Err(Error::InvalidParameter("no intents requested".into()));
        }
        let u = &self.urls;
        if u.hub_clicks == 0 || u.portal_clicks == 0 || u.link_clicks == 0 || self.session_length == 0 {
            return Err(Error::InvalidParameter(format!("click counts and session length must be positive: {self:?}")));
        }
        let related = self.queries_per_intent.saturating_sub(1);
        if related < MIN_RELATED {
            return Err(Error::SyntheticTooSmall {
                found: related,
                required: MIN_RELATED,
            });
        }
        if u.links_per_intent >= self.queries_per_intent {
            return Err(Error::InvalidParameter(format!(
                "{} links do not fit in {} queries",
                u.links_per_intent, self.queries_per_intent
            )));
        }
        Ok(())
    }
}

/// One generated query with its intent and ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub text: String,
    pub label: Label,
    pub intent: usize,
    /// The first query of each intent, the one scored for recovery.
    pub anchor: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub records: Vec<SearchRecord>,
    pub queries: Vec<SyntheticQuery>,
}

impl SyntheticCorpus {
    pub fn anchors(&self) -> impl Iterator<Item = &SyntheticQuery> {
        self.queries.iter().filter(|q| q.anchor)
    }
}

struct Vocabulary {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Vocabulary {
    const CONSONANTS: &'static [u8] = b"bdfgklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";

    /// A fresh pronounceable word of `syllables` consonant-vowel pairs.
    fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::with_capacity(2 * syllables);
            for _ in 0..syllables {
                w.push(*Self::CONSONANTS.choose(&mut self.rng).expect("non-empty") as char);
                w.push(*Self::VOWELS.choose(&mut self.rng).expect("non-empty") as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// Generate the corpus. Identical config and seed give identical output.
pub fn generate_synthetic(config: &SyntheticCorpusConfig, seed_value: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut vocab = Vocabulary {
        rng: seed::rng(seed::derive(seed_value, "vocabulary")),
        used: HashSet::new(),
    };
    let n = config.queries_per_intent;
    let u = config.urls;
    let mut queries = Vec::new();
    let mut clicks: Vec<Vec<(String, u64)>> = Vec::new();

    let mut push = |text: String, label: Label, intent: usize, index: usize, urls: Vec<(String, u64)>| {
        queries.push(SyntheticQuery {
            text,
            label,
            intent,
            anchor: index == 0,
        });
        clicks.push(urls);
    };

    let pairs = config.n_lookup_intents.min(config.n_exploratory_intents);
    let links = |k: usize, i: usize| -> Vec<(String, u64)> {
        let mut urls = Vec::new();
        if k < pairs {
            urls.push((format!("https://portal.example/{k}"), u.portal_clicks));
            if (1..=u.links_per_intent).contains(&i) {
                urls.push((format!("https://link.example/{k}/{i}"), u.link_clicks));
            }
        }
        urls
    };

    for k in 0..config.n_lookup_intents {
        let core: Vec<String> = (0..4).map(|_| vocab.word(4)).collect();
        let suffixes: Vec<String> = (0..config.suffixes_per_lookup).map(|_| vocab.word(2)).collect();
        for i in 0..n {
            let text = if i == 0 {
                core.join(" ")
            } else {
                format!("{} {} {}", core.join(" "), suffixes[i % suffixes.len()], vocab.word(3))
            };
            let mut urls = vec![(format!("https://lookup.example/{k}"), u.hub_clicks)];
            urls.extend(links(k, i));
            push(text, Label::Lookup, k, i, urls);
        }
    }
    let offset = config.n_lookup_intents;
    for k in 0..config.n_exploratory_intents {
        let head = vocab.word(3);
        let facets: Vec<(String, String)> = (0..config.facets_per_exploratory)
            .map(|_| (vocab.word(3), vocab.word(3)))
            .collect();
        for i in 0..n {
            let text = if i == 0 {
                head.clone()
            } else {
                let (a, b) = &facets[i % facets.len()];
                let rare = vocab.word(3);
                if (i / facets.len()).is_multiple_of(2) {
                    format!("{head} {a} {b} {rare}")
                } else {
                    format!("{a} {b} {rare}")
                }
            };
            let mut urls = vec![(format!("https://explore.example/{k}"), u.hub_clicks)];
            urls.extend(links(k, i));
            push(text, Label::Exploratory, offset + k, i, urls);
        }
    }

    // Sessions: shuffle queries, cut into runs of 1..=2*session_length - 1.
    let mut rng = seed::rng(seed::derive(seed_value, "sessions"));
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(&mut rng);
    let mut session_of = vec![(0usize, 0u32); queries.len()];
    let mut cursor = 0;
    let mut session = 0;
    while cursor < order.len() {
        let len = rng.gen_range(1..2 * config.session_length).min(order.len() - cursor);
        for (pos, &q) in order[cursor..cursor + len].iter().enumerate() {
            session_of[q] = (session, pos as u32 + 1);
        }
        cursor += len;
        session += 1;
    }

    let mut records = Vec::new();
    for (i, (query, urls)) in queries.iter().zip(&clicks).enumerate() {
        let (s, pos) = session_of[i];
        for (url, c) in urls {
            records.push(SearchRecord::new(query.text.clone(), url.clone(), *c).with_session(format!("s{s}"), pos));
        }
    }
    Ok(SyntheticCorpus { records, queries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_counts() {
        let c = generate_synthetic(&SyntheticCorpusConfig::default(), 1).unwrap();
        assert_eq!(c.queries.len(), 600);
        assert_eq!(c.anchors().count(), 10);
        let texts: HashSet<&str> = c.queries.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(texts.len(), 600);
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SyntheticCorpusConfig::default();
        assert_eq!(generate_synthetic(&cfg, 4).unwrap(), generate_synthetic(&cfg, 4).unwrap());
        assert_ne!(generate_synthetic(&cfg, 4).unwrap(), generate_synthetic(&cfg, 5).unwrap());
    }

    #[test]
    fn small_intents_are_rejected() {
        let cfg = SyntheticCorpusConfig {
            queries_per_intent: 30,
            ..SyntheticCorpusConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg, 0),
            Err(Error::SyntheticTooSmall { found: 29, required: 40 })
        ));
    }

    #[test]
    fn exploratory_needs_three_facets() {
        let cfg = SyntheticCorpusConfig {
            facets_per_exploratory: 2,
            ..SyntheticCorpusConfig::default()
        };
        assert!(generate_synthetic(&cfg, 0).is_err());
    }
}
