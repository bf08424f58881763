//! Training triplets from heuristic labels and related-query sets.
//!
//! For each labeled anchor, related queries with the same label are
//! positives and related queries with the other label are negatives. A pair
//! is contradictory when the negative is nearly identical in embedding space
//! to the anchor or to the positive; such triplets are dropped before
//! sampling.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::querylog::{Corpus, QueryId};
use crate::related::RelatedQuerySet;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub anchor_label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletParams {
    pub max_per_anchor: usize,
    pub contradiction: f64,
    pub seed: u64,
}

impl Default for TripletParams {
    fn default() -> Self {
        Self {
            max_per_anchor: 8,
            contradiction: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletReport {
    pub triplets: Vec<Triplet>,
    /// Labeled anchors whose related set had no opposite-label query.
    pub no_negative: usize,
    /// Labeled anchors whose related set had no same-label query.
    pub no_positive: usize,
    /// Candidate (positive, negative) pairs removed as contradictory.
    pub contradictory: usize,
}

/// Whether a triplet's negative is too similar to its anchor or positive.
pub fn is_contradictory(a: &[f64], p: &[f64], n: &[f64], threshold: f64) -> bool {
    cosine(a, n) >= threshold || cosine(p, n) >= threshold
}

struct AnchorOutcome {
    triplets: Vec<Triplet>,
    no_negative: bool,
    no_positive: bool,
    contradictory: usize,
}

pub fn build_triplets(
    labels: &HashMap<QueryId, Label>,
    related: &[RelatedQuerySet],
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    params: &TripletParams,
) -> Result<TripletReport> {
    let mut needed: Vec<QueryId> = Vec::new();
    for set in related.iter().filter(|s| labels.contains_key(&s.anchor)) {
        needed.push(set.anchor);
        needed.extend(set.ids().filter(|q| labels.contains_key(q)));
    }
    needed.sort();
    needed.dedup();
    let vectors: HashMap<QueryId, Vec<f64>> = needed
        .par_iter()
        .map(|&q| provider.embed(corpus.query_text(q)).map(|v| (q, v)))
        .collect::<Result<_>>()?;

    let outcomes: Vec<AnchorOutcome> = related
        .par_iter()
        .filter_map(|set| labels.get(&set.anchor).map(|&l| (set, l)))
        .map(|(set, label)| {
            let mut positives = Vec::new();
            let mut negatives = Vec::new();
            for q in set.ids() {
                match labels.get(&q) {
                    Some(&l) if l == label => positives.push(q),
                    Some(_) => negatives.push(q),
                    None => {}
                }
            }
            let a = &vectors[&set.anchor];
            let mut valid = Vec::new();
            let mut contradictory = 0;
            for &p in &positives {
                for &n in &negatives {
                    if is_contradictory(a, &vectors[&p], &vectors[&n], params.contradiction) {
                        contradictory += 1;
                    } else {
                        valid.push((p, n));
                    }
                }
            }
            let mut rng = seed::rng(seed::derive_index(params.seed, set.anchor.0 as u64));
            let chosen: Vec<(QueryId, QueryId)> = valid
                .choose_multiple(&mut rng, params.max_per_anchor.min(valid.len()))
                .copied()
                .collect();
            AnchorOutcome {
                triplets: chosen
                    .into_iter()
                    .map(|(p, n)| Triplet {
                        anchor: corpus.query_text(set.anchor).to_string(),
                        positive: corpus.query_text(p).to_string(),
                        negative: corpus.query_text(n).to_string(),
                        anchor_label: label,
                    })
                    .collect(),
                no_negative: negatives.is_empty(),
                no_positive: positives.is_empty(),
                contradictory,
            }
        })
        .collect();

    let mut report = TripletReport::default();
    for o in outcomes {
        report.triplets.extend(o.triplets);
        report.no_negative += o.no_negative as usize;
        report.no_positive += o.no_positive as usize;
        report.contradictory += o.contradictory;
    }
    Ok(report)
}

/// Sample `target` triplets without replacement, keeping the label mix.
/// Returns everything (with a warning) when fewer are available. The kept
/// triplets stay in input order.
pub fn downsample(triplets: &[Triplet], target: usize, seed_value: u64) -> Vec<Triplet> {
    if target >= triplets.len() {
        if target > triplets.len() {
            warn!("downsample target {target} exceeds {} available triplets", triplets.len());
        }
        return triplets.to_vec();
    }
    let lookup: Vec<usize> = (0..triplets.len())
        .filter(|&i| triplets[i].anchor_label == Label::Lookup)
        .collect();
    let exploratory: Vec<usize> = (0..triplets.len())
        .filter(|&i| triplets[i].anchor_label == Label::Exploratory)
        .collect();
    let n_lookup = ((target as f64) * lookup.len() as f64 / triplets.len() as f64).round() as usize;
    let n_lookup = n_lookup.min(lookup.len()).max(target.saturating_sub(exploratory.len()));
    let mut rng = seed::rng(seed_value);
    let mut keep: Vec<usize> = lookup.choose_multiple(&mut rng, n_lookup).copied().collect();
    keep.extend(exploratory.choose_multiple(&mut rng, target - n_lookup).copied());
    keep.sort_unstable();
    keep.into_iter().map(|i| triplets[i].clone()).collect()
}

/// `anchor \t positive \t negative \t anchor_label` with label 1 = Lookup.
pub fn write_tsv<W: Write>(out: &mut W, triplets: &[Triplet]) -> Result<()> {
    for t in triplets {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            t.anchor,
            t.positive,
            t.negative,
            t.anchor_label.target() as u8
        )?;
    }
    Ok(())
}

pub fn read_tsv<R: BufRead>(input: R, path: &str) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, p, n, l] = fields[..] else {
            return Err(Error::malformed(path, i + 1, format!("expected 4 fields, found {}", fields.len())));
        };
        let anchor_label: Label = l.parse().map_err(|_| Error::malformed(path, i + 1, format!("bad label {l:?}")))?;
        if a.trim().is_empty() || p.trim().is_empty() || n.trim().is_empty() {
            return Err(Error::malformed(path, i + 1, "empty query"));
        }
        out.push(Triplet {
            anchor: a.to_string(),
            positive: p.to_string(),
            negative: n.to_string(),
            anchor_label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{HashedNgram, HashedNgramConfig};
    use crate::querylog::{ingest, SearchRecord};
    use crate::related::{Member, Source};

    fn setup(texts: &[&str]) -> Corpus {
        ingest(texts.iter().map(|t| SearchRecord::new(*t, "u", 1))).unwrap()
    }

    fn set(anchor: u32, members: &[u32]) -> RelatedQuerySet {
        RelatedQuerySet {
            anchor: QueryId(anchor),
            members: members
                .iter()
                .map(|&m| Member {
                    query: QueryId(m),
                    source: Source::Walk,
                    score: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn one_anchor_one_triplet() {
        let corpus = setup(&["capital of peru", "capital of chile", "travel ideas"]);
        let labels = HashMap::from([
            (QueryId(0), Label::Lookup),
            (QueryId(1), Label::Lookup),
            (QueryId(2), Label::Exploratory),
        ]);
        let provider = HashedNgram::new(HashedNgramConfig::default()).unwrap();
        let report = build_triplets(&labels, &[set(0, &[1, 2])], &corpus, &provider, &TripletParams::default()).unwrap();
        assert_eq!(
            report.triplets,
            vec![Triplet {
                anchor: "capital of peru".into(),
                positive: "capital of chile".into(),
                negative: "travel ideas".into(),
                anchor_label: Label::Lookup,
            }]
        );
    }

    #[test]
    fn near_duplicate_negative_is_dropped() {
        let corpus = setup(&["capital of peru", "capital of chile", "capital of peru?"]);
        let labels = HashMap::from([
            (QueryId(0), Label::Lookup),
            (QueryId(1), Label::Lookup),
            (QueryId(2), Label::Exploratory),
        ]);
        let provider = HashedNgram::new(HashedNgramConfig::default()).unwrap();
        let a = provider.embed("capital of peru").unwrap();
        let n = provider.embed("capital of peru?").unwrap();
        let threshold = cosine(&a, &n) - 1e-9;
        let params = TripletParams {
            contradiction: threshold,
            ..TripletParams::default()
        };
        let report = build_triplets(&labels, &[set(0, &[1, 2])], &corpus, &provider, &params).unwrap();
        assert!(report.triplets.is_empty());
        assert_eq!(report.contradictory, 1);
    }

    #[test]
    fn downsample_is_seeded_and_balanced() {
        let make = |i: usize, l| Triplet {
            anchor: format!("a{i}"),
            positive: "p".into(),
            negative: "n".into(),
            anchor_label: l,
        };
        let ts: Vec<_> = (0..100)
            .map(|i| make(i, if i % 4 == 0 { Label::Lookup } else { Label::Exploratory }))
            .collect();
        let a = downsample(&ts, 50, 3);
        assert_eq!(a.len(), 50);
        assert_eq!(a, downsample(&ts, 50, 3));
        let lookups = a.iter().filter(|t| t.anchor_label == Label::Lookup).count();
        assert!((12..=13).contains(&lookups));
        assert_eq!(downsample(&ts, 500, 3).len(), 100);
    }

    #[test]
    fn tsv_round_trip() {
        let ts = vec![Triplet {
            anchor: "a b".into(),
            positive: "c".into(),
            negative: "d e".into(),
            anchor_label: Label::Exploratory,
        }];
        let mut buf = Vec::new();
        write_tsv(&mut buf, &ts).unwrap();
        assert_eq!(read_tsv(buf.as_slice(), "mem").unwrap(), ts);
        assert!(read_tsv("a\tb\n".as_bytes(), "mem").is_err());
    }
}
