//! Click-log ingestion.
//!
//! Raw rows are `query \t url \t clicks [\t session_id \t session_position]`.
//! Queries are normalized (trim, lowercase, single spaces), interned, and
//! their clicks aggregated per (query, URL) edge. The per-query frequency
//! `f_q` is the total click count over that query's rows.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SNAPSHOT_FORMAT: &str = "query-specificity/corpus";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UrlId(pub u32);

impl QueryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl UrlId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub query: String,
    pub url: String,
    pub clicks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_position: Option<u32>,
}

impl SearchRecord {
    pub fn new(query: impl Into<String>, url: impl Into<String>, clicks: u64) -> Self {
        Self {
            query: query.into(),
            url: url.into(),
            clicks,
            session_id: None,
            session_position: None,
        }
    }

    pub fn with_session(mut self, id: impl Into<String>, position: u32) -> Self {
        self.session_id = Some(id.into());
        self.session_position = Some(position);
        self
    }

    /// Parse one TSV row. Returns `Ok(None)` for blank and `#` comment lines.
    pub fn parse_tsv(line: &str) -> Result<Option<Self>, String> {
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            return Ok(None);
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=5).contains(&cols.len()) {
            return Err(format!("expected 3 to 5 tab-separated columns, found {}", cols.len()));
        }
        let clicks: u64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| format!("clicks {:?} is not a non-negative integer", cols[2]))?;
        if clicks == 0 {
            return Err("clicks must be at least 1".into());
        }
        let url = cols[1].trim();
        if url.is_empty() {
            return Err("empty url".into());
        }
        let session_id = cols.get(3).map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
        let session_position = match cols.get(4).map(|s| s.trim()) {
            None | Some("") => None,
            Some(p) => {
                let p: u32 = p.parse().map_err(|_| format!("session position {p:?} is not an integer"))?;
                if p == 0 {
                    return Err("session position must be at least 1".into());
                }
                Some(p)
            }
        };
        Ok(Some(Self {
            query: cols[0].to_string(),
            url: url.to_string(),
            clicks,
            session_id,
            session_position,
        }))
    }
}

/// Bijective text <-> id table. Ids are assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    ids: HashMap<String, u32>,
    texts: Vec<String>,
}

impl Interner {
    pub fn intern(&mut self, text: &str) -> u32 {
        if let Some(&id) = self.ids.get(text) {
            return id;
        }
        let id = self.texts.len() as u32;
        self.texts.push(text.to_string());
        self.ids.insert(text.to_string(), id);
        id
    }

    pub fn get(&self, text: &str) -> Option<u32> {
        self.ids.get(text).copied()
    }

    pub fn text(&self, id: u32) -> Option<&str> {
        self.texts.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.texts.iter().enumerate().map(|(i, t)| (i as u32, t.as_str()))
    }
}

/// Aggregated, interned click log. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    queries: Interner,
    urls: Interner,
    query_freq: Vec<u64>,
    clicks: BTreeMap<(QueryId, UrlId), u64>,
    session_positions: Vec<Vec<u32>>,
    dropped_empty: usize,
}

impl Corpus {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_urls(&self) -> usize {
        self.urls.len()
    }

    pub fn num_edges(&self) -> usize {
        self.clicks.len()
    }

    pub fn query_id(&self, text: &str) -> Option<QueryId> {
        self.queries.get(&normalize(text)).map(QueryId)
    }

    pub fn url_id(&self, text: &str) -> Option<UrlId> {
        self.urls.get(text).map(UrlId)
    }

    pub fn query_text(&self, id: QueryId) -> &str {
        self.queries.text(id.0).expect("query id out of range")
    }

    pub fn url_text(&self, id: UrlId) -> &str {
        self.urls.text(id.0).expect("url id out of range")
    }

    /// `f_q`: total clicks over the query's records.
    pub fn query_freq(&self, id: QueryId) -> u64 {
        self.query_freq[id.index()]
    }

    pub fn clicks(&self, q: QueryId, u: UrlId) -> u64 {
        self.clicks.get(&(q, u)).copied().unwrap_or(0)
    }

    /// Edges in (query, url) order.
    pub fn edges(&self) -> impl Iterator<Item = (QueryId, UrlId, u64)> + '_ {
        self.clicks.iter().map(|(&(q, u), &c)| (q, u, c))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = QueryId> {
        (0..self.queries.len() as u32).map(QueryId)
    }

    pub fn session_positions(&self, id: QueryId) -> &[u32] {
        &self.session_positions[id.index()]
    }

    /// Records dropped because their query normalized to the empty string.
    pub fn dropped_empty(&self) -> usize {
        self.dropped_empty
    }

    pub fn total_clicks(&self) -> u64 {
        self.query_freq.iter().sum()
    }

    /// One aggregated record per edge; re-ingesting these yields the same
    /// click structure.
    pub fn records(&self) -> impl Iterator<Item = SearchRecord> + '_ {
        self.edges()
            .map(|(q, u, c)| SearchRecord::new(self.query_text(q), self.url_text(u), c))
    }

    /// Equality up to id relabeling: same query texts, URL texts, and
    /// per-edge click totals.
    pub fn content_eq(&self, other: &Corpus) -> bool {
        let key = |c: &Corpus| -> BTreeMap<(String, String), u64> {
            c.edges()
                .map(|(q, u, n)| ((c.query_text(q).to_string(), c.url_text(u).to_string()), n))
                .collect()
        };
        self.num_queries() == other.num_queries() && self.num_urls() == other.num_urls() && key(self) == key(other)
    }

    /// Associative, deterministic merge. Ids of `self` are kept; new texts
    /// from `other` are appended in `other`'s id order.
    pub fn merge(mut self, other: &Corpus) -> Corpus {
        let qmap: Vec<QueryId> = other
            .queries
            .iter()
            .map(|(_, text)| QueryId(self.queries.intern(text)))
            .collect();
        let umap: Vec<UrlId> = other.urls.iter().map(|(_, text)| UrlId(self.urls.intern(text))).collect();
        self.query_freq.resize(self.queries.len(), 0);
        self.session_positions.resize(self.queries.len(), Vec::new());
        for (q, u, c) in other.edges() {
            let (nq, nu) = (qmap[q.index()], umap[u.index()]);
            *self.clicks.entry((nq, nu)).or_insert(0) += c;
            self.query_freq[nq.index()] += c;
        }
        for (i, positions) in other.session_positions.iter().enumerate() {
            self.session_positions[qmap[i].index()].extend_from_slice(positions);
        }
        self.dropped_empty += other.dropped_empty;
        self
    }

    /// Aggregated TSV export; round-trips through [`read_tsv`].
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {SNAPSHOT_FORMAT} tsv v{SNAPSHOT_VERSION}")?;
        for (q, u, c) in self.edges() {
            writeln!(out, "{}\t{}\t{}", self.query_text(q), self.url_text(u), c)?;
        }
        Ok(())
    }

    /// JSONL snapshot: a header line, then one line per query with its session
    /// positions, one per URL, and one per click edge.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            queries: self.num_queries(),
            urls: self.num_urls(),
            edges: self.num_edges(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        // Queries first so ids survive the round trip.
        for (id, text) in self.queries.iter() {
            let line = SnapshotLine::Query {
                q: text.to_string(),
                pos: self.session_positions[id as usize].clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        for (_, text) in self.urls.iter() {
            serde_json::to_writer(&mut out, &SnapshotLine::Url { u: text.to_string() })?;
            out.write_all(b"\n")?;
        }
        for (q, u, c) in self.edges() {
            serde_json::to_writer(&mut out, &SnapshotLine::Edge { qi: q.0, ui: u.0, c })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Corpus> {
        let mut lines = input.lines();
        let header: SnapshotHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::EmptyCorpus),
        };
        if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
            return Err(Error::malformed(
                "snapshot",
                1,
                format!("unsupported snapshot {} v{}", header.format, header.version),
            ));
        }
        let mut corpus = Corpus::default();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SnapshotLine>(&line)? {
                SnapshotLine::Query { q, pos } => {
                    corpus.queries.intern(&q);
                    corpus.session_positions.push(pos);
                    corpus.query_freq.push(0);
                }
                SnapshotLine::Url { u } => {
                    corpus.urls.intern(&u);
                }
                SnapshotLine::Edge { qi, ui, c } => {
                    if qi as usize >= corpus.num_queries() || ui as usize >= corpus.num_urls() || c == 0 {
                        return Err(Error::malformed("snapshot", i + 2, "edge references unknown id or zero clicks"));
                    }
                    corpus.clicks.insert((QueryId(qi), UrlId(ui)), c);
                    corpus.query_freq[qi as usize] += c;
                }
            }
        }
        if corpus.num_queries() != header.queries || corpus.num_edges() != header.edges {
            return Err(Error::malformed("snapshot", 1, "header counts do not match body"));
        }
        if corpus.clicks.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(corpus)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    queries: usize,
    urls: usize,
    edges: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SnapshotLine {
    Query { q: String, pos: Vec<u32> },
    Url { u: String },
    Edge { qi: u32, ui: u32, c: u64 },
}

#[derive(Debug, Default)]
struct CorpusBuilder {
    corpus: Corpus,
}

impl CorpusBuilder {
    fn add(&mut self, record: &SearchRecord) {
        let query = normalize(&record.query);
        if query.is_empty() {
            self.corpus.dropped_empty += 1;
            return;
        }
        debug_assert!(record.clicks >= 1);
        let c = &mut self.corpus;
        let q = QueryId(c.queries.intern(&query));
        let u = UrlId(c.urls.intern(&record.url));
        if q.index() == c.query_freq.len() {
            c.query_freq.push(0);
            c.session_positions.push(Vec::new());
        }
        *c.clicks.entry((q, u)).or_insert(0) += record.clicks;
        c.query_freq[q.index()] += record.clicks;
        if let Some(p) = record.session_position {
            c.session_positions[q.index()].push(p);
        }
    }
}

/// Build a corpus from already-parsed records. Zero-click records are
/// skipped; empty queries are dropped and counted.
pub fn ingest<I>(records: I) -> Result<Corpus>
where
    I: IntoIterator<Item = SearchRecord>,
{
    let mut builder = CorpusBuilder::default();
    for record in records {
        if record.clicks == 0 {
            continue;
        }
        builder.add(&record);
    }
    if builder.corpus.dropped_empty > 0 {
        log::warn!("dropped {} records with empty normalized query", builder.corpus.dropped_empty);
    }
    if builder.corpus.clicks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(builder.corpus)
}

/// Shard the records, build shard corpora in parallel, and merge them in
/// shard order. Produces the same corpus as [`ingest`].
pub fn ingest_sharded(records: &[SearchRecord], shard_size: usize) -> Result<Corpus> {
    let shards: Vec<Corpus> = records
        .par_chunks(shard_size.max(1))
        .map(|chunk| {
            let mut builder = CorpusBuilder::default();
            chunk.iter().filter(|r| r.clicks > 0).for_each(|r| builder.add(r));
            builder.corpus
        })
        .collect();
    let merged = shards.iter().fold(Corpus::default(), |acc, shard| acc.merge(shard));
    if merged.clicks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct IngestReport {
    pub corpus: Corpus,
    pub malformed: Vec<MalformedRow>,
}

/// Read a TSV click log. Malformed rows are reported with their 1-based line
/// number and skipped.
pub fn read_tsv<R: BufRead>(input: R) -> Result<IngestReport> {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        match SearchRecord::parse_tsv(&line) {
            Ok(Some(r)) => records.push(r),
            Ok(None) => {}
            Err(reason) => {
                log::warn!("line {}: {}", i + 1, reason);
                malformed.push(MalformedRow { line: i + 1, reason });
            }
        }
    }
    let corpus = ingest(records)?;
    Ok(IngestReport { corpus, malformed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("  Vegetable  GARDEN "), "vegetable garden");
        assert_eq!(normalize("a"), "a");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("\tA\n b "), "a b");
    }

    #[test]
    fn aggregates_case_variants() {
        let c = ingest(vec![SearchRecord::new("cake", "u1", 3), SearchRecord::new("CAKE ", "u1", 2)]).unwrap();
        assert_eq!(c.num_queries(), 1);
        let q = c.query_id("cake").unwrap();
        let u = c.url_id("u1").unwrap();
        assert_eq!(c.query_freq(q), 5);
        assert_eq!(c.clicks(q, u), 5);
    }

    #[test]
    fn two_queries_one_url() {
        let c = ingest(vec![SearchRecord::new("a", "u1", 1), SearchRecord::new("b", "u1", 2)]).unwrap();
        assert_eq!((c.num_queries(), c.num_urls(), c.num_edges()), (2, 1, 2));
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(ingest(Vec::new()), Err(Error::EmptyCorpus)));
        assert!(matches!(ingest(vec![SearchRecord::new("   ", "u", 1)]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn empty_queries_are_counted() {
        let c = ingest(vec![SearchRecord::new("  ", "u", 1), SearchRecord::new("x", "u", 1)]).unwrap();
        assert_eq!(c.dropped_empty(), 1);
        assert_eq!(c.num_queries(), 1);
    }

    #[test]
    fn malformed_rows_reported_with_line_numbers() {
        let tsv = "# header\ncake\tu1\t3\nbroken row\ncake\tu2\tzero\ncake\tu3\t0\ntea\tu1\t1\ts1\t2\n";
        let report = read_tsv(tsv.as_bytes()).unwrap();
        let lines: Vec<usize> = report.malformed.iter().map(|m| m.line).collect();
        assert_eq!(lines, vec![3, 4, 5]);
        assert_eq!(report.corpus.num_queries(), 2);
        let tea = report.corpus.query_id("tea").unwrap();
        assert_eq!(report.corpus.session_positions(tea), &[2]);
    }

    #[test]
    fn snapshot_round_trip() {
        let c = ingest(vec![
            SearchRecord::new("b", "u2", 4).with_session("s", 3),
            SearchRecord::new("a", "u1", 1),
            SearchRecord::new("b", "u1", 2),
        ])
        .unwrap();
        let mut buf = Vec::new();
        c.write_snapshot(&mut buf).unwrap();
        let back = Corpus::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn tsv_export_is_idempotent() {
        let c = ingest(vec![
            SearchRecord::new("B  x", "u2", 4),
            SearchRecord::new("a", "u1", 1),
            SearchRecord::new("b x", "u1", 2),
        ])
        .unwrap();
        let mut buf = Vec::new();
        c.write_tsv(&mut buf).unwrap();
        let again = read_tsv(buf.as_slice()).unwrap().corpus;
        assert!(again.content_eq(&c));
        assert!(ingest(c.records()).unwrap().content_eq(&c));
    }
}
