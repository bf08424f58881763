//! Checkpointed end-to-end runs.
//!
//! Each stage reads its inputs from the artifacts directory and writes its
//! outputs there, so any suffix of the stage list can be rerun from cached
//! artifacts. A full run and a resumed run read the same files and produce
//! the same bytes.
//!
//! | stage      | reads                                   | writes |
//! |------------|-----------------------------------------|--------|
//! | `ingest`   | click log or synthetic config           | `corpus.jsonl`; `truth.tsv`, `heldout.tsv` (synthetic only) |
//! | `graph`    | `corpus.jsonl`                          | `hitting_times.tsv`, `qq_edges.tsv`, `clusters.tsv`, `relations.tsv` |
//! | `related`  | `corpus.jsonl`, `hitting_times.tsv`, `relations.tsv` | `related.jsonl`, `ineligible.tsv` |
//! | `mine`     | `corpus.jsonl`, `related.jsonl`         | `patterns.jsonl` |
//! | `label`    | `patterns.jsonl`                        | `labels.tsv` |
//! | `triplets` | `corpus.jsonl`, `related.jsonl`, `labels.tsv`, `heldout.tsv` | `triplets.tsv` |
//! | `train`    | `triplets.tsv`, `heldout.tsv`           | `model.bin`, `history.csv` |
//! | `eval`     | `labels.tsv`, `corpus.jsonl`, `truth.tsv`, `heldout.tsv`, `model.bin` | `metrics.json`, `stats.csv` |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bipartite::{BipartiteGraph, WalkParams};
use crate::classifier::{self, LossConfig, Model, ModelDims, TrainConfig};
use crate::embeddings::{EmbeddingProvider, EmbeddingSpec};
use crate::error::{Error, Result};
use crate::eval::{self, PositiveClass, SyntheticCorpusConfig};
use crate::heuristic::{self, HeuristicParams, SpecificityLabel};
use crate::iterative::{self, ClassifierLearner, HeldOut, IterConfig, IterRecord};
use crate::label::{Label, LabelKind};
use crate::patterns::{self, MinedQuery, MiningParams, PatternDictionary};
use crate::qqgraph::{self, ClusterParams};
use crate::querylog::{self, Corpus, QueryId};
use crate::related::{self, Assembled, RelatedQuerySet, SizeWindow};
use crate::seed;
use crate::triplets::{self, Triplet, TripletParams};

pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Graph,
    Related,
    Mine,
    Label,
    Triplets,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Graph,
        Stage::Related,
        Stage::Mine,
        Stage::Label,
        Stage::Triplets,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Related => "related",
            Stage::Mine => "mine",
            Stage::Label => "label",
            Stage::Triplets => "triplets",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_suffix('s').filter(|t| *t == "label").unwrap_or(&s);
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage {s:?}")))
    }
}

/// Parse `ingest,graph` or a range `label..` / `graph..mine`.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    if let Some((from, to)) = list.split_once("..") {
        let from = if from.is_empty() { Stage::Ingest } else { from.parse()? };
        let to = if to.is_empty() { Stage::Eval } else { to.parse()? };
        return Ok(Stage::ALL.into_iter().filter(|s| (from..=to).contains(s)).collect());
    }
    let mut out: Vec<Stage> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::InvalidParameter("empty stage list".into()));
    }
    Ok(out)
}

/// Where the click log comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Synthetic(SyntheticCorpusConfig),
    Tsv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterMode {
    /// One plain training run.
    None,
    Iterative,
    Sgit,
}

impl FromStr for IterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "iterative" => Ok(Self::Iterative),
            "sgit" => Ok(Self::Sgit),
            other => Err(Error::InvalidParameter(format!("unknown iteration mode {other:?}"))),
        }
    }
}

impl fmt::Display for IterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Iterative => "iterative",
            Self::Sgit => "sgit",
        })
    }
}

/// Everything a run needs. Serialized as a versioned `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub input: Input,
    pub embeddings: EmbeddingSpec,
    pub walk: WalkParams,
    pub cluster: ClusterParams,
    pub window: SizeWindow,
    pub mining: MiningParams,
    pub heuristic: HeuristicParams,
    pub triplets: TripletParams,
    /// Keep at most this many triplets; 0 keeps all.
    pub downsample: usize,
    /// Fraction of heuristic labels flipped before building triplets.
    pub label_noise: f64,
    /// Use the full-size network instead of the desk-scale one.
    pub paper_scale: bool,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub iter_mode: IterMode,
    pub iter: IterConfig,
    pub f1: PositiveClass,
    /// Share of ground-truth queries kept out of training and scored.
    pub holdout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input: Input::Synthetic(SyntheticCorpusConfig::default()),
            embeddings: EmbeddingSpec::default(),
            walk: WalkParams::default(),
            cluster: ClusterParams::default(),
            window: SizeWindow::default(),
            mining: MiningParams::default(),
            heuristic: HeuristicParams::default(),
            triplets: TripletParams::default(),
            downsample: 0,
            label_noise: 0.0,
            paper_scale: false,
            train: TrainConfig {
                epochs: 20,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            loss: LossConfig::default(),
            iter_mode: IterMode::Sgit,
            iter: IterConfig::default(),
            f1: PositiveClass::Exploratory,
            holdout: 0.2,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::RunConfig {
        line,
        reason: format!("bad value {value:?} for {key}"),
    })
}

impl RunConfig {
    /// Sub-seed for a named stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, stage)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut synth = SyntheticCorpusConfig::default();
        let mut input_path: Option<PathBuf> = None;
        let mut version = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(Error::RunConfig {
                    line,
                    reason: "expected key = value".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if version.is_none() && key != "version" {
                return Err(Error::RunConfig {
                    line,
                    reason: "the first setting must be version".into(),
                });
            }
            macro_rules! set {
                ($field:expr) => {
                    $field = parse_value(line, key, value)?
                };
            }
            match key {
                "version" => {
                    let v: u32 = parse_value(line, key, value)?;
                    if v != RUN_CONFIG_VERSION {
                        return Err(Error::RunConfig {
                            line,
                            reason: format!("unsupported version {v}"),
                        });
                    }
                    version = Some(v);
                }
                "seed" => set!(cfg.seed),
                "input" => {
                    input_path = (value != "synthetic").then(|| PathBuf::from(value));
                }
                "synthetic.lookup_intents" => set!(synth.n_lookup_intents),
                "synthetic.exploratory_intents" => set!(synth.n_exploratory_intents),
                "synthetic.queries_per_intent" => set!(synth.queries_per_intent),
                "synthetic.facets" => set!(synth.facets_per_exploratory),
                "synthetic.suffixes" => set!(synth.suffixes_per_lookup),
                "synthetic.hub_clicks" => set!(synth.urls.hub_clicks),
                "synthetic.portal_clicks" => set!(synth.urls.portal_clicks),
                "synthetic.link_clicks" => set!(synth.urls.link_clicks),
                "synthetic.links_per_intent" => set!(synth.urls.links_per_intent),
                "synthetic.session_length" => set!(synth.session_length),
                "embeddings" => set!(cfg.embeddings),
                "walk.horizon" => set!(cfg.walk.horizon),
                "walk.threshold" => set!(cfg.walk.threshold),
                "cluster.goodness" => set!(cfg.cluster.goodness),
                "cluster.relation_threshold" => set!(cfg.cluster.relation_threshold),
                "related.min" => set!(cfg.window.min),
                "related.max" => set!(cfg.window.max),
                "mining.delta" => set!(cfg.mining.delta),
                "mining.gamma" => set!(cfg.mining.gamma),
                "mining.epsilon" => set!(cfg.mining.epsilon),
                "mining.k_min" => {
                    cfg.mining.k_min = if value == "auto" { None } else { Some(parse_value(line, key, value)?) }
                }
                "mining.max_sweeps" => set!(cfg.mining.max_sweeps),
                "heuristic.k_core" => set!(cfg.heuristic.k_core),
                "heuristic.t_high" => set!(cfg.heuristic.t_high),
                "heuristic.t_low" => set!(cfg.heuristic.t_low),
                "heuristic.similarity" => set!(cfg.heuristic.similarity),
                "triplets.max_per_anchor" => set!(cfg.triplets.max_per_anchor),
                "triplets.contradiction" => set!(cfg.triplets.contradiction),
                "triplets.downsample" => set!(cfg.downsample),
                "triplets.label_noise" => set!(cfg.label_noise),
                "model.paper_scale" => set!(cfg.paper_scale),
                "train.epochs" => set!(cfg.train.epochs),
                "train.batch_size" => set!(cfg.train.batch_size),
                "train.learning_rate" => set!(cfg.train.learning_rate),
                "train.dropout" => set!(cfg.train.dropout),
                "train.weight_decay" => set!(cfg.train.weight_decay),
                "loss.eta" => set!(cfg.loss.eta),
                "loss.margin" => set!(cfg.loss.margin),
                "iter.mode" => set!(cfg.iter_mode),
                "iter.iterations" => set!(cfg.iter.iterations),
                "iter.alpha" => set!(cfg.iter.alpha),
                "iter.beta" => set!(cfg.iter.beta),
                "eval.f1" => set!(cfg.f1),
                "eval.holdout" => set!(cfg.holdout),
                other => {
                    return Err(Error::RunConfig {
                        line,
                        reason: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        if version.is_none() {
            return Err(Error::RunConfig {
                line: 0,
                reason: "missing version".into(),
            });
        }
        cfg.input = match input_path {
            Some(p) => Input::Tsv(p),
            None => Input::Synthetic(synth),
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("version = {RUN_CONFIG_VERSION}"), format!("seed = {}", self.seed)];
        match &self.input {
            Input::Tsv(p) => lines.push(format!("input = {}", p.display())),
            Input::Synthetic(s) => {
                lines.push("input = synthetic".into());
                lines.push(format!("synthetic.lookup_intents = {}", s.n_lookup_intents));
                lines.push(format!("synthetic.exploratory_intents = {}", s.n_exploratory_intents));
                lines.push(format!("synthetic.queries_per_intent = {}", s.queries_per_intent));
                lines.push(format!("synthetic.facets = {}", s.facets_per_exploratory));
                lines.push(format!("synthetic.suffixes = {}", s.suffixes_per_lookup));
                lines.push(format!("synthetic.hub_clicks = {}", s.urls.hub_clicks));
                lines.push(format!("synthetic.portal_clicks = {}", s.urls.portal_clicks));
                lines.push(format!("synthetic.link_clicks = {}", s.urls.link_clicks));
                lines.push(format!("synthetic.links_per_intent = {}", s.urls.links_per_intent));
                lines.push(format!("synthetic.session_length = {}", s.session_length));
            }
        }
        let k_min = self.mining.k_min.map_or("auto".to_string(), |k| k.to_string());
        lines.extend([
            format!("embeddings = {}", self.embeddings),
            format!("walk.horizon = {}", self.walk.horizon),
            format!("walk.threshold = {}", self.walk.threshold),
            format!("cluster.goodness = {}", self.cluster.goodness),
            format!("cluster.relation_threshold = {}", self.cluster.relation_threshold),
            format!("related.min = {}", self.window.min),
            format!("related.max = {}", self.window.max),
            format!("mining.delta = {}", self.mining.delta),
            format!("mining.gamma = {}", self.mining.gamma),
            format!("mining.epsilon = {}", self.mining.epsilon),
            format!("mining.k_min = {k_min}"),
            format!("mining.max_sweeps = {}", self.mining.max_sweeps),
            format!("heuristic.k_core = {}", self.heuristic.k_core),
            format!("heuristic.t_high = {}", self.heuristic.t_high),
            format!("heuristic.t_low = {}", self.heuristic.t_low),
            format!("heuristic.similarity = {}", self.heuristic.similarity),
            format!("triplets.max_per_anchor = {}", self.triplets.max_per_anchor),
            format!("triplets.contradiction = {}", self.triplets.contradiction),
            format!("triplets.downsample = {}", self.downsample),
            format!("triplets.label_noise = {}", self.label_noise),
            format!("model.paper_scale = {}", self.paper_scale),
            format!("train.epochs = {}", self.train.epochs),
            format!("train.batch_size = {}", self.train.batch_size),
            format!("train.learning_rate = {}", self.train.learning_rate),
            format!("train.dropout = {}", self.train.dropout),
            format!("train.weight_decay = {}", self.train.weight_decay),
            format!("loss.eta = {}", self.loss.eta),
            format!("loss.margin = {}", self.loss.margin),
            format!("iter.mode = {}", self.iter_mode),
            format!("iter.iterations = {}", self.iter.iterations),
            format!("iter.alpha = {}", self.iter.alpha),
            format!("iter.beta = {}", self.iter.beta),
            format!(
                "eval.f1 = {}",
                match self.f1 {
                    PositiveClass::Exploratory => "exploratory",
                    PositiveClass::Lookup => "lookup",
                    PositiveClass::Macro => "macro",
                }
            ),
            format!("eval.holdout = {}", self.holdout),
        ]);
        lines.join("\n") + "\n"
    }

    pub fn model_dims(&self, input: usize) -> ModelDims {
        if self.paper_scale {
            ModelDims::paper_scale(input)
        } else {
            ModelDims::desk(input)
        }
    }
}

// ---------------------------------------------------------------------------
// In-memory building blocks, shared by the stages, the CLI and the tests.

/// Related sets for every eligible query plus the sizes of ineligible ones.
pub struct RelatedOutput {
    pub sets: Vec<RelatedQuerySet>,
    pub ineligible: Vec<(QueryId, usize)>,
}

fn split_assembled(assembled: Vec<(QueryId, Assembled)>) -> RelatedOutput {
    let mut sets = Vec::new();
    let mut ineligible = Vec::new();
    for (q, a) in assembled {
        match a {
            Assembled::Eligible(s) => sets.push(s),
            Assembled::Ineligible(n) => ineligible.push((q, n)),
        }
    }
    sets.sort_by_key(|s| s.anchor);
    ineligible.sort();
    RelatedOutput { sets, ineligible }
}

/// Mine one dictionary per related set, in input order.
pub fn mine_all(corpus: &Corpus, sets: &[RelatedQuerySet], params: &MiningParams) -> Result<Vec<(QueryId, PatternDictionary)>> {
    sets.par_iter()
        .map(|set| {
            let queries: Vec<MinedQuery> = set
                .ids()
                .map(|q| MinedQuery::new(corpus.query_text(q), corpus.query_freq(q)))
                .collect();
            Ok((set.anchor, patterns::mine_patterns(&queries, params)?))
        })
        .collect()
}

/// Heuristic labels for every non-empty dictionary, in input order.
pub fn label_all<K: Clone + Send + Sync>(
    dicts: &[(K, PatternDictionary)],
    provider: &dyn EmbeddingProvider,
    params: &HeuristicParams,
) -> Result<Vec<(K, SpecificityLabel)>> {
    params.validate()?;
    let labeled: Vec<Option<(K, SpecificityLabel)>> = dicts
        .par_iter()
        .map(|(k, d)| Ok(heuristic::classify(QueryId(0), d, provider, params)?.map(|l| (k.clone(), l))))
        .collect::<Result<_>>()?;
    Ok(labeled.into_iter().flatten().collect())
}

/// Ingest to heuristic labels without touching the disk.
pub struct HeuristicRun {
    pub corpus: Corpus,
    pub related: RelatedOutput,
    /// By query id, only eligible anchors with a non-empty dictionary.
    pub labels: BTreeMap<QueryId, SpecificityLabel>,
}

pub fn run_heuristic(corpus: Corpus, cfg: &RunConfig) -> Result<HeuristicRun> {
    let graph = BipartiteGraph::from_corpus(&corpus);
    let params = related::RelatedParams {
        walk: cfg.walk,
        cluster: cfg.cluster,
        window: cfg.window,
    };
    let index = related::build_all(&graph, &params)?;
    let related = split_assembled(index.sets);
    let dicts = mine_all(&corpus, &related.sets, &cfg.mining)?;
    let provider = cfg.embeddings.build()?;
    let labels = label_all(&dicts, provider.as_ref(), &cfg.heuristic)?
        .into_iter()
        .map(|(q, mut l)| {
            l.anchor = q;
            (q, l)
        })
        .collect();
    Ok(HeuristicRun { corpus, related, labels })
}

/// Flip `round(fraction * n)` labels, chosen uniformly with the seed.
pub fn inject_noise(labels: &mut BTreeMap<QueryId, Label>, fraction: f64, seed_value: u64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!("noise fraction {fraction} outside [0, 1]")));
    }
    let keys: Vec<QueryId> = labels.keys().copied().collect();
    let count = (fraction * keys.len() as f64).round() as usize;
    for i in index::sample(&mut seed::rng(seed_value), keys.len(), count) {
        let l = labels.get_mut(&keys[i]).expect("sampled key exists");
        *l = l.opposite();
    }
    Ok(count)
}

// ---------------------------------------------------------------------------
// File-backed stages.

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn tsv_rows<R: BufRead>(input: R, name: &str, width: usize) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() != width {
            return Err(Error::malformed(name, i + 1, format!("expected {width} fields, found {}", fields.len())));
        }
        out.push(fields);
    }
    Ok(out)
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::read_snapshot(open(dir, "corpus.jsonl")?)
}

fn query_of(corpus: &Corpus, text: &str) -> Result<QueryId> {
    corpus.query_id(text).ok_or_else(|| Error::UnknownQueryText(text.to_string()))
}

/// Ground truth rows `query \t label \t intent \t anchor`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub query: String,
    pub label: Label,
    pub intent: usize,
    pub anchor: bool,
}

pub fn read_truth(dir: &Path) -> Result<Option<Vec<TruthRow>>> {
    if !dir.join("truth.tsv").exists() {
        return Ok(None);
    }
    tsv_rows(open(dir, "truth.tsv")?, "truth.tsv", 4)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let bad = |what: &str| Error::malformed("truth.tsv", i + 1, format!("bad {what}"));
            Ok(TruthRow {
                query: f[0].clone(),
                label: f[1].parse().map_err(|_| bad("label"))?,
                intent: f[2].parse().map_err(|_| bad("intent"))?,
                anchor: f[3].parse().map_err(|_| bad("anchor flag"))?,
            })
        })
        .collect::<Result<_>>()
        .map(Some)
}

/// Labels from `labels.tsv`, keyed by query text, Ambiguous included.
pub fn read_labels(dir: &Path) -> Result<Vec<(String, LabelKind, f64)>> {
    tsv_rows(open(dir, "labels.tsv")?, "labels.tsv", 4)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let kind = match f[1].as_str() {
                "lookup" => LabelKind::Lookup,
                "exploratory" => LabelKind::Exploratory,
                "ambiguous" => LabelKind::Ambiguous,
                other => return Err(Error::malformed("labels.tsv", i + 1, format!("bad label {other:?}"))),
            };
            let density = f[2]
                .parse()
                .map_err(|_| Error::malformed("labels.tsv", i + 1, "bad density"))?;
            Ok((f[0].clone(), kind, density))
        })
        .collect()
}

fn stage_ingest(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let corpus = match &cfg.input {
        Input::Synthetic(s) => {
            let synth = eval::generate_synthetic(s, cfg.stage_seed("synthetic"))?;
            let mut out = create(dir, "truth.tsv")?;
            for q in &synth.queries {
                writeln!(out, "{}\t{}\t{}\t{}", querylog::normalize(&q.text), q.label, q.intent, q.anchor)?;
            }
            out.flush()?;
            let mut out = create(dir, "heldout.tsv")?;
            let picked = index::sample(
                &mut seed::rng(cfg.stage_seed("holdout")),
                synth.queries.len(),
                (cfg.holdout * synth.queries.len() as f64).round() as usize,
            );
            let mut picked = picked.into_vec();
            picked.sort_unstable();
            for i in picked {
                let q = &synth.queries[i];
                writeln!(out, "{}\t{}", querylog::normalize(&q.text), q.label)?;
            }
            out.flush()?;
            querylog::ingest(synth.records)?
        }
        Input::Tsv(path) => {
            let report = querylog::read_tsv(BufReader::new(File::open(path)?))?;
            if !report.malformed.is_empty() {
                log::warn!("{} malformed rows skipped", report.malformed.len());
            }
            report.corpus
        }
    };
    info!("corpus: {} queries, {} urls, {} edges", corpus.num_queries(), corpus.num_urls(), corpus.num_edges());
    let mut out = create(dir, "corpus.jsonl")?;
    corpus.write_snapshot(&mut out)?;
    out.flush()?;
    Ok(())
}

fn stage_graph(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let corpus = load_corpus(dir)?;
    let graph = BipartiteGraph::from_corpus(&corpus);
    let tables = graph.all_hitting_times(cfg.walk);
    let mut out = create(dir, "hitting_times.tsv")?;
    for t in &tables {
        for &(q, v) in &t.entries {
            writeln!(out, "{}\t{}\t{}", corpus.query_text(t.anchor), corpus.query_text(q), v)?;
        }
    }
    out.flush()?;

    let qq = qqgraph::induce_qq(&graph);
    let clusters = qqgraph::partition(&qq, cfg.cluster.goodness)?;
    let mut out = create(dir, "qq_edges.tsv")?;
    qqgraph::write_edges(&mut out, &qq, &corpus)?;
    out.flush()?;
    let mut out = create(dir, "clusters.tsv")?;
    qqgraph::write_clusters(&mut out, &clusters, &corpus)?;
    out.flush()?;

    let relations = qqgraph::relation_lists(&qq, &clusters, cfg.cluster.relation_threshold);
    let mut sources: Vec<&QueryId> = relations.keys().collect();
    sources.sort();
    let mut out = create(dir, "relations.tsv")?;
    for q in sources {
        for &(r, v) in &relations[q] {
            writeln!(out, "{}\t{}\t{}", corpus.query_text(*q), corpus.query_text(r), v)?;
        }
    }
    out.flush()?;
    info!("graph: {} qq edges, {} clusters", qq.num_edges(), clusters.len());
    Ok(())
}

type Lists = HashMap<QueryId, Vec<(QueryId, f64)>>;

fn read_lists(dir: &Path, name: &str, corpus: &Corpus) -> Result<Lists> {
    let mut lists: Lists = HashMap::new();
    for (i, f) in tsv_rows(open(dir, name)?, name, 3)?.into_iter().enumerate() {
        let v: f64 = f[2].parse().map_err(|_| Error::malformed(name, i + 1, "bad score"))?;
        lists
            .entry(query_of(corpus, &f[0])?)
            .or_default()
            .push((query_of(corpus, &f[1])?, v));
    }
    Ok(lists)
}

fn stage_related(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let corpus = load_corpus(dir)?;
    let walk = read_lists(dir, "hitting_times.tsv", &corpus)?;
    let relation = read_lists(dir, "relations.tsv", &corpus)?;
    let empty = Vec::new();
    let assembled: Vec<(QueryId, Assembled)> = corpus
        .query_ids()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|q| {
            let w = walk.get(&q).unwrap_or(&empty);
            let r = relation.get(&q).unwrap_or(&empty);
            (q, related::assemble(q, w, r, cfg.window))
        })
        .collect();
    let out_sets = split_assembled(assembled);
    let mut out = create(dir, "related.jsonl")?;
    related::write_jsonl(&mut out, &out_sets.sets, &corpus)?;
    out.flush()?;
    let mut out = create(dir, "ineligible.tsv")?;
    for (q, n) in &out_sets.ineligible {
        writeln!(out, "{}\t{}", corpus.query_text(*q), n)?;
    }
    out.flush()?;
    info!("related: {} eligible, {} ineligible", out_sets.sets.len(), out_sets.ineligible.len());
    Ok(())
}

fn load_related(dir: &Path, corpus: &Corpus) -> Result<Vec<RelatedQuerySet>> {
    related::read_jsonl(open(dir, "related.jsonl")?, corpus)
}

fn stage_mine(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let corpus = load_corpus(dir)?;
    let sets = load_related(dir, &corpus)?;
    let dicts = mine_all(&corpus, &sets, &cfg.mining)?;
    let mut out = create(dir, "patterns.jsonl")?;
    for (q, d) in &dicts {
        patterns::write_jsonl_line(&mut out, corpus.query_text(*q), d)?;
    }
    out.flush()?;
    let empty = dicts.iter().filter(|(_, d)| d.is_empty()).count();
    info!("mine: {} dictionaries, {} empty", dicts.len(), empty);
    Ok(())
}

fn stage_label(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let dicts = patterns::read_jsonl(open(dir, "patterns.jsonl")?, "patterns.jsonl")?;
    let provider = cfg.embeddings.build()?;
    let labels = label_all(&dicts, provider.as_ref(), &cfg.heuristic)?;
    let mut out = create(dir, "labels.tsv")?;
    heuristic::write_tsv(&mut out, &labels)?;
    out.flush()?;
    let count = |k: LabelKind| labels.iter().filter(|(_, l)| l.kind == k).count();
    info!(
        "label: {} lookup, {} exploratory, {} ambiguous",
        count(LabelKind::Lookup),
        count(LabelKind::Exploratory),
        count(LabelKind::Ambiguous)
    );
    Ok(())
}

fn stage_triplets(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let corpus = load_corpus(dir)?;
    let sets = load_related(dir, &corpus)?;
    let mut labels: BTreeMap<QueryId, Label> = BTreeMap::new();
    for (text, kind, _) in read_labels(dir)? {
        if let Some(l) = kind.definite() {
            labels.insert(query_of(&corpus, &text)?, l);
        }
    }
    if cfg.label_noise > 0.0 {
        let flipped = inject_noise(&mut labels, cfg.label_noise, cfg.stage_seed("noise"))?;
        info!("triplets: flipped {flipped} labels");
    }
    let labels: HashMap<QueryId, Label> = labels.into_iter().collect();
    let provider = cfg.embeddings.build()?;
    let params = TripletParams {
        seed: cfg.stage_seed("triplets"),
        ..cfg.triplets
    };
    let report = triplets::build_triplets(&labels, &sets, &corpus, provider.as_ref(), &params)?;
    let held: HashSet<String> = read_heldout(dir)?.0.into_iter().collect();
    let usable: Vec<Triplet> = report
        .triplets
        .into_iter()
        .filter(|t| ![&t.anchor, &t.positive, &t.negative].iter().any(|q| held.contains(q.as_str())))
        .collect();
    let kept = if cfg.downsample > 0 {
        triplets::downsample(&usable, cfg.downsample, cfg.stage_seed("downsample"))
    } else {
        usable
    };
    info!(
        "triplets: {} kept, {} anchors without negatives, {} contradictory pairs",
        kept.len(),
        report.no_negative,
        report.contradictory
    );
    let mut out = create(dir, "triplets.tsv")?;
    triplets::write_tsv(&mut out, &kept)?;
    out.flush()?;
    Ok(())
}

/// Held-out queries and their true labels; empty when the run has none.
pub fn read_heldout(dir: &Path) -> Result<(Vec<String>, Vec<Label>)> {
    if !dir.join("heldout.tsv").exists() {
        return Ok((Vec::new(), Vec::new()));
    }
    tsv_rows(open(dir, "heldout.tsv")?, "heldout.tsv", 2)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let label: Label = f[1]
                .parse()
                .map_err(|_| Error::malformed("heldout.tsv", i + 1, "bad label"))?;
            Ok((f[0].clone(), label))
        })
        .collect::<Result<Vec<_>>>()
        .map(|rows| rows.into_iter().unzip())
}

fn write_history(dir: &Path, history: &[IterRecord]) -> Result<()> {
    let mut out = create(dir, "history.csv")?;
    iterative::write_history_csv(&mut out, history)?;
    out.flush()?;
    Ok(())
}

fn stage_train(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let samples = triplets::read_tsv(open(dir, "triplets.tsv")?, "triplets.tsv")?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no triplets to train on".into()));
    }
    let provider = cfg.embeddings.build()?;
    let model = Model::with_provider(
        cfg.model_dims(provider.dim()),
        cfg.embeddings.clone(),
        provider,
        cfg.stage_seed("model"),
    )?;
    let (texts, truth_labels) = read_heldout(dir)?;
    let heldout = (!texts.is_empty()).then_some(HeldOut {
        texts: &texts,
        labels: &truth_labels,
    });
    let train_cfg = TrainConfig {
        seed: cfg.stage_seed("train"),
        ..cfg.train
    };
    let (best, history) = match cfg.iter_mode {
        IterMode::None => {
            let mut m = model;
            let epochs = classifier::train(&mut m, &samples, &train_cfg, &cfg.loss)?;
            let mut history = Vec::new();
            for e in epochs {
                let (heldout_acc, heldout_f1) = match heldout {
                    Some(h) => {
                        let pred: Vec<Label> = m.predict_batch(h.texts)?.into_iter().map(|p| p.label).collect();
                        let metrics = eval::evaluate(&pred, h.labels, cfg.f1)?;
                        (Some(metrics.accuracy), Some(metrics.f1))
                    }
                    None => (None, None),
                };
                history.push(IterRecord {
                    iter: e.epoch + 1,
                    train_acc: e.accuracy,
                    acc_best: e.accuracy,
                    heldout_acc,
                    heldout_f1,
                });
            }
            (m, history)
        }
        mode => {
            let learner = ClassifierLearner {
                train: train_cfg,
                loss: cfg.loss,
            };
            let iter_cfg = IterConfig {
                seed: cfg.stage_seed("iterate"),
                ..cfg.iter
            };
            let result = if mode == IterMode::Sgit {
                iterative::sgit(&learner, model, &samples, &iter_cfg, heldout)
            } else {
                iterative::iterative_train(&learner, model, &samples, &iter_cfg, heldout)
            };
            match result {
                Ok(o) => (o.best, o.history),
                Err(f) => {
                    // Keep what was reached before the failure.
                    f.partial.best.save(&dir.join("model.bin"))?;
                    write_history(dir, &f.partial.history)?;
                    return Err(f.error);
                }
            }
        }
    };
    best.save(&dir.join("model.bin"))?;
    write_history(dir, &history)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicReport {
    pub anchors: usize,
    pub anchors_recovered: usize,
    pub anchor_recovery: f64,
    /// Anchors given the opposite definite label.
    pub anchor_confusions: usize,
    pub anchors_ambiguous: usize,
    pub anchors_unlabeled: usize,
    /// Over every labeled query with a truth row.
    pub labeled_queries: usize,
    pub query_recovery: f64,
    /// Labeled queries given the opposite definite label.
    pub query_confusions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub heuristic: Option<HeuristicReport>,
    pub model: Option<eval::Metrics>,
}

/// Compare heuristic labels to ground truth.
pub fn heuristic_report(labels: &HashMap<String, LabelKind>, truth: &[TruthRow]) -> HeuristicReport {
    let mut r = HeuristicReport {
        anchors: 0,
        anchors_recovered: 0,
        anchor_recovery: 0.0,
        anchor_confusions: 0,
        anchors_ambiguous: 0,
        anchors_unlabeled: 0,
        labeled_queries: 0,
        query_recovery: 0.0,
        query_confusions: 0,
    };
    let mut correct = 0;
    for row in truth {
        let kind = labels.get(&row.query).copied();
        if let Some(k) = kind {
            r.labeled_queries += 1;
            correct += usize::from(k == LabelKind::from(row.label));
            r.query_confusions += usize::from(k == LabelKind::from(row.label.opposite()));
        }
        if !row.anchor {
            continue;
        }
        r.anchors += 1;
        match kind {
            None => r.anchors_unlabeled += 1,
            Some(LabelKind::Ambiguous) => r.anchors_ambiguous += 1,
            Some(k) if k == LabelKind::from(row.label) => r.anchors_recovered += 1,
            Some(_) => r.anchor_confusions += 1,
        }
    }
    r.anchor_recovery = r.anchors_recovered as f64 / r.anchors.max(1) as f64;
    r.query_recovery = correct as f64 / r.labeled_queries.max(1) as f64;
    r
}

/// Length and session-position histograms of the labeled queries, written
/// to `stats.csv`.
pub fn write_stats(dir: &Path) -> Result<eval::DistributionStats> {
    let corpus = load_corpus(dir)?;
    let mut definite: HashMap<QueryId, Label> = HashMap::new();
    for (text, kind, _) in read_labels(dir)? {
        if let Some(l) = kind.definite() {
            definite.insert(query_of(&corpus, &text)?, l);
        }
    }
    let stats = eval::distribution_stats(&corpus, &definite);
    let mut out = create(dir, "stats.csv")?;
    stats.write_csv(&mut out)?;
    out.flush()?;
    Ok(stats)
}

fn stage_eval(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_stats(dir)?;
    let labels = read_labels(dir)?;

    let truth = read_truth(dir)?;
    let heuristic = truth.as_deref().map(|t| {
        let by_text: HashMap<String, LabelKind> = labels.iter().map(|(q, k, _)| (q.clone(), *k)).collect();
        heuristic_report(&by_text, t)
    });
    let (texts, truth_labels) = read_heldout(dir)?;
    let model = match (texts.is_empty(), dir.join("model.bin").exists()) {
        (false, true) => {
            let m = Model::load(&dir.join("model.bin"))?;
            let pred: Vec<Label> = m.predict_batch(&texts)?.into_iter().map(|p| p.label).collect();
            Some(eval::evaluate(&pred, &truth_labels, cfg.f1)?)
        }
        _ => None,
    };
    let report = EvalReport { heuristic, model };
    let mut out = create(dir, "metrics.json")?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Wall-clock seconds per executed stage.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub timings: Vec<(Stage, f64)>,
}

pub fn run_stage(stage: Stage, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let result = match stage {
        Stage::Ingest => stage_ingest(cfg, dir),
        Stage::Graph => stage_graph(cfg, dir),
        Stage::Related => stage_related(cfg, dir),
        Stage::Mine => stage_mine(cfg, dir),
        Stage::Label => stage_label(cfg, dir),
        Stage::Triplets => stage_triplets(cfg, dir),
        Stage::Train => stage_train(cfg, dir),
        Stage::Eval => stage_eval(cfg, dir),
    };
    result.map_err(|e| Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    })
}

/// Run the given stages in pipeline order (all of them when `stages` is
/// `None`). The config is saved as `run.conf` next to the artifacts.
pub fn run(cfg: &RunConfig, dir: &Path, stages: Option<&[Stage]>) -> Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run.conf"), cfg.to_text())?;
    let mut summary = RunSummary::default();
    for stage in Stage::ALL {
        if stages.is_some_and(|s| !s.contains(&stage)) {
            continue;
        }
        let start = Instant::now();
        run_stage(stage, cfg, dir)?;
        let secs = start.elapsed().as_secs_f64();
        info!("stage {stage} done in {secs:.2}s");
        summary.timings.push((stage, secs));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let cfg = RunConfig {
            seed: 42,
            label_noise: 0.1,
            iter_mode: IterMode::Iterative,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn run_config_errors_carry_lines() {
        let err = RunConfig::parse("version = 1\nseed = x\n").unwrap_err();
        assert!(matches!(err, Error::RunConfig { line: 2, .. }));
        assert!(matches!(RunConfig::parse("seed = 1\n"), Err(Error::RunConfig { line: 1, .. })));
        assert!(matches!(RunConfig::parse("version = 2\n"), Err(Error::RunConfig { .. })));
        assert!(matches!(RunConfig::parse("version = 1\nbogus = 3\n"), Err(Error::RunConfig { line: 2, .. })));
    }

    #[test]
    fn stage_lists() {
        assert_eq!(parse_stages("labels").unwrap(), vec![Stage::Label]);
        assert_eq!(parse_stages("label..").unwrap(), vec![Stage::Label, Stage::Triplets, Stage::Train, Stage::Eval]);
        assert_eq!(parse_stages("mine,graph").unwrap(), vec![Stage::Graph, Stage::Mine]);
        assert!(parse_stages("nope").is_err());
    }

    #[test]
    fn missing_input_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err = run(&RunConfig::default(), dir.path(), Some(&[Stage::Label])).unwrap_err();
        match err {
            Error::Stage { stage, source } => {
                assert_eq!(stage, "label");
                assert!(matches!(*source, Error::MissingArtifact(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noise_flips_exact_count() {
        let mut labels: BTreeMap<QueryId, Label> = (0..50).map(|i| (QueryId(i), Label::Lookup)).collect();
        assert_eq!(inject_noise(&mut labels, 0.1, 3).unwrap(), 5);
        assert_eq!(labels.values().filter(|&&l| l == Label::Exploratory).count(), 5);
    }
}
