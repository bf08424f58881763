use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use query_specificity::bipartite::BipartiteGraph;
use query_specificity::classifier::Model;
use query_specificity::eval::{self, Feature};
use query_specificity::pipeline::{self, IterMode, RunConfig, Stage};
use query_specificity::querylog::{self, Corpus};
use query_specificity::{Error, Label, Result};

#[derive(Parser)]
#[command(name = "qspec", about = "Lookup vs Exploratory query labels from click logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Artifacts directory.
    #[arg(long, default_value = "run")]
    dir: PathBuf,
    /// Run config; defaults to DIR/run.conf when present, else built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.epochs=20.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// `hashed` or `file:<path>`.
    #[arg(long)]
    embeddings: Option<String>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Triplets to train on instead of DIR/triplets.tsv.
    #[arg(long)]
    triplets: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Iterations.
    #[arg(long = "T")]
    iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn run(mut self, mode: IterMode) -> Result<()> {
        let flags = [
            ("train.epochs", self.epochs.map(|v| v.to_string())),
            ("loss.eta", self.eta.map(|v| v.to_string())),
            ("loss.margin", self.margin.map(|v| v.to_string())),
            ("iter.iterations", self.iterations.map(|v| v.to_string())),
            ("iter.alpha", self.alpha.map(|v| v.to_string())),
            ("iter.beta", self.beta.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                self.run.overrides.push(format!("{key}={v}"));
            }
        }
        if let Some(src) = &self.triplets {
            std::fs::create_dir_all(&self.run.dir)?;
            let dst = self.run.dir.join("triplets.tsv");
            if std::fs::canonicalize(src)? != std::fs::canonicalize(&dst).unwrap_or_default() {
                std::fs::copy(src, dst)?;
            }
        }
        self.run.run(&[Stage::Train], |cfg| cfg.iter_mode = mode)
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let saved = self.dir.join("run.conf");
        let mut text = match &self.config {
            Some(p) => std::fs::read_to_string(p)?,
            None if saved.exists() => std::fs::read_to_string(&saved)?,
            None => RunConfig::default().to_text(),
        };
        for o in &self.overrides {
            if !o.contains('=') {
                return Err(Error::InvalidParameter(format!("override {o:?} is not KEY=VALUE")));
            }
            text.push_str(o);
            text.push('\n');
        }
        if let Some(e) = &self.embeddings {
            text.push_str(&format!("embeddings = {e}\n"));
        }
        RunConfig::parse(&text)
    }

    fn run(&self, stages: &[Stage], edit: impl FnOnce(&mut RunConfig)) -> Result<()> {
        let mut cfg = self.config()?;
        edit(&mut cfg);
        pipeline::run(&cfg, &self.dir, Some(stages))?;
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate a click log (TSV, or the configured synthetic corpus).
    Ingest {
        #[command(flatten)]
        run: RunArgs,
        /// query \t url \t clicks [\t session \t position] file.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Hitting times, QQ graph, clusters and relation scores.
    Graph(RunArgs),
    /// Related-query sets per anchor.
    Related(RunArgs),
    /// Pattern dictionaries per related set.
    Mine(RunArgs),
    /// Heuristic labels from pattern dictionaries.
    #[command(alias = "labels")]
    Label(RunArgs),
    /// Training triplets from heuristic labels.
    Triplets(RunArgs),
    /// Train once on the triplets.
    Train(TrainArgs),
    /// Plain iterative self-training.
    IterTrain(TrainArgs),
    /// Semi-greedy iterative self-training.
    Sgit(TrainArgs),
    /// Label texts with a trained model; reads stdin when no text is given.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "query")]
        queries: Vec<String>,
        texts: Vec<String>,
    },
    /// Metrics against ground truth and distribution statistics.
    Eval(RunArgs),
    /// Write a synthetic click log and its ground truth.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// Click log output.
        #[arg(long)]
        out: PathBuf,
        /// Ground truth output.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Query length and session position histograms per label.
    Stats(RunArgs),
    /// Truncated hitting times as `anchor \t related \t hitting_time`.
    HittingTimes {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Drop click edges with fewer clicks before walking.
        #[arg(long, default_value_t = 1)]
        min_out: u64,
        /// Only this anchor; all queries otherwise.
        #[arg(long)]
        query: Option<String>,
    },
    /// Run stages in order, e.g. --stages label.. to resume from labels.
    #[command(alias = "pipeline")]
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        stages: Option<String>,
    },
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join("corpus.jsonl");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    Corpus::read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest { run, input } => run.run(&[Stage::Ingest], |cfg| {
            if let Some(p) = input {
                cfg.input = pipeline::Input::Tsv(p);
            }
        }),
        Command::Graph(r) => r.run(&[Stage::Graph], |_| {}),
        Command::Related(r) => r.run(&[Stage::Related], |_| {}),
        Command::Mine(r) => r.run(&[Stage::Mine], |_| {}),
        Command::Label(r) => r.run(&[Stage::Label], |_| {}),
        Command::Triplets(r) => r.run(&[Stage::Triplets], |_| {}),
        Command::Train(t) => t.run(IterMode::None),
        Command::IterTrain(t) => t.run(IterMode::Iterative),
        Command::Sgit(t) => t.run(IterMode::Sgit),
        Command::Eval(r) => {
            r.run(&[Stage::Eval], |_| {})?;
            print!("{}", std::fs::read_to_string(r.dir.join("metrics.json"))?);
            Ok(())
        }
        Command::Predict { model, queries, texts } => {
            let model = Model::load(&model)?;
            let texts: Vec<String> = queries.into_iter().chain(texts).collect();
            let texts = if texts.is_empty() {
                std::io::stdin().lock().lines().collect::<std::io::Result<Vec<_>>>()?
            } else {
                texts
            };
            let mut out = BufWriter::new(std::io::stdout().lock());
            for (t, p) in texts.iter().zip(model.predict_batch(&texts)?) {
                writeln!(out, "{t}\t{}\t{:.6}", p.label, p.probability)?;
            }
            out.flush()?;
            Ok(())
        }
        Command::Synth { run, out, truth } => {
            let cfg = run.config()?;
            let pipeline::Input::Synthetic(s) = &cfg.input else {
                return Err(Error::InvalidParameter("config input is not synthetic".into()));
            };
            let synth = eval::generate_synthetic(s, cfg.stage_seed("synthetic"))?;
            querylog::ingest(synth.records)?.write_tsv(BufWriter::new(std::fs::File::create(out)?))?;
            let mut t = BufWriter::new(std::fs::File::create(truth)?);
            for q in &synth.queries {
                writeln!(t, "{}\t{}\t{}\t{}", querylog::normalize(&q.text), q.label, q.intent, q.anchor)?;
            }
            t.flush()?;
            Ok(())
        }
        Command::Stats(r) => {
            let stats = pipeline::write_stats(&r.dir)?;
            for label in [Label::Lookup, Label::Exploratory] {
                for feature in [Feature::QueryLength, Feature::SessionPosition] {
                    println!("{label}\t{}\t{}", feature.as_str(), stats.mass(label, feature));
                }
            }
            Ok(())
        }
        Command::HittingTimes {
            run,
            horizon,
            threshold,
            min_out,
            query,
        } => {
            let mut cfg = run.config()?;
            cfg.walk.horizon = horizon.unwrap_or(cfg.walk.horizon);
            cfg.walk.threshold = threshold.unwrap_or(cfg.walk.threshold);
            let corpus = load_corpus(&run.dir)?;
            let edges: Vec<_> = corpus
                .edges()
                .filter(|&(_, _, c)| c >= min_out)
                .map(|(q, u, c)| (q, u, c as f64))
                .collect();
            let graph = BipartiteGraph::from_edges(corpus.num_queries(), corpus.num_urls(), &edges)?;
            let tables = match query {
                Some(text) => {
                    let q = corpus
                        .query_id(&querylog::normalize(&text))
                        .ok_or_else(|| Error::UnknownQueryText(text.clone()))?;
                    vec![graph.hitting_times(q, cfg.walk)?]
                }
                None => graph.all_hitting_times(cfg.walk),
            };
            let mut out = BufWriter::new(std::io::stdout().lock());
            for t in tables {
                for (other, h) in t.entries {
                    writeln!(out, "{}\t{}\t{h}", corpus.query_text(t.anchor), corpus.query_text(other))?;
                }
            }
            out.flush()?;
            Ok(())
        }
        Command::Run { run, stages } => {
            let cfg = run.config()?;
            let stages = stages.as_deref().map(pipeline::parse_stages).transpose()?;
            let summary = pipeline::run(&cfg, &run.dir, stages.as_deref())?;
            for (stage, secs) in summary.timings {
                eprintln!("{stage:<9}{secs:8.2}s");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
