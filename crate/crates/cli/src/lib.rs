//! Command-line front end: one verb per pipeline stage plus search, ranking,
//! judging, evaluation, statistics and the HTTP service.

pub mod server;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attrgraph::catalog::{load_catalog, CatalogFormat};
use attrgraph::config::ConfigError;
use attrgraph::eval::{load_runs, render_table, run_eval, EvalOptions};
use attrgraph::extraction::AttributeStore;
use attrgraph::graph::AttributeGraph;
use attrgraph::provider::{StructuredClient, Transcript};
use attrgraph::stats::{collect_stats, graph_stats};
use attrgraph::synthetic::{generate, SynthConfig};
use attrgraph::{
    Engine, Judgments, Method, Pipeline, PipelineConfig, ProductStore, Query, Ranker,
    SchemaRegistry, Stage,
};
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_STAGE: i32 = 2;
pub const EXIT_DEGRADED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "attrgraph", version, about = "Attribute-graph entity similarity search")]
pub struct Cli {
    /// Pipeline config file (TOML). Defaults apply when it does not exist.
    #[arg(long, short, global = true, default_value = "attrgraph.toml")]
    pub config: PathBuf,
    /// Override paths.work_dir.
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    /// Override paths.catalog.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Write every model exchange of this run to a transcript file
    /// (merged with an existing one).
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Rerun even if the stage is up to date.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Query product id (repeatable).
    #[arg(long = "query", short = 'q')]
    pub queries: Vec<String>,
    /// File with one query id per line.
    #[arg(long)]
    pub queries_file: Option<PathBuf>,
    /// Without explicit queries, use the first N catalog products.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, short)]
    pub k: Option<usize>,
    #[arg(long)]
    pub method: Option<Method>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and filter the catalog.
    Ingest(StageArgs),
    /// Assign categories to uncategorized products.
    Classify(StageArgs),
    /// Generate and standardize attribute schemas.
    Schema(StageArgs),
    /// Extract attribute values for every product.
    Extract(StageArgs),
    /// Build the product-attribute graph.
    Graph(StageArgs),
    /// Build the sparse and dense retrieval indexes.
    Index(StageArgs),
    /// Run every offline stage in order.
    Pipeline(StageArgs),
    /// Retrieve candidates without re-ranking.
    Search(QueryArgs),
    /// Retrieve and re-rank; writes one ranked list per line.
    Rank {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        ranker: Option<Ranker>,
        /// Output file (stdout when omitted).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Score query-candidate pairs from run files with the judge prompt.
    Judge {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Judge the top N items of each list.
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long, default_value = "model")]
        judge: String,
    },
    /// Compute ranking metrics for run files against judgments.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<u8>>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Report artifact statistics.
    Stats,
    /// Products having an attribute value (case-insensitive).
    Lookup {
        #[arg(long)]
        attribute: String,
        #[arg(long)]
        value: String,
    },
    /// Serve similar-product lookups over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Write a synthetic catalog and its ground truth.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        products: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(m: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn stage(m: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_STAGE,
            message: m.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e)
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = if cli.config.exists() {
        PipelineConfig::load(&cli.config)?
    } else if cli.config == Path::new("attrgraph.toml") {
        let mut c = PipelineConfig::default();
        c.apply_env(|k| std::env::var(k).ok());
        c
    } else {
        return Err(Failure::usage(format!("config file {} not found", cli.config.display())));
    };
    if let Some(w) = &cli.work_dir {
        config.paths.work_dir = w.clone();
    }
    if let Some(c) = &cli.catalog {
        config.paths.catalog = Some(c.clone());
    }
    config.validate()?;
    Ok(config)
}

fn print_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(Failure::stage)?;
    writeln!(out).map_err(Failure::stage)
}

fn query_ids(args: &QueryArgs, engine: &Engine) -> Result<Vec<String>, Failure> {
    let mut ids = args.queries.clone();
    if let Some(path) = &args.queries_file {
        let f = File::open(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(Failure::stage)?;
            let id = line.trim();
            if !id.is_empty() && !id.starts_with('#') {
                ids.push(id.to_string());
            }
        }
    }
    if ids.is_empty() {
        let limit = args
            .limit
            .ok_or_else(|| Failure::usage("give --query, --queries-file or --limit"))?;
        ids = engine.products().ids().take(limit).map(str::to_string).collect();
    }
    Ok(ids)
}

struct Session {
    config: PipelineConfig,
    client: Arc<StructuredClient>,
    record: Option<PathBuf>,
}

impl Session {
    fn open_engine(&self) -> Result<Engine, Failure> {
        Engine::open(self.config.clone(), Arc::clone(&self.client)).map_err(Failure::stage)
    }

    fn save_transcript(&self) -> Result<(), Failure> {
        let Some(path) = &self.record else { return Ok(()) };
        let mut transcript = if path.exists() {
            Transcript::load(path).map_err(|e| Failure::stage(format!("{}: {e}", path.display())))?
        } else {
            Transcript::default()
        };
        transcript.merge(self.client.transcript());
        transcript
            .save(path)
            .map_err(|e| Failure::stage(format!("{}: {e}", path.display())))
    }
}

/// Runs a parsed command, writing results to `out`. Returns the exit code.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    let config = load_config(&cli)?;
    if let Command::Synth { out: dir, products, seed } = &cli.command {
        return synth(dir, *products, *seed, out);
    }
    let client = Arc::new(config.build_client()?);
    let session = Session {
        config,
        client,
        record: cli.record.clone(),
    };
    let code = dispatch(&session, cli.command, out);
    session.save_transcript()?;
    code
}

fn dispatch(s: &Session, command: Command, out: &mut dyn Write) -> Result<i32, Failure> {
    let stage = |stage: Stage, args: StageArgs, out: &mut dyn Write| -> Result<i32, Failure> {
        let pipeline = Pipeline::new(&s.config, &s.client).map_err(Failure::stage)?;
        let report = pipeline.run_stage(stage, args.force).map_err(Failure::stage)?;
        print_json(out, &report)?;
        Ok(if report.degraded { EXIT_DEGRADED } else { EXIT_OK })
    };
    match command {
        Command::Ingest(a) => stage(Stage::Ingest, a, out),
        Command::Classify(a) => stage(Stage::Classify, a, out),
        Command::Schema(a) => stage(Stage::Schema, a, out),
        Command::Extract(a) => stage(Stage::Extract, a, out),
        Command::Graph(a) => stage(Stage::Graph, a, out),
        Command::Index(a) => stage(Stage::Index, a, out),
        Command::Pipeline(a) => {
            let pipeline = Pipeline::new(&s.config, &s.client).map_err(Failure::stage)?;
            let report = pipeline.run_all(a.force).map_err(Failure::stage)?;
            print_json(out, &report)?;
            Ok(if report.degraded() { EXIT_DEGRADED } else { EXIT_OK })
        }
        Command::Search(args) => {
            let engine = s.open_engine()?;
            let method = args.method.unwrap_or(s.config.retrieval.method);
            let k = args.k.unwrap_or(s.config.retrieval.k);
            for id in query_ids(&args, &engine)? {
                let set = engine.retrieve(&id, k, method).map_err(Failure::stage)?;
                serde_json::to_writer(&mut *out, &set).map_err(Failure::stage)?;
                writeln!(out).map_err(Failure::stage)?;
            }
            Ok(EXIT_OK)
        }
        Command::Rank { query, ranker, out: file } => {
            let engine = s.open_engine()?;
            let mut sink: Box<dyn Write> = match &file {
                Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::stage(format!("{}: {e}", p.display())))?)),
                None => Box::new(&mut *out),
            };
            let mut degraded = false;
            for id in query_ids(&query, &engine)? {
                let q = Query {
                    query_id: id,
                    k: query.k,
                    ranker,
                    method: query.method,
                };
                let list = engine.rank(&q).map_err(Failure::stage)?;
                degraded |= list.degraded;
                serde_json::to_writer(&mut sink, &list).map_err(Failure::stage)?;
                writeln!(sink).map_err(Failure::stage)?;
            }
            sink.flush().map_err(Failure::stage)?;
            Ok(if degraded { EXIT_DEGRADED } else { EXIT_OK })
        }
        Command::Judge { runs, out: path, top, judge } => {
            let engine = s.open_engine()?;
            let systems = load_runs(&runs).map_err(Failure::stage)?;
            let mut judgments = if path.exists() {
                Judgments::load(&path).map_err(Failure::stage)?
            } else {
                Judgments::new()
            };
            let summary = engine.judge_runs(&systems, top, &judge, &mut judgments);
            judgments.save(&path).map_err(Failure::stage)?;
            print_json(
                out,
                &serde_json::json!({"judged": summary.judged, "failed": summary.failed, "total": judgments.len()}),
            )?;
            Ok(if summary.failure_ratio() > s.config.extraction.failure_threshold { EXIT_DEGRADED } else { EXIT_OK })
        }
        Command::Eval { runs, judgments, thresholds, ks, json } => {
            let systems = load_runs(&runs).map_err(Failure::stage)?;
            let judgments = Judgments::load(&judgments).map_err(Failure::stage)?;
            let options = EvalOptions {
                thresholds: thresholds.unwrap_or_else(|| s.config.eval.thresholds.clone()),
                ks: ks.unwrap_or_else(|| s.config.eval.ks.clone()),
            };
            if options.thresholds.iter().any(|&t| t > 100) || options.ks.contains(&0) {
                return Err(Failure::usage("thresholds must be 0-100 and ks positive"));
            }
            let report = run_eval(&systems, &judgments, &options);
            if json {
                print_json(out, &report)?;
            } else {
                write!(out, "{}", render_table(&report)).map_err(Failure::stage)?;
            }
            Ok(EXIT_OK)
        }
        Command::Stats => {
            let paths = s.config.artifacts();
            let graph = if paths.graph.exists() {
                AttributeGraph::load(&paths.graph).map_err(Failure::stage)?
            } else {
                AttributeGraph::new()
            };
            let stats = if paths.products.exists() && paths.registry.exists() {
                let (catalog, _) = load_catalog(&paths.products, CatalogFormat::Jsonl).map_err(Failure::stage)?;
                let version = SchemaRegistry::load(&paths.registry).map_err(Failure::stage)?.version;
                let store = AttributeStore::open(&paths.attributes).map_err(Failure::stage)?;
                collect_stats(&graph, &catalog, &store, version)
            } else {
                graph_stats(&graph)
            };
            print_json(out, &stats)?;
            Ok(EXIT_OK)
        }
        Command::Lookup { attribute, value } => {
            let graph = AttributeGraph::load(&s.config.artifacts().graph).map_err(Failure::stage)?;
            let attribute = attrgraph::text::normalize_name(&attribute);
            print_json(out, &graph.lookup(&attribute, &value))?;
            Ok(EXIT_OK)
        }
        Command::Serve { addr } => {
            let engine = s.open_engine()?;
            server::serve(engine, &addr).map_err(Failure::stage)?;
            Ok(EXIT_OK)
        }
        Command::Synth { .. } => unreachable!("handled before the client is built"),
    }
}

fn synth(dir: &Path, products: usize, seed: u64, out: &mut dyn Write) -> Result<i32, Failure> {
    std::fs::create_dir_all(dir).map_err(Failure::stage)?;
    let cat = generate(&SynthConfig {
        products,
        seed,
        ..Default::default()
    });
    let catalog = dir.join("catalog.jsonl");
    let truth = dir.join("truth.json");
    ProductStore::from_records(cat.records)
        .0
        .write_jsonl(&catalog)
        .map_err(Failure::stage)?;
    cat.truth.save(&truth).map_err(Failure::stage)?;
    let families: BTreeMap<usize, usize> = cat.truth.products.values().fold(BTreeMap::new(), |mut m, p| {
        *m.entry(p.family).or_insert(0) += 1;
        m
    });
    print_json(
        out,
        &serde_json::json!({
            "catalog": catalog,
            "truth": truth,
            "products": products,
            "families": families.len(),
        }),
    )?;
    Ok(EXIT_OK)
}

/// Parses arguments and runs; the return value is the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli, &mut out) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
