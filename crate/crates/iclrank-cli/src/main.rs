//! Command-line front end for the demonstration-guided reranking pipeline.
//!
//! Every pipeline command reads the same flat TOML configuration
//! (`--config`); any individual setting can be overridden with a flag of
//! the same name, so quick experiments don't require editing files.
//! Exit codes: 0 success, 1 usage/configuration error, 2 data error,
//! 3 transport error talking to the chat endpoint.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use iclrank::example_builder::{ExampleOrdering, ExampleStrategy};
use iclrank::pipeline::{
    self, ClientKind, Mode, Objective, PipelineConfig, PipelineError, API_KEY_ENV,
};

#[derive(Debug, Parser)]
#[command(
    name = "iclrank",
    version,
    about = "Demonstration-guided list-wise reranking for retrieval runs",
    long_about = "Builds in-context demonstrations whose ordering tracks a target group \
                  distribution, reranks first-stage retrieval runs through a chat-completion \
                  model with sliding windows, and scores the results for relevance, group \
                  exposure, and topic diversity.\n\nSettings come from a TOML file (--config) \
                  and can be overridden per invocation with the flags below. The chat \
                  endpoint credential is read from the ICLRANK_API_KEY environment variable."
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Optional per-invocation settings. Each flag mirrors one configuration
/// key and, when present, replaces the value from `--config` (or the
/// built-in default when no file is given).
#[derive(Debug, Args)]
struct Overrides {
    /// TOML configuration file; flags below override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Corpus as JSONL (one document per line).
    #[arg(long, global = true, value_name = "FILE")]
    corpus: Option<PathBuf>,

    /// Test queries as TSV (id, text).
    #[arg(long, global = true, value_name = "FILE")]
    queries: Option<PathBuf>,

    /// Logged queries for demonstration lookup, as TSV (id, text).
    #[arg(long, global = true, value_name = "FILE")]
    query_log: Option<PathBuf>,

    /// Serialized query-log index (else built on the fly from --query-log).
    #[arg(long, global = true, value_name = "FILE")]
    index: Option<PathBuf>,

    /// First-stage retrieval run in six-column format.
    #[arg(long, global = true, value_name = "FILE")]
    first_stage_run: Option<PathBuf>,

    /// Relevance judgments in four-column format.
    #[arg(long, global = true, value_name = "FILE")]
    qrels: Option<PathBuf>,

    /// Document group labels as TSV (doc id, group).
    #[arg(long, global = true, value_name = "FILE")]
    attributes: Option<PathBuf>,

    /// Per-query topic clusters (cache written by `cluster`).
    #[arg(long, global = true, value_name = "FILE")]
    clusters: Option<PathBuf>,

    /// Demonstrations consumed by `rerank` in ICL mode.
    #[arg(long, global = true, value_name = "FILE")]
    examples: Option<PathBuf>,

    /// Fixed demonstration (JSON) used by the static strategy.
    #[arg(long, global = true, value_name = "FILE")]
    static_example: Option<PathBuf>,

    /// Ranking objective: fairness, diversity, or relevance-only.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_objective)]
    objective: Option<Objective>,

    /// Demonstration ordering strategy: target, adversarial, uniform,
    /// relevant, or static.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_strategy)]
    strategy: Option<ExampleStrategy>,

    /// Prompt assembly mode: zero-shot, icl, or pao.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_mode)]
    mode: Option<Mode>,

    /// Display order of demonstration documents: random-seeded or
    /// first-stage.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_ordering)]
    ordering: Option<ExampleOrdering>,

    /// Chat client: http, identity, reverse, oracle, or garbage.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_client)]
    client: Option<ClientKind>,

    /// Sliding-window size in documents.
    #[arg(long, global = true, value_name = "N")]
    window: Option<usize>,

    /// Sliding-window step in documents.
    #[arg(long, global = true, value_name = "N")]
    stride: Option<usize>,

    /// How many documents per query are reranked.
    #[arg(long, global = true, value_name = "N")]
    depth: Option<usize>,

    /// Smoothing constant for the greedy KL selection rule.
    #[arg(long, global = true, value_name = "X")]
    epsilon: Option<f64>,

    /// Complete-linkage distance at which cluster merging stops.
    #[arg(long, global = true, value_name = "X")]
    cluster_threshold: Option<f64>,

    /// Relevance weight of the relevance–redundancy trade-off.
    #[arg(long, global = true, value_name = "X")]
    mmr_lambda: Option<f64>,

    /// Chat completions endpoint URL.
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,

    /// Chat model name.
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<String>,

    /// Chat sampling temperature.
    #[arg(long, global = true, value_name = "X")]
    temperature: Option<f64>,

    /// Chat attempts per window before giving up (first try included).
    #[arg(long, global = true, value_name = "N")]
    http_attempts: Option<u32>,

    /// Backoff before the second chat attempt, in milliseconds.
    #[arg(long, global = true, value_name = "MS")]
    http_backoff_ms: Option<u64>,

    /// Seed for every randomized choice in the pipeline.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Truncate each document to this many words in prompts.
    #[arg(long, global = true, value_name = "N")]
    max_doc_words: Option<usize>,

    /// Queries reranked concurrently.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Evaluation rank cutoff.
    #[arg(long, global = true, value_name = "N")]
    cutoff: Option<usize>,

    /// Redundancy penalty for the diversity-aware gain.
    #[arg(long, global = true, value_name = "X")]
    alpha: Option<f64>,

    /// Tag stamped on runs this pipeline writes.
    #[arg(long, global = true, value_name = "NAME")]
    tag: Option<String>,

    /// Term-frequency saturation of the query-log index.
    #[arg(long, global = true, value_name = "X")]
    bm25_k1: Option<f64>,

    /// Length normalization of the query-log index.
    #[arg(long, global = true, value_name = "X")]
    bm25_b: Option<f64>,
}

impl Overrides {
    fn into_config(self) -> Result<PipelineConfig, PipelineError> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };

        macro_rules! set_path {
            ($field:ident) => {
                if let Some(value) = self.$field {
                    config.$field = Some(value);
                }
            };
        }
        macro_rules! set_value {
            ($field:ident) => {
                if let Some(value) = self.$field {
                    config.$field = value;
                }
            };
        }

        set_path!(corpus);
        set_path!(queries);
        set_path!(query_log);
        set_path!(index);
        set_path!(first_stage_run);
        set_path!(qrels);
        set_path!(attributes);
        set_path!(clusters);
        set_path!(examples);
        set_path!(static_example);
        set_value!(objective);
        set_value!(strategy);
        set_value!(mode);
        set_value!(ordering);
        set_value!(client);
        set_value!(window);
        set_value!(stride);
        set_value!(depth);
        set_value!(epsilon);
        set_value!(cluster_threshold);
        set_value!(mmr_lambda);
        set_value!(endpoint);
        set_value!(model);
        set_value!(temperature);
        set_value!(http_attempts);
        set_value!(http_backoff_ms);
        set_value!(seed);
        set_value!(max_doc_words);
        set_value!(workers);
        set_value!(cutoff);
        set_value!(alpha);
        set_value!(tag);
        set_value!(bm25_k1);
        set_value!(bm25_b);

        Ok(config)
    }
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "fairness" => Ok(Objective::Fairness),
        "diversity" => Ok(Objective::Diversity),
        "relevance-only" => Ok(Objective::RelevanceOnly),
        other => Err(format!(
            "`{other}` is not an objective (expected fairness, diversity, or relevance-only)"
        )),
    }
}

fn parse_strategy(s: &str) -> Result<ExampleStrategy, String> {
    match s {
        "target" => Ok(ExampleStrategy::Target),
        "adversarial" => Ok(ExampleStrategy::Adversarial),
        "uniform" => Ok(ExampleStrategy::Uniform),
        "relevant" => Ok(ExampleStrategy::Relevant),
        "static" => Ok(ExampleStrategy::Static),
        other => Err(format!(
            "`{other}` is not a strategy (expected target, adversarial, uniform, relevant, or static)"
        )),
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "zero-shot" => Ok(Mode::ZeroShot),
        "icl" => Ok(Mode::Icl),
        "pao" => Ok(Mode::Pao),
        other => Err(format!("`{other}` is not a mode (expected zero-shot, icl, or pao)")),
    }
}

fn parse_ordering(s: &str) -> Result<ExampleOrdering, String> {
    match s {
        "random-seeded" => Ok(ExampleOrdering::RandomSeeded),
        "first-stage" => Ok(ExampleOrdering::FirstStage),
        other => Err(format!(
            "`{other}` is not an ordering (expected random-seeded or first-stage)"
        )),
    }
}

fn parse_client(s: &str) -> Result<ClientKind, String> {
    match s {
        "http" => Ok(ClientKind::Http),
        "identity" => Ok(ClientKind::Identity),
        "reverse" => Ok(ClientKind::Reverse),
        "oracle" => Ok(ClientKind::Oracle),
        "garbage" => Ok(ClientKind::Garbage),
        other => Err(format!(
            "`{other}` is not a client (expected http, identity, reverse, oracle, or garbage)"
        )),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the lexical index over the query log and serialize it.
    IndexQueries {
        /// Where to write the index (JSON).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },

    /// Construct one in-context demonstration per test query.
    MakeExamples {
        /// Where to write the demonstrations (JSONL).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },

    /// Rerank each query's first-stage run through the chat client.
    Rerank {
        /// Where to write the reranked run.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,

        /// Also record every prompt/response exchange (JSONL).
        #[arg(long, value_name = "FILE")]
        transcript: Option<PathBuf>,
    },

    /// Score a run against the judgments and report per-query metrics.
    Evaluate {
        /// Run file to score.
        #[arg(long, value_name = "FILE")]
        run: PathBuf,

        /// Baseline run; adds a paired t-test per metric.
        #[arg(long, value_name = "FILE")]
        baseline: Option<PathBuf>,

        /// Write the per-query report as TSV.
        #[arg(long, value_name = "FILE")]
        tsv: Option<PathBuf>,

        /// Write the per-query report as JSON.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },

    /// Rerank with the greedy relevance–redundancy trade-off baseline.
    Mmr {
        /// Where to write the reranked run.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,

        /// Write eleven runs for trade-off weights 0.0, 0.1, ..., 1.0.
        #[arg(long)]
        sweep: bool,
    },

    /// Cluster each query's documents into topics (diversity cache).
    Cluster {
        /// Where to write the per-query assignments (TSV).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            u8::try_from(e.exit_code()).map_or(ExitCode::FAILURE, ExitCode::from)
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = cli.overrides.into_config()?;

    match cli.command {
        Command::IndexQueries { out } => {
            let summary = pipeline::cmd_index_queries(&config, &out)?;
            for warning in &summary.warnings {
                eprintln!("warning: {warning}");
            }
            println!(
                "indexed {} logged queries ({} distinct terms) -> {}",
                summary.queries,
                summary.vocabulary,
                out.display()
            );
        }

        Command::MakeExamples { out } => {
            let summary = pipeline::cmd_make_examples(&config, &out)?;
            for (query_id, reason) in &summary.skipped {
                eprintln!("warning: no demonstration for `{query_id}`: {reason}");
            }
            println!("built {} demonstrations -> {}", summary.built, out.display());
        }

        Command::Rerank { out, transcript } => {
            if config.client == ClientKind::Http && std::env::var_os(API_KEY_ENV).is_none() {
                eprintln!("warning: {API_KEY_ENV} is not set; sending unauthenticated requests");
            }
            let summary = pipeline::cmd_rerank(&config, &out, transcript.as_deref())?;
            for (query_id, reason) in &summary.fallbacks {
                eprintln!("warning: `{query_id}` kept its first-stage order: {reason}");
            }
            println!(
                "reranked {} queries with {} chat calls ({} windows repaired) -> {}",
                summary.queries,
                summary.llm_calls,
                summary.repaired_windows,
                out.display()
            );
            if let Some(path) = &transcript {
                println!("transcript -> {}", path.display());
            }
        }

        Command::Evaluate { run, baseline, tsv, json } => {
            let summary = pipeline::cmd_evaluate(
                &config,
                &run,
                baseline.as_deref(),
                tsv.as_deref(),
                json.as_deref(),
            )?;
            for query_id in &summary.skipped {
                eprintln!("warning: `{query_id}` has no judgments; skipped");
            }
            for warning in &summary.warnings {
                eprintln!("warning: {warning}");
            }
            println!("scored {} queries", summary.report.per_query.len());
            for (metric, mean) in &summary.report.means {
                println!("{metric}\t{mean:.6}");
            }
            for entry in &summary.significance {
                match (entry.t, entry.p) {
                    (Some(t), Some(p)) => {
                        println!("vs baseline  {}\tt = {t:.4}\tp = {p:.6}", entry.metric);
                    }
                    _ => {
                        let note = entry.note.as_deref().unwrap_or("no test");
                        println!("vs baseline  {}\t{note}", entry.metric);
                    }
                }
            }
            if let Some(path) = &tsv {
                println!("report (TSV) -> {}", path.display());
            }
            if let Some(path) = &json {
                println!("report (JSON) -> {}", path.display());
            }
        }

        Command::Mmr { out, sweep } => {
            let summary = pipeline::cmd_mmr(&config, &out, sweep)?;
            println!(
                "reranked {} queries into {} run file(s):",
                summary.queries,
                summary.runs_written.len()
            );
            for path in &summary.runs_written {
                println!("  {}", path.display());
            }
        }

        Command::Cluster { out } => {
            let summary = pipeline::cmd_cluster(&config, &out)?;
            println!(
                "clustered {} queries into {} topics overall -> {}",
                summary.queries,
                summary.clusters_total,
                out.display()
            );
        }
    }
    Ok(())
}
