//! End-to-end commands tying the library together: index a query log,
//! construct demonstrations, re-rank first-stage runs through a chat
//! model, evaluate runs, and the unsupervised baselines (MMR, topic
//! clustering). The CLI binary is a thin argument layer over these
//! functions, which keeps every behavior testable in-process.
//!
//! All commands are driven by one flat [`PipelineConfig`] (TOML on disk,
//! flags override file values, defaults fill the rest). Randomized steps
//! derive a per-query generator from the configured seed and the query
//! id, so results are reproducible regardless of worker scheduling.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{target_distribution, uniform_distribution, CategoricalDistribution};
use crate::example_builder::{
    build_example, ExampleOrdering, ExampleSpec, ExampleStrategy, IclExample,
};
use crate::io::{self, ExampleRecord, IoError};
use crate::llm_rerank::{
    sliding_window_rerank, GarbageClient, HttpLlmClient, IdentityClient, LlmClient, LlmError,
    OracleClient, PaoObjective, PromptMode, RerankParams, ReversingClient, WindowError,
    WindowTrace, DEFAULT_DEPTH, DEFAULT_MAX_DOC_WORDS, DEFAULT_STRIDE, DEFAULT_WINDOW,
};
use crate::metrics::{
    alpha_ndcg_at, awrf_at, m1_at, ndcg_at, paired_t_test, MetricReport, MetricsError, Qrels,
};
use crate::mmr::{mmr_rerank, MmrConfig, DEFAULT_LAMBDA};
use crate::query_log::build_index;
use crate::rng::SeededRng;
use crate::topic_cluster::{agglomerative_cluster, labels_to_attributes, ClusterAssignment};
use crate::types::{Document, Query, RankedList};

/// Environment variable holding the chat endpoint credential. The key is
/// read from the process environment only — it has no configuration-file
/// counterpart, so it can never end up committed alongside settings.
pub const API_KEY_ENV: &str = "ICLRANK_API_KEY";

// ─── Errors ──────────────────────────────────────────────────────────────────

/// Command failures, bucketed by exit code: usage problems (1), data
/// problems (2), transport problems (3).
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Transport(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Transport(_) => 3,
        }
    }
}

impl From<IoError> for PipelineError {
    fn from(err: IoError) -> Self {
        PipelineError::Data(err.to_string())
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn usage(message: impl Into<String>) -> PipelineError {
    PipelineError::Usage(message.into())
}

fn data(message: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(message.to_string())
}

// ─── Configuration ───────────────────────────────────────────────────────────

/// What a re-ranking should optimize beyond relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Balance exposure across document groups (e.g. author gender).
    Fairness,
    /// Spread exposure across topics discovered by clustering.
    Diversity,
    /// Plain relevance ranking; no group machinery.
    RelevanceOnly,
}

/// How prompts are assembled for the chat model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Instruction and passages only.
    ZeroShot,
    /// One worked demonstration precedes the test window.
    Icl,
    /// Zero-shot with the ranking instruction rewritten for the
    /// objective (prompt-as-objective).
    Pao,
}

/// Which chat client the `rerank` command talks to. The mocks make every
/// pipeline run reproducible offline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientKind {
    /// POST to an OpenAI-compatible chat completions endpoint.
    Http,
    /// Echo every window unchanged.
    Identity,
    /// Reverse every window.
    Reverse,
    /// Sort each window by judged grade (requires qrels).
    Oracle,
    /// Emit malformed answers that always need repair.
    Garbage,
}

/// Flat configuration shared by all commands. Serialized as TOML; every
/// field has a default, and unknown keys are rejected so typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // Input paths. Each command states which of these it needs.
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub query_log: Option<PathBuf>,
    /// Serialized query-log index; built on the fly from `query_log`
    /// when absent.
    pub index: Option<PathBuf>,
    pub first_stage_run: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    /// Per-query topic clusters (cache written by the cluster command).
    pub clusters: Option<PathBuf>,
    /// Demonstrations consumed by `rerank` in ICL mode (written by
    /// `make-examples`).
    pub examples: Option<PathBuf>,
    /// Fixed demonstration used by the static strategy.
    pub static_example: Option<PathBuf>,

    pub objective: Objective,
    pub strategy: ExampleStrategy,
    pub mode: Mode,
    /// Display order of demonstration documents in the prompt.
    pub ordering: ExampleOrdering,

    pub window: usize,
    pub stride: usize,
    pub depth: usize,
    /// Smoothing constant for the greedy KL selection rule.
    pub epsilon: f64,
    /// Complete-linkage distance at which cluster merging stops.
    pub cluster_threshold: f64,
    pub mmr_lambda: f64,

    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Chat attempts per window before giving up (first try included).
    pub http_attempts: u32,
    /// Backoff before the second attempt; doubles each retry.
    pub http_backoff_ms: u64,

    pub seed: u64,
    pub max_doc_words: usize,
    pub workers: usize,
    pub client: ClientKind,
    /// Evaluation rank cutoff.
    pub cutoff: usize,
    /// Redundancy penalty for the diversity-aware gain.
    pub alpha: f64,
    /// Tag stamped on runs this pipeline writes.
    pub tag: String,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            queries: None,
            query_log: None,
            index: None,
            first_stage_run: None,
            qrels: None,
            attributes: None,
            clusters: None,
            examples: None,
            static_example: None,
            objective: Objective::Fairness,
            strategy: ExampleStrategy::Target,
            mode: Mode::ZeroShot,
            ordering: ExampleOrdering::RandomSeeded,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            depth: DEFAULT_DEPTH,
            epsilon: 1e-3,
            cluster_threshold: 0.9,
            mmr_lambda: DEFAULT_LAMBDA,
            endpoint: "http://localhost:8000/v1/chat/completions".to_string(),
            model: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            http_attempts: 3,
            http_backoff_ms: 1000,
            seed: 42,
            max_doc_words: DEFAULT_MAX_DOC_WORDS,
            workers: 4,
            client: ClientKind::Http,
            cutoff: 10,
            alpha: 1.0,
            tag: "iclrank".to_string(),
            bm25_k1: 0.9,
            bm25_b: 0.4,
        }
    }
}

impl PipelineConfig {
    /// Parses a TOML configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Usage(m) => usage(format!("config `{}`: {m}", path.display())),
            other => other,
        })
    }

    /// Parses TOML text into a configuration.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| usage(e.to_string()))
    }

    /// Checks cross-field invariants. Commands call this first.
    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 || self.window < self.stride {
            return Err(usage(format!(
                "window ({}) must be at least stride ({}), and stride at least 1",
                self.window, self.stride
            )));
        }
        if self.depth < self.window {
            return Err(usage(format!(
                "depth ({}) must be at least window ({})",
                self.depth, self.window
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(usage(format!("epsilon must be positive and finite, got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(usage(format!("mmr_lambda must be in [0, 1], got {}", self.mmr_lambda)));
        }
        if !(0.0..=1.0).contains(&self.cluster_threshold) {
            return Err(usage(format!(
                "cluster_threshold must be in [0, 1], got {}",
                self.cluster_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(usage(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.cutoff < 1 {
            return Err(usage("cutoff must be at least 1".to_string()));
        }
        if self.workers < 1 {
            return Err(usage("workers must be at least 1".to_string()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(usage(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        if self.http_attempts < 1 {
            return Err(usage("http_attempts must be at least 1".to_string()));
        }
        if self.mode == Mode::Pao && self.objective == Objective::RelevanceOnly {
            return Err(usage(
                "pao mode rewrites the instruction for an objective; \
                 set objective to fairness or diversity"
                    .to_string(),
            ));
        }
        Ok(())
    }

    /// The prompt mode this configuration asks for.
    fn prompt_mode(&self) -> Result<PromptMode> {
        Ok(match self.mode {
            Mode::ZeroShot => PromptMode::ZeroShot,
            Mode::Icl => PromptMode::Icl,
            Mode::Pao => match self.objective {
                Objective::Fairness => PromptMode::Pao(PaoObjective::Fairness),
                Objective::Diversity => PromptMode::Pao(PaoObjective::Diversity),
                Objective::RelevanceOnly => {
                    return Err(usage(
                        "pao mode rewrites the instruction for an objective; \
                         set objective to fairness or diversity"
                            .to_string(),
                    ))
                }
            },
        })
    }
}

fn require<'a>(field: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    field
        .as_deref()
        .ok_or_else(|| usage(format!("config key `{key}` is required for this command")))
}

// ─── index-queries ───────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct IndexSummary {
    pub queries: usize,
    pub vocabulary: usize,
    pub warnings: Vec<String>,
}

/// Builds the lexical index over a query log and serializes it.
pub fn cmd_index_queries(config: &PipelineConfig, out_path: &Path) -> Result<IndexSummary> {
    let log_path = require(&config.query_log, "query_log")?;
    let logged = io::read_queries(log_path)?;
    let mut warnings = Vec::new();
    if logged.is_empty() {
        warnings.push(format!(
            "query log `{}` is empty; the index will never match anything",
            log_path.display()
        ));
    }
    let index = build_index(logged, config.bm25_k1, config.bm25_b).map_err(data)?;
    io::save_index(out_path, &index)?;
    Ok(IndexSummary { queries: index.len(), vocabulary: index.vocabulary_size(), warnings })
}

// ─── make-examples ───────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct MakeExamplesSummary {
    pub built: usize,
    /// Queries that could not get a demonstration, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Constructs one demonstration per test query and writes them as JSONL.
/// Per-query problems (no similar logged query, short runs, missing
/// labels) skip that query with a recorded reason rather than failing
/// the whole command.
pub fn cmd_make_examples(config: &PipelineConfig, out_path: &Path) -> Result<MakeExamplesSummary> {
    config.validate()?;
    let queries = io::read_queries(require(&config.queries, "queries")?)?;

    // The static strategy stamps one fixed demonstration on every query
    // and needs none of the retrieval machinery.
    if config.strategy == ExampleStrategy::Static {
        let example =
            io::read_static_example(require(&config.static_example, "static_example")?)?;
        if example.documents.len() != config.window {
            return Err(usage(format!(
                "static example has {} documents but the window size is {}",
                example.documents.len(),
                config.window
            )));
        }
        let records: Vec<ExampleRecord> = queries
            .iter()
            .map(|q| ExampleRecord {
                test_query_id: q.query_id.clone(),
                example: example.clone(),
            })
            .collect();
        io::write_examples(out_path, &records)?;
        return Ok(MakeExamplesSummary { built: records.len(), skipped: Vec::new() });
    }

    let needs_schema = matches!(
        config.strategy,
        ExampleStrategy::Target | ExampleStrategy::Adversarial | ExampleStrategy::Uniform
    );
    let needs_target =
        matches!(config.strategy, ExampleStrategy::Target | ExampleStrategy::Adversarial);
    if needs_schema && config.objective == Objective::RelevanceOnly {
        return Err(usage(format!(
            "strategy `{}` shapes group exposure; it needs objective fairness or diversity",
            config.strategy.as_str()
        )));
    }

    let corpus = io::read_corpus(require(&config.corpus, "corpus")?)?;
    let runs: HashMap<String, RankedList> =
        io::read_run(require(&config.first_stage_run, "first_stage_run")?)?
            .into_iter()
            .map(|list| (list.query_id.clone(), list))
            .collect();
    let index = if let Some(path) = &config.index {
        io::load_index(path)?
    } else {
        let log_path = require(&config.query_log, "query_log")
            .map_err(|_| usage("config key `index` or `query_log` is required".to_string()))?;
        build_index(io::read_queries(log_path)?, config.bm25_k1, config.bm25_b).map_err(data)?
    };

    // Fairness examples share one labeled schema; targets come from each
    // test query's relevant documents. Diversity examples derive both
    // per window by clustering.
    let fairness_data = if needs_schema && config.objective == Objective::Fairness {
        let (schema, attr_map) = io::read_attributes(require(&config.attributes, "attributes")?)?;
        let qrels = if needs_target {
            Some(io::read_qrels(require(&config.qrels, "qrels")?)?)
        } else {
            None
        };
        Some((schema, attr_map, qrels))
    } else {
        None
    };

    let base_rng = SeededRng::new(config.seed);
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for query in &queries {
        let skip = |reason: String, skipped: &mut Vec<(String, String)>| {
            skipped.push((query.query_id.clone(), reason));
        };

        let similar = index.similar_queries(&query.text, 1, true);
        let Some((example_query, _)) = similar.into_iter().next() else {
            skip("no similar logged query shares a term".to_string(), &mut skipped);
            continue;
        };
        let Some(run) = runs.get(&example_query.query_id) else {
            skip(
                format!("no first-stage run for logged query `{}`", example_query.query_id),
                &mut skipped,
            );
            continue;
        };
        if run.len() < config.window {
            skip(
                format!(
                    "first-stage run for `{}` has {} documents, need {}",
                    example_query.query_id,
                    run.len(),
                    config.window
                ),
                &mut skipped,
            );
            continue;
        }

        // Resolve the window's documents, then wire up the group data the
        // strategy needs: labels on the documents, plus a task target.
        let window_ids: Vec<&str> =
            run.entries().iter().take(config.window).map(|e| e.doc_id.as_str()).collect();
        let mut window_docs = Vec::with_capacity(window_ids.len());
        let mut missing = None;
        for id in &window_ids {
            match corpus.get(*id) {
                Some(doc) => window_docs.push(doc.clone()),
                None => {
                    missing = Some(format!("document `{id}` is not in the corpus"));
                    break;
                }
            }
        }
        if let Some(reason) = missing {
            skip(reason, &mut skipped);
            continue;
        }

        let mut mini_corpus: HashMap<String, Document> = HashMap::new();
        let mut local_schema = None;
        let mut target: Option<CategoricalDistribution> = None;
        match (&fairness_data, needs_schema) {
            (Some((schema, attr_map, qrels)), true) => {
                let mut unlabeled = None;
                for doc in &window_docs {
                    match attr_map.get(&doc.doc_id) {
                        Some(&group) => {
                            mini_corpus
                                .insert(doc.doc_id.clone(), doc.clone().with_attribute(group));
                        }
                        None => {
                            unlabeled = Some(format!("no group label for document `{}`", doc.doc_id));
                            break;
                        }
                    }
                }
                if let Some(reason) = unlabeled {
                    skip(reason, &mut skipped);
                    continue;
                }
                if needs_target {
                    let qrels = qrels.as_ref().expect("loaded when a target is needed");
                    match fairness_target(&query.query_id, qrels, attr_map, schema) {
                        Ok(t) => target = Some(t),
                        Err(reason) => {
                            skip(reason, &mut skipped);
                            continue;
                        }
                    }
                }
                local_schema = Some(schema.clone());
            }
            (None, true) => {
                // Diversity: topics come from clustering the window itself,
                // and the target asks for uniform exposure across them.
                let assignment =
                    agglomerative_cluster(&window_docs, config.cluster_threshold);
                let (labeled, schema) =
                    labels_to_attributes(&assignment, &window_docs).map_err(data)?;
                for doc in labeled {
                    mini_corpus.insert(doc.doc_id.clone(), doc);
                }
                if needs_target {
                    target = Some(uniform_distribution(schema.k()));
                }
                local_schema = Some(schema);
            }
            (_, false) => {
                for doc in &window_docs {
                    mini_corpus.insert(doc.doc_id.clone(), doc.clone());
                }
            }
        }

        let spec = ExampleSpec {
            strategy: config.strategy,
            ordering: config.ordering,
            window: config.window,
            epsilon: config.epsilon,
            target: target.as_ref(),
            schema: local_schema.as_ref(),
            static_example: None,
        };
        let mut rng = base_rng.derive(&query.query_id);
        match build_example(&example_query, run, &mini_corpus, &spec, &mut rng) {
            Ok(example) => {
                records.push(ExampleRecord { test_query_id: query.query_id.clone(), example });
            }
            Err(e) => skip(e.to_string(), &mut skipped),
        }
    }

    io::write_examples(out_path, &records)?;
    Ok(MakeExamplesSummary { built: records.len(), skipped })
}

/// The group distribution of a test query's relevant documents — the
/// per-query exposure target for fairness tasks.
fn fairness_target(
    query_id: &str,
    qrels: &Qrels,
    attr_map: &BTreeMap<String, usize>,
    schema: &crate::types::AttributeSchema,
) -> std::result::Result<CategoricalDistribution, String> {
    let mut relevant = Vec::new();
    for doc_id in qrels.relevant_docs(query_id) {
        let Some(&group) = attr_map.get(doc_id) else {
            return Err(format!("relevant document `{doc_id}` has no group label"));
        };
        relevant.push(Document::new(doc_id, "").with_attribute(group));
    }
    if relevant.is_empty() {
        return Err("no judged-relevant documents to derive a target from".to_string());
    }
    target_distribution(&relevant, schema).map_err(|e| e.to_string())
}

// ─── rerank ──────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct RerankSummary {
    /// Queries written to the output run.
    pub queries: usize,
    pub llm_calls: usize,
    pub repaired_windows: usize,
    /// Queries that kept their first-stage order, with the reason.
    pub fallbacks: Vec<(String, String)>,
}

/// How a per-query failure should be treated at the end of the command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FailureKind {
    /// Credential rejected — aborts the whole command, since every
    /// remaining call would fail the same way.
    Auth,
    /// Endpoint unreachable or persistently erroring.
    Transport,
    /// Anything else (missing demonstration, prompt size mismatch...).
    Other,
}

struct QueryOutcome {
    list: RankedList,
    traces: Vec<WindowTrace>,
    llm_calls: usize,
    repaired_windows: usize,
    fallback: Option<(String, FailureKind)>,
}

/// Re-ranks every test query's first-stage run through the configured
/// chat client and writes a run file (and optionally a transcript of
/// every prompt/response). A query whose chat calls fail keeps its
/// first-stage order, re-scored, and is recorded as a fallback; an
/// authentication failure, or transport failures taking out every
/// query, abort instead.
pub fn cmd_rerank(
    config: &PipelineConfig,
    out_path: &Path,
    transcript_path: Option<&Path>,
) -> Result<RerankSummary> {
    config.validate()?;
    let mode = config.prompt_mode()?;
    let queries = io::read_queries(require(&config.queries, "queries")?)?;
    let corpus = io::read_corpus(require(&config.corpus, "corpus")?)?;
    let runs: HashMap<String, RankedList> =
        io::read_run(require(&config.first_stage_run, "first_stage_run")?)?
            .into_iter()
            .map(|list| (list.query_id.clone(), list))
            .collect();

    let examples: HashMap<String, IclExample> = if config.mode == Mode::Icl {
        io::read_examples(require(&config.examples, "examples")?)?
            .into_iter()
            .map(|record| (record.test_query_id, record.example))
            .collect()
    } else {
        HashMap::new()
    };

    // The oracle mock needs judgments; other clients are query-independent
    // and shared across workers.
    let qrels = if config.client == ClientKind::Oracle {
        Some(io::read_qrels(require(&config.qrels, "qrels")?)?)
    } else {
        None
    };
    let shared: Option<Arc<dyn LlmClient>> = match config.client {
        ClientKind::Http => {
            let api_key = std::env::var(API_KEY_ENV).ok();
            Some(Arc::new(
                HttpLlmClient::new(config.endpoint.clone(), api_key).with_retry(
                    config.http_attempts,
                    Duration::from_millis(config.http_backoff_ms),
                ),
            ))
        }
        ClientKind::Identity => Some(Arc::new(IdentityClient)),
        ClientKind::Reverse => Some(Arc::new(ReversingClient)),
        ClientKind::Oracle | ClientKind::Garbage => None,
    };

    let mut tasks: Vec<&Query> = Vec::new();
    let mut fallback_only: Vec<(String, String)> = Vec::new();
    for query in &queries {
        if runs.contains_key(&query.query_id) {
            tasks.push(query);
        } else {
            fallback_only.push((query.query_id.clone(), "no first-stage run".to_string()));
        }
    }

    let base_rng = SeededRng::new(config.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| usage(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<QueryOutcome> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|query| {
                let first_stage = &runs[&query.query_id];
                // Per-query mock construction stays deterministic because
                // seeds derive from the query id, not from call order.
                let owned: Option<Box<dyn LlmClient>> = match config.client {
                    ClientKind::Oracle => Some(Box::new(OracleClient::for_query(
                        &corpus,
                        qrels.as_ref().expect("loaded for the oracle client"),
                        &query.query_id,
                        config.max_doc_words,
                    ))),
                    ClientKind::Garbage => Some(Box::new(GarbageClient::new(
                        base_rng.derive(&query.query_id).seed(),
                    ))),
                    _ => None,
                };
                let client: &dyn LlmClient = match &owned {
                    Some(boxed) => &**boxed,
                    None => &**shared.as_ref().expect("shared client for this kind"),
                };
                rerank_query(client, query, first_stage, &corpus, &examples, mode, config)
            })
            .collect()
    });

    // Abort on credential failures, or when transport trouble wiped out
    // every single query — a written run would be pure passthrough.
    for outcome in &outcomes {
        if let Some((reason, FailureKind::Auth)) = &outcome.fallback {
            return Err(PipelineError::Transport(format!(
                "authentication failed (query `{}`): {reason}",
                outcome.list.query_id
            )));
        }
    }
    let all_failed = !outcomes.is_empty() && outcomes.iter().all(|o| o.fallback.is_some());
    if all_failed {
        if let Some((reason, _)) = outcomes
            .iter()
            .filter_map(|o| o.fallback.as_ref())
            .find(|(_, kind)| *kind == FailureKind::Transport)
        {
            return Err(PipelineError::Transport(format!(
                "every query failed; first transport error: {reason}"
            )));
        }
    }

    let lists: Vec<RankedList> = outcomes.iter().map(|o| o.list.clone()).collect();
    io::write_run(out_path, &lists)?;
    if let Some(path) = transcript_path {
        let traces: Vec<WindowTrace> =
            outcomes.iter().flat_map(|o| o.traces.iter().cloned()).collect();
        io::write_transcript(path, &traces)?;
    }

    let mut fallbacks = fallback_only;
    fallbacks.extend(
        outcomes
            .iter()
            .filter_map(|o| {
                o.fallback
                    .as_ref()
                    .map(|(reason, _)| (o.list.query_id.clone(), reason.clone()))
            }),
    );
    Ok(RerankSummary {
        queries: lists.len(),
        llm_calls: outcomes.iter().map(|o| o.llm_calls).sum(),
        repaired_windows: outcomes.iter().map(|o| o.repaired_windows).sum(),
        fallbacks,
    })
}

fn rerank_query(
    client: &dyn LlmClient,
    query: &Query,
    first_stage: &RankedList,
    corpus: &HashMap<String, Document>,
    examples: &HashMap<String, IclExample>,
    mode: PromptMode,
    config: &PipelineConfig,
) -> QueryOutcome {
    let fallback = |reason: String, kind: FailureKind| {
        let mut list = first_stage.clone().with_synthetic_scores();
        list.tag = config.tag.clone();
        QueryOutcome {
            list,
            traces: Vec::new(),
            llm_calls: 0,
            repaired_windows: 0,
            fallback: Some((reason, kind)),
        }
    };

    let example = examples.get(&query.query_id).cloned();
    if mode == PromptMode::Icl && example.is_none() {
        return fallback("no demonstration for this query".to_string(), FailureKind::Other);
    }
    let params = RerankParams {
        mode,
        example,
        window: config.window,
        stride: config.stride,
        depth: config.depth,
        model: config.model.clone(),
        temperature: config.temperature,
        seed: Some(config.seed),
        max_doc_words: config.max_doc_words,
        tag: config.tag.clone(),
    };
    match sliding_window_rerank(client, query, first_stage, corpus, &params) {
        Ok(outcome) => QueryOutcome {
            list: outcome.list,
            traces: outcome.traces,
            llm_calls: outcome.llm_calls,
            repaired_windows: outcome.repaired_windows,
            fallback: None,
        },
        Err(e) => {
            let kind = match &e {
                WindowError::Client { source: LlmError::Auth(_), .. } => FailureKind::Auth,
                WindowError::Client { source: LlmError::Transport(_), .. } => {
                    FailureKind::Transport
                }
                _ => FailureKind::Other,
            };
            fallback(e.to_string(), kind)
        }
    }
}

// ─── evaluate ────────────────────────────────────────────────────────────────

/// A paired significance comparison for one metric. `t` and `p` are
/// absent when the test is undefined (fewer than two shared queries, or
/// a constant nonzero difference), with `note` saying why. Positive `t`
/// means the evaluated run scored higher than the baseline.
#[derive(Debug, Clone, Serialize)]
pub struct SignificanceEntry {
    pub metric: String,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug)]
pub struct EvaluateSummary {
    pub report: MetricReport,
    /// Run queries with no judgments, skipped from the report.
    pub skipped: Vec<String>,
    /// Per-query oddities that silently dropped a metric.
    pub warnings: Vec<String>,
    /// One entry per metric when a baseline run was supplied.
    pub significance: Vec<SignificanceEntry>,
}

/// Scores a run against the judgments and writes a per-query +means
/// report. Which metrics appear depends on the objective: relevance gets
/// the rank-discounted relevance score alone; fairness adds group
/// exposure alignment and its product with relevance; diversity adds the
/// redundancy-penalized score (when subtopic judgments exist) and, when
/// a cluster cache is configured, exposure alignment against a uniform
/// topic target. With a baseline run, each metric gets a paired t-test
/// over the queries both runs scored.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    run_path: &Path,
    baseline_path: Option<&Path>,
    tsv_out: Option<&Path>,
    json_out: Option<&Path>,
) -> Result<EvaluateSummary> {
    config.validate()?;
    let qrels = io::read_qrels(require(&config.qrels, "qrels")?)?;
    let eval_data = EvalData::load(config, &qrels)?;

    let mut warnings = Vec::new();
    let (per_query, skipped) =
        score_run(config, run_path, &qrels, &eval_data, &mut warnings)?;
    let report = MetricReport::from_per_query(per_query);

    let mut significance = Vec::new();
    if let Some(baseline) = baseline_path {
        let (baseline_per_query, _) =
            score_run(config, baseline, &qrels, &eval_data, &mut warnings)?;
        let baseline_report = MetricReport::from_per_query(baseline_per_query);
        significance = compare_reports(&report, &baseline_report);
    }

    if let Some(path) = tsv_out {
        io::write_text(path, &report.to_tsv())?;
    }
    if let Some(path) = json_out {
        io::write_text(path, &report.to_json())?;
    }
    Ok(EvaluateSummary { report, skipped, warnings, significance })
}

/// Objective-dependent evaluation inputs, loaded once per command.
struct EvalData {
    /// Fairness: the doc→group map plus each query's exposure target.
    fairness: Option<(BTreeMap<String, usize>, BTreeMap<String, CategoricalDistribution>)>,
    /// Diversity: per-query topic assignments from the cluster cache.
    clusters: Option<BTreeMap<String, ClusterAssignment>>,
}

impl EvalData {
    fn load(config: &PipelineConfig, qrels: &Qrels) -> Result<Self> {
        let mut fairness = None;
        let mut clusters = None;
        match config.objective {
            Objective::Fairness => {
                let (schema, attr_map) =
                    io::read_attributes(require(&config.attributes, "attributes")?)?;
                let mut targets = BTreeMap::new();
                for query_id in qrels.queries() {
                    if let Ok(target) = fairness_target(query_id, qrels, &attr_map, &schema) {
                        targets.insert(query_id.to_string(), target);
                    }
                }
                fairness = Some((attr_map, targets));
            }
            Objective::Diversity => {
                if let Some(path) = &config.clusters {
                    clusters = Some(io::read_clusters(path)?);
                }
            }
            Objective::RelevanceOnly => {}
        }
        Ok(EvalData { fairness, clusters })
    }
}

#[allow(clippy::type_complexity)]
fn score_run(
    config: &PipelineConfig,
    run_path: &Path,
    qrels: &Qrels,
    eval_data: &EvalData,
    warnings: &mut Vec<String>,
) -> Result<(BTreeMap<String, BTreeMap<String, f64>>, Vec<String>)> {
    let cutoff = config.cutoff;
    let mut per_query: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for run in io::read_run(run_path)? {
        let query_id = run.query_id.clone();
        if !qrels.is_judged(&query_id) {
            skipped.push(query_id);
            continue;
        }
        let mut metrics = BTreeMap::new();
        metrics.insert(format!("ndcg@{cutoff}"), ndcg_at(&run, qrels, cutoff));

        if let Some((attr_map, targets)) = &eval_data.fairness {
            match targets.get(&query_id) {
                Some(target) => {
                    let awrf = awrf_at(&run, attr_map, target, cutoff).map_err(|e| {
                        data(format!("{}: query `{query_id}`: {e}", run_path.display()))
                    })?;
                    let m1 = m1_at(&run, qrels, attr_map, target, cutoff).map_err(|e| {
                        data(format!("{}: query `{query_id}`: {e}", run_path.display()))
                    })?;
                    metrics.insert(format!("awrf@{cutoff}"), awrf);
                    metrics.insert(format!("m1@{cutoff}"), m1);
                }
                None => warnings.push(format!(
                    "query `{query_id}`: no exposure target (no labeled relevant documents); \
                     group metrics skipped"
                )),
            }
        }

        if qrels.has_subtopics() && config.objective == Objective::Diversity {
            let value = alpha_ndcg_at(&run, qrels, config.alpha, cutoff).map_err(|e| {
                data(format!("{}: query `{query_id}`: {e}", run_path.display()))
            })?;
            metrics.insert(format!("alpha-ndcg@{cutoff}"), value);
        }
        if let Some(clusters) = &eval_data.clusters {
            match clusters.get(&query_id) {
                Some(assignment) if assignment.k() > 0 => {
                    let attr_map: BTreeMap<String, usize> =
                        assignment.iter().map(|(d, l)| (d.to_string(), l)).collect();
                    let target = uniform_distribution(assignment.k());
                    let awrf = awrf_at(&run, &attr_map, &target, cutoff).map_err(|e| {
                        data(format!("{}: query `{query_id}`: {e}", run_path.display()))
                    })?;
                    metrics.insert(format!("awrf@{cutoff}"), awrf);
                    metrics.insert(
                        format!("m1@{cutoff}"),
                        metrics[&format!("ndcg@{cutoff}")] * awrf,
                    );
                }
                _ => warnings.push(format!(
                    "query `{query_id}`: no cluster assignments; topic exposure skipped"
                )),
            }
        }
        per_query.insert(query_id, metrics);
    }
    Ok((per_query, skipped))
}

/// Pairs two reports metric by metric over their shared queries.
fn compare_reports(report: &MetricReport, baseline: &MetricReport) -> Vec<SignificanceEntry> {
    let mut names: Vec<String> = report.means.keys().cloned().collect();
    for name in baseline.means.keys() {
        if !names.contains(name) {
            names.push(name.clone());
        }
    }
    names.sort();

    let mut entries = Vec::new();
    for metric in names {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (query_id, metrics) in &report.per_query {
            if let (Some(x), Some(y)) = (
                metrics.get(&metric),
                baseline.per_query.get(query_id).and_then(|m| m.get(&metric)),
            ) {
                a.push(*x);
                b.push(*y);
            }
        }
        let entry = match paired_t_test(&a, &b) {
            Ok((t, p)) => {
                SignificanceEntry { metric, t: Some(t), p: Some(p), note: None }
            }
            Err(MetricsError::TooFewPairs(n)) => SignificanceEntry {
                metric,
                t: None,
                p: None,
                note: Some(format!("only {n} shared quer{}", if n == 1 { "y" } else { "ies" })),
            },
            Err(MetricsError::DegenerateVariance(d)) => SignificanceEntry {
                metric,
                t: None,
                p: None,
                note: Some(format!("constant difference of {d:.6} across queries")),
            },
            Err(e) => SignificanceEntry { metric, t: None, p: None, note: Some(e.to_string()) },
        };
        entries.push(entry);
    }
    entries
}

// ─── mmr ─────────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct MmrSummary {
    pub queries: usize,
    pub runs_written: Vec<PathBuf>,
}

/// Re-ranks first-stage runs with the greedy relevance–redundancy
/// trade-off. With `sweep`, writes eleven runs for trade-off weights
/// 0.0, 0.1, ..., 1.0, deriving each file name from `out_path`.
pub fn cmd_mmr(config: &PipelineConfig, out_path: &Path, sweep: bool) -> Result<MmrSummary> {
    config.validate()?;
    let corpus = io::read_corpus(require(&config.corpus, "corpus")?)?;
    let runs = select_runs(config, require(&config.first_stage_run, "first_stage_run")?)?;

    let lambdas: Vec<f64> = if sweep {
        (0..=10).map(|i| f64::from(i) / 10.0).collect()
    } else {
        vec![config.mmr_lambda]
    };

    let mut runs_written = Vec::new();
    for lambda in lambdas {
        let mmr_config = MmrConfig { lambda, depth: config.depth };
        let mut lists = Vec::with_capacity(runs.len());
        for run in &runs {
            let mut list = mmr_rerank(run, &corpus, &mmr_config).map_err(data)?;
            list.tag = if sweep {
                format!("{}-lambda-{lambda:.1}", config.tag)
            } else {
                config.tag.clone()
            };
            lists.push(list);
        }
        let path = if sweep { lambda_path(out_path, lambda) } else { out_path.to_path_buf() };
        io::write_run(&path, &lists)?;
        runs_written.push(path);
    }
    Ok(MmrSummary { queries: runs.len(), runs_written })
}

/// `runs/out.run` → `runs/out-lambda-0.3.run`.
fn lambda_path(out_path: &Path, lambda: f64) -> PathBuf {
    let stem = out_path.file_stem().and_then(|s| s.to_str()).unwrap_or("mmr");
    let extension = out_path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| format!(".{e}"))
        .unwrap_or_default();
    out_path.with_file_name(format!("{stem}-lambda-{lambda:.1}{extension}"))
}

// ─── cluster ─────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct ClusterSummary {
    pub queries: usize,
    pub clusters_total: usize,
}

/// Clusters each query's considered documents into topics and writes the
/// per-query assignments as a cache for diversity evaluation.
pub fn cmd_cluster(config: &PipelineConfig, out_path: &Path) -> Result<ClusterSummary> {
    config.validate()?;
    let corpus = io::read_corpus(require(&config.corpus, "corpus")?)?;
    let runs = select_runs(config, require(&config.first_stage_run, "first_stage_run")?)?;

    let mut assignments = Vec::with_capacity(runs.len());
    for run in &runs {
        let mut docs = Vec::new();
        for entry in run.entries().iter().take(config.depth) {
            let doc = corpus.get(&entry.doc_id).ok_or_else(|| {
                data(format!(
                    "document `{}` (query `{}`) is not in the corpus",
                    entry.doc_id, run.query_id
                ))
            })?;
            docs.push(doc.clone());
        }
        assignments
            .push(agglomerative_cluster(&docs, config.cluster_threshold).for_query(&run.query_id));
    }
    io::write_clusters(out_path, &assignments)?;
    Ok(ClusterSummary {
        queries: assignments.len(),
        clusters_total: assignments.iter().map(ClusterAssignment::k).sum(),
    })
}

/// Reads a run file, keeping only the configured test queries (in run
/// order) when a query table is configured; otherwise every run.
fn select_runs(config: &PipelineConfig, run_path: &Path) -> Result<Vec<RankedList>> {
    let runs = io::read_run(run_path)?;
    match &config.queries {
        Some(path) => {
            let keep: std::collections::HashSet<String> =
                io::read_queries(path)?.into_iter().map(|q| q.query_id).collect();
            Ok(runs.into_iter().filter(|r| keep.contains(&r.query_id)).collect())
        }
        None => Ok(runs),
    }
}
