//! Demonstration-guided list-wise reranking for retrieval pipelines.
//!
//! The crate turns a first-stage retrieval run into a reranked run by
//! prompting a chat-completion model with sliding windows of candidate
//! passages. What sets it apart from plain prompt-based reranking is the
//! construction of the in-context demonstration: a similar query is pulled
//! from a query log, its candidates are reordered by a greedy
//! KL-divergence rule so the demonstrated ranking tracks a target group
//! distribution (fairness) or a uniform topic distribution (diversity),
//! and that ordered example is spliced into every window prompt.
//!
//! Module map:
//! - [`types`]: documents, queries, attribute schemas, canonical ranked lists
//! - [`rng`]: seeded, platform-independent randomness
//! - [`distribution`]: categorical targets, prefix counts, smoothed KL
//! - [`example_builder`]: greedy target-tracking orderings and demonstrations
//! - [`query_log`]: BM25 index over a query log for similar-query lookup
//! - [`topic_cluster`]: complete-linkage Jaccard clustering into topics
//! - [`llm_rerank`]: prompt rendering, permutation parsing, sliding windows
//! - [`mmr`]: maximal-marginal-relevance reranking baseline
//! - [`metrics`]: nDCG, alpha-nDCG, AWRF, their combination, paired t-tests
//! - [`io`]: run files, qrels, corpora, examples, transcripts
//! - [`pipeline`]: end-to-end commands shared by the CLI

pub mod distribution;
pub mod example_builder;
pub mod io;
pub mod llm_rerank;
pub mod metrics;
pub mod mmr;
pub mod pipeline;
pub mod query_log;
pub mod rng;
pub mod topic_cluster;
pub mod types;

pub use rng::SeededRng;
pub use types::{AttributeSchema, Document, Query, RankedEntry, RankedList};
