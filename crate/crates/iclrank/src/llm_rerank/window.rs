//! Sliding-window list-wise re-ranking.
//!
//! The top `depth` documents of a first-stage run are revisited in
//! overlapping windows from the bottom of the list toward the top, so a
//! strong document buried deep can ride the overlap upward across
//! successive windows. Each window is one chat call: render the prompt,
//! parse (and if needed repair) the returned permutation, and reorder
//! that slice in place. Documents beyond `depth` keep their order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ChatMessage, LlmClient, LlmError, LlmRequest};
use super::permutation::{parse_permutation, Permutation};
use super::prompt::{render_prompt, PromptError, PromptMode, PromptSpec, DEFAULT_HEADER};
use crate::example_builder::IclExample;
use crate::types::{Document, Query, RankedEntry, RankedList};

pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_STRIDE: usize = 10;
pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window/stride must satisfy window >= stride >= 1, got window {window}, stride {stride}")]
    InvalidGeometry { window: usize, stride: usize },
    #[error("run is for query `{run}` but the query given is `{query}`")]
    QueryMismatch { run: String, query: String },
    #[error("document `{0}` appears in the run but not in the corpus")]
    UnknownDocument(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Chat(#[from] LlmError),
    #[error("window starting at {window_start}: {source}")]
    Client { window_start: usize, source: LlmError },
}

/// Everything fixed across one query's windows.
#[derive(Debug, Clone)]
pub struct RerankParams {
    pub mode: PromptMode,
    /// The demonstration shown in every window (Icl mode only). Its
    /// length must equal the actual window size.
    pub example: Option<IclExample>,
    pub window: usize,
    pub stride: usize,
    pub depth: usize,
    pub model: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_doc_words: usize,
    /// Run tag stamped on the output list.
    pub tag: String,
}

impl Default for RerankParams {
    fn default() -> Self {
        RerankParams {
            mode: PromptMode::ZeroShot,
            example: None,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            depth: DEFAULT_DEPTH,
            model: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            seed: Some(42),
            max_doc_words: super::prompt::DEFAULT_MAX_DOC_WORDS,
            tag: "reranked".to_string(),
        }
    }
}

/// One chat call's audit record; serialized as a transcript line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowTrace {
    pub query_id: String,
    pub window_start: usize,
    pub prompt: String,
    pub raw_response: String,
    pub repaired: bool,
}

#[derive(Debug)]
pub struct RerankOutcome {
    pub list: RankedList,
    pub traces: Vec<WindowTrace>,
    pub llm_calls: usize,
    pub repaired_windows: usize,
}

/// Renders one window's prompt, makes one chat call, and parses the
/// answer (repairing it if needed). Returns the permutation — raw
/// response included — plus the exact prompt sent, for transcripts.
pub fn rerank_window(
    client: &dyn LlmClient,
    spec: &PromptSpec<'_>,
    model: &str,
    temperature: f64,
    seed: Option<u64>,
) -> Result<(Permutation, String), WindowError> {
    let prompt = render_prompt(spec)?;
    let request = LlmRequest {
        model: model.to_string(),
        messages: vec![ChatMessage::user(prompt.clone())],
        temperature,
        seed,
    };
    let response = client.chat(&request)?;
    let permutation = parse_permutation(&response.content, spec.window_docs.len());
    Ok((permutation, prompt))
}

/// Window start positions, bottom of the considered list first. With
/// `depth <= window` there is a single window at 0; otherwise starts
/// step up by `stride` from `depth - window` and always finish at 0.
fn window_starts(depth: usize, window: usize, stride: usize) -> Vec<usize> {
    if depth <= window {
        return vec![0];
    }
    let mut starts = vec![depth - window];
    while *starts.last().expect("non-empty") > 0 {
        let next = starts.last().unwrap().saturating_sub(stride);
        starts.push(next);
    }
    starts
}

/// Re-ranks `first_stage`'s top `depth` documents for `query` with one
/// chat call per window. The output holds every input document: the
/// re-ranked block first, the untouched tail after it, with fresh
/// descending scores (`depth - position`) so canonical ordering by
/// score reproduces exactly this order.
pub fn sliding_window_rerank(
    client: &dyn LlmClient,
    query: &Query,
    first_stage: &RankedList,
    corpus: &HashMap<String, Document>,
    params: &RerankParams,
) -> Result<RerankOutcome, WindowError> {
    if params.stride == 0 || params.window < params.stride {
        return Err(WindowError::InvalidGeometry {
            window: params.window,
            stride: params.stride,
        });
    }
    if query.query_id != first_stage.query_id {
        return Err(WindowError::QueryMismatch {
            run: first_stage.query_id.clone(),
            query: query.query_id.clone(),
        });
    }
    let depth = params.depth.min(first_stage.len());
    let mut entries: Vec<RankedEntry> = first_stage.entries().to_vec();

    // Resolve every considered document's text up front so a missing
    // corpus entry fails before any chat call is spent.
    let mut texts: Vec<String> = Vec::with_capacity(depth);
    for entry in &entries[..depth] {
        let doc = corpus
            .get(&entry.doc_id)
            .ok_or_else(|| WindowError::UnknownDocument(entry.doc_id.clone()))?;
        texts.push(doc.text.clone());
    }

    let mut traces = Vec::new();
    let mut llm_calls = 0;
    let mut repaired_windows = 0;
    for start in window_starts(depth, params.window, params.stride) {
        let end = (start + params.window).min(depth);
        let m = end - start;
        if m < 2 {
            continue; // nothing to reorder
        }
        let window_docs: Vec<(usize, String)> =
            (start..end).map(|i| (i - start + 1, texts[i].clone())).collect();
        let spec = PromptSpec {
            header: DEFAULT_HEADER,
            mode: params.mode,
            example: params.example.as_ref(),
            window_docs: &window_docs,
            test_query: &query.text,
            max_doc_words: params.max_doc_words,
        };
        let (permutation, prompt) =
            rerank_window(client, &spec, &params.model, params.temperature, params.seed)
                .map_err(|error| match error {
                    WindowError::Chat(source) => WindowError::Client { window_start: start, source },
                    other => other,
                })?;
        llm_calls += 1;
        repaired_windows += usize::from(permutation.repaired);

        let old_entries: Vec<RankedEntry> = entries[start..end].to_vec();
        let old_texts: Vec<String> = texts[start..end].to_vec();
        for (offset, &display) in permutation.order.iter().enumerate() {
            entries[start + offset] = old_entries[display - 1].clone();
            texts[start + offset] = old_texts[display - 1].clone();
        }
        traces.push(WindowTrace {
            query_id: query.query_id.clone(),
            window_start: start,
            prompt,
            raw_response: permutation.raw,
            repaired: permutation.repaired,
        });
    }

    for (position, entry) in entries.iter_mut().enumerate() {
        entry.score = depth as f64 - position as f64;
    }
    let list = RankedList::from_ordered(first_stage.query_id.clone(), &params.tag, entries)
        .expect("reordering keeps doc ids unique and scores finite");
    Ok(RerankOutcome { list, traces, llm_calls, repaired_windows })
}

/// The number of chat calls one query costs: a single window when the
/// considered list fits inside one, otherwise one plus a stride step per
/// remaining span. Windows of fewer than two documents are skipped, so
/// degenerate geometries cost zero.
pub fn expected_llm_calls(depth: usize, window: usize, stride: usize) -> usize {
    if depth <= window {
        return usize::from(depth >= 2);
    }
    if window < 2 {
        return 0;
    }
    1 + (depth - window).div_ceil(stride)
}
