//! Deterministic in-process clients.
//!
//! These stand in for a live endpoint in tests and offline runs: they
//! parse the window out of the rendered prompt and answer with a
//! ranking by rule (keep order, reverse it, sort by known grades, or
//! emit deliberately broken text to exercise the repair path).

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::client::{LlmClient, LlmError, LlmRequest, LlmResponse};
use super::permutation::format_permutation;
use super::prompt::clean_text;
use crate::metrics::Qrels;
use crate::types::Document;

/// Recovers the test block's `(display index, passage text)` pairs from
/// a rendered prompt. Only lines after the final "relevance to query:"
/// marker count, so a demonstration block's passages are never mistaken
/// for the window being ranked.
pub(crate) fn window_passages(prompt: &str) -> Vec<(usize, String)> {
    const MARKER: &str = "Rank the passages based on their relevance to query:";
    let tail = match prompt.rfind(MARKER) {
        Some(at) => &prompt[at..],
        None => prompt,
    };
    let mut passages = Vec::new();
    for line in tail.lines() {
        let Some(rest) = line.strip_prefix('[') else { continue };
        let Some((number, text)) = rest.split_once("] ") else { continue };
        if let Ok(index) = number.parse::<usize>() {
            passages.push((index, text.to_string()));
        }
    }
    passages
}

fn first_user_prompt(request: &LlmRequest) -> &str {
    request
        .messages
        .iter()
        .find(|m| m.role == "user")
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

/// Answers every window with its current order: `[1] > [2] > … > [m]`.
/// Re-ranking through this client is a no-op by construction.
#[derive(Debug, Default)]
pub struct IdentityClient;

impl LlmClient for IdentityClient {
    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let m = window_passages(first_user_prompt(request)).len();
        let order: Vec<usize> = (1..=m).collect();
        Ok(LlmResponse { content: format_permutation(&order), usage: None })
    }
}

/// Answers every window with its reverse: `[m] > … > [1]`.
#[derive(Debug, Default)]
pub struct ReversingClient;

impl LlmClient for ReversingClient {
    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let m = window_passages(first_user_prompt(request)).len();
        let order: Vec<usize> = (1..=m).rev().collect();
        Ok(LlmResponse { content: format_permutation(&order), usage: None })
    }
}

/// Ranks passages by hidden relevance grades keyed on (cleaned) passage
/// text — a perfect reranker for fixtures whose texts are distinct.
/// Unknown passages grade 0; equal grades keep their window order.
#[derive(Debug, Default)]
pub struct OracleClient {
    grades_by_text: HashMap<String, u32>,
}

impl OracleClient {
    pub fn new(grades_by_text: HashMap<String, u32>) -> Self {
        OracleClient { grades_by_text }
    }

    /// Builds the text→grade table for one query from judged documents.
    /// Texts are keyed exactly as they will appear in prompts, i.e.
    /// whitespace-normalized and capped at `max_doc_words`. Colliding
    /// texts keep the higher grade.
    pub fn for_query(
        corpus: &HashMap<String, Document>,
        qrels: &Qrels,
        query_id: &str,
        max_doc_words: usize,
    ) -> Self {
        let mut grades_by_text: HashMap<String, u32> = HashMap::new();
        for doc in corpus.values() {
            let grade = qrels.grade(query_id, &doc.doc_id);
            let key = clean_text(&doc.text, max_doc_words);
            let slot = grades_by_text.entry(key).or_insert(0);
            *slot = (*slot).max(grade);
        }
        OracleClient { grades_by_text }
    }
}

impl LlmClient for OracleClient {
    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut passages = window_passages(first_user_prompt(request));
        // Stable sort: equal grades preserve the current window order.
        passages.sort_by_key(|(_, text)| {
            std::cmp::Reverse(self.grades_by_text.get(text).copied().unwrap_or(0))
        });
        let order: Vec<usize> = passages.into_iter().map(|(index, _)| index).collect();
        Ok(LlmResponse { content: format_permutation(&order), usage: None })
    }
}

/// Emits deterministic junk — empty strings, refusals, duplicate or
/// out-of-range identifiers, overflowing numbers — cycling by an owned
/// seeded stream. Every variant is guaranteed to need repair, so runs
/// through this client exercise the fallback path on every window.
pub struct GarbageClient {
    rng: Mutex<crate::rng::SeededRng>,
}

impl GarbageClient {
    pub fn new(seed: u64) -> Self {
        GarbageClient { rng: Mutex::new(crate::rng::SeededRng::new(seed)) }
    }
}

impl LlmClient for GarbageClient {
    fn chat(&self, _request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut rng = self.rng.lock().expect("garbage rng lock");
        let content = match rng.below(6) {
            0 => String::new(),
            1 => "I'm sorry, I cannot rank these passages.".to_string(),
            // A duplicate is a repair for every window size.
            2 => "[1] > [1]".to_string(),
            // [0] is always out of range for 1-based identifiers.
            3 => "[0] > [42000]".to_string(),
            4 => "The ranking might be [2] maybe [2] or [99999999999999999999].".to_string(),
            _ => {
                let words: Vec<String> = (0..3 + rng.below(8))
                    .map(|_| format!("blah{}", rng.below(100)))
                    .collect();
                words.join(" ")
            }
        };
        Ok(LlmResponse { content, usage: None })
    }
}

/// Replays a fixed list of responses in order and records every request
/// it saw; asking for more responses than were scripted is a transport
/// error. Useful for driving exact window-by-window scenarios.
pub struct ScriptedClient {
    script: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<LlmRequest>>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedClient {
            script: Mutex::new(responses.into_iter().map(Into::into).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<LlmRequest> {
        self.requests.lock().expect("request log lock").clone()
    }
}

impl LlmClient for ScriptedClient {
    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        self.requests.lock().expect("request log lock").push(request.clone());
        let next = self.script.lock().expect("script lock").pop_front();
        match next {
            Some(content) => Ok(LlmResponse { content, usage: None }),
            None => Err(LlmError::Transport("scripted client ran out of responses".to_string())),
        }
    }
}
