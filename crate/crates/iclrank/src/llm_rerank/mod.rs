//! List-wise LLM re-ranking: prompt rendering, permutation parsing with
//! repair, chat-API clients (HTTP plus deterministic in-process mocks),
//! and the sliding-window orchestration that ties them together.

pub mod client;
pub mod mock;
pub mod permutation;
pub mod prompt;
pub mod window;

pub use client::{ChatMessage, HttpLlmClient, LlmClient, LlmError, LlmRequest, LlmResponse};
pub use mock::{GarbageClient, IdentityClient, OracleClient, ReversingClient, ScriptedClient};
pub use permutation::{format_permutation, parse_permutation, Permutation};
pub use prompt::{
    clean_text, render_prompt, PaoObjective, PromptError, PromptMode, PromptSpec, DEFAULT_HEADER,
    DEFAULT_MAX_DOC_WORDS,
};
pub use window::{
    expected_llm_calls, rerank_window, sliding_window_rerank, RerankOutcome, RerankParams,
    WindowError, WindowTrace, DEFAULT_DEPTH, DEFAULT_STRIDE, DEFAULT_WINDOW,
};
