//! Renders the list-wise ranking prompt.
//!
//! The prompt is a single user message with up to three blocks separated
//! by blank lines: a fixed header, an optional demonstration block (a
//! similar query, its passages, and their target ordering), and the test
//! block listing the passages to re-rank. The wording is frozen — tests
//! compare full renders byte for byte — because list-wise rankers are
//! notoriously sensitive to prompt drift.

use thiserror::Error;

use super::permutation::format_permutation;
use crate::example_builder::IclExample;

/// Fixed system-style header line (kept verbatim from the common
/// list-wise ranking prompt so results are comparable across tools).
pub const DEFAULT_HEADER: &str = "You are RankGPT, an intelligent assistant that can rank \
                                  passages based on their relevancy to the query.";

/// Default per-passage length cap, in whitespace-delimited words.
pub const DEFAULT_MAX_DOC_WORDS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("demonstration mode needs an example, none was provided")]
    MissingExample,
    #[error("example has {example_len} passages but the window has {window_len}")]
    ExampleWindowMismatch { example_len: usize, window_len: usize },
}

/// Auxiliary ranking objective expressed as an instruction instead of a
/// demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaoObjective {
    Fairness,
    Diversity,
}

impl PaoObjective {
    /// The instruction sentence, without its terminal period.
    pub fn instruction(self) -> &'static str {
        match self {
            PaoObjective::Fairness => {
                "Rank the passages based on their fairness, ensuring that ranked results do not \
                 discriminate against certain individuals, groups, or entities"
            }
            PaoObjective::Diversity => {
                "Rank the passages based on their topical diversity, ensuring that ranked \
                 results contribute to different topics uniformly"
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    /// Header + test block only.
    ZeroShot,
    /// Header + demonstration block + test block.
    Icl,
    /// Like `ZeroShot`, but the closing instruction asks for the
    /// auxiliary objective instead of relevance.
    Pao(PaoObjective),
}

/// Everything needed to render one window's prompt. `window_docs` pairs
/// each passage's display number (1-based) with its raw text; texts are
/// whitespace-normalized and capped at `max_doc_words` during rendering.
#[derive(Debug, Clone)]
pub struct PromptSpec<'a> {
    pub header: &'a str,
    pub mode: PromptMode,
    pub example: Option<&'a IclExample>,
    pub window_docs: &'a [(usize, String)],
    pub test_query: &'a str,
    pub max_doc_words: usize,
}

/// Collapses all whitespace runs to single spaces and keeps at most
/// `max_words` words (0 means no cap). Applied to every passage before
/// it enters a prompt, so multi-line corpus text cannot break the
/// line-oriented template.
pub fn clean_text(text: &str, max_words: usize) -> String {
    let words = text.split_whitespace();
    if max_words == 0 {
        words.collect::<Vec<_>>().join(" ")
    } else {
        words.take(max_words).collect::<Vec<_>>().join(" ")
    }
}

fn example_block(example: &IclExample, max_doc_words: usize) -> String {
    let m = example.documents.len();
    let query = clean_text(&example.example_query.text, 0);
    let mut block = format!(
        "I will provide you with {m} passages, each indicated by number identifier [ ]. \
         As an example, the first {m} passages are ranked based on their relevance to query: \
         {query}\n"
    );
    for (i, doc) in example.documents.iter().enumerate() {
        block.push_str(&format!("[{}] {}\n", i + 1, clean_text(&doc.text, max_doc_words)));
    }
    block.push_str(&format!(
        "The {m} passages above are ranked based on their relevance to the search query.\n"
    ));
    block.push_str(&format!("Output: {}", format_permutation(&example.target_order)));
    block
}

fn closing_instruction(mode: PromptMode, m: usize) -> String {
    const ORDER: &str = "The passages should be listed in descending order using identifiers.";
    const FORMAT: &str = "The output format should be [ ] > [ ], e.g., [1] > [2].";
    match mode {
        PromptMode::ZeroShot | PromptMode::Icl => format!(
            "Rank the {m} passages above based on their relevance to the search query. \
             {ORDER} The most relevant passages should be listed first. {FORMAT}"
        ),
        // The auxiliary objective replaces the relevance request, and the
        // relevance-specific "most relevant first" sentence goes with it.
        PromptMode::Pao(objective) => format!("{}. {ORDER} {FORMAT}", objective.instruction()),
    }
}

/// Renders the full prompt. In `Icl` mode the example must be present
/// and exactly as long as the window (the demonstrated ordering must be
/// over the same number of passages the model is asked to rank).
pub fn render_prompt(spec: &PromptSpec<'_>) -> Result<String, PromptError> {
    let example = match spec.mode {
        PromptMode::Icl => {
            let example = spec.example.ok_or(PromptError::MissingExample)?;
            if example.documents.len() != spec.window_docs.len() {
                return Err(PromptError::ExampleWindowMismatch {
                    example_len: example.documents.len(),
                    window_len: spec.window_docs.len(),
                });
            }
            Some(example)
        }
        _ => None,
    };

    let m = spec.window_docs.len();
    let test_query = clean_text(spec.test_query, 0);
    let mut test_block =
        format!("Rank the passages based on their relevance to query: {test_query}\n");
    for (index, text) in spec.window_docs {
        test_block.push_str(&format!("[{index}] {}\n", clean_text(text, spec.max_doc_words)));
    }
    test_block.push_str(&closing_instruction(spec.mode, m));

    let mut prompt = String::from(spec.header);
    prompt.push_str("\n\n");
    if let Some(example) = example {
        prompt.push_str(&example_block(example, spec.max_doc_words));
        prompt.push_str("\n\n");
    }
    prompt.push_str(&test_block);
    Ok(prompt)
}
