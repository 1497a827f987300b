//! Maximal Marginal Relevance: a lexical diversity re-ranker used as a
//! non-LLM baseline.
//!
//! Documents are picked greedily; each step selects the candidate
//! maximizing `lambda * relevance − (1 − lambda) * redundancy`, where
//! relevance is the first-stage score min-max normalized over the
//! re-ranked depth and redundancy is the maximum Jaccard token-set
//! similarity to any already-selected document. `lambda = 1` reproduces
//! the first-stage order; `lambda = 0` ignores relevance entirely.

use std::collections::HashMap;

use thiserror::Error;

use crate::topic_cluster::jaccard_distance;
use crate::types::{Document, RankedList};

#[derive(Debug, Error, PartialEq)]
pub enum MmrError {
    #[error("lambda must be within [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("document `{0}` appears in the run but not in the corpus")]
    UnknownDocument(String),
}

pub type Result<T> = std::result::Result<T, MmrError>;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrConfig {
    /// Trade-off between relevance (1) and diversity (0).
    pub lambda: f64,
    /// How many documents from the head of the run are re-ranked; the
    /// output contains exactly `min(depth, run length)` documents.
    pub depth: usize,
}

impl Default for MmrConfig {
    fn default() -> Self {
        MmrConfig { lambda: DEFAULT_LAMBDA, depth: DEFAULT_DEPTH }
    }
}

/// Re-ranks the top `config.depth` documents of `first_stage` by greedy
/// MMR selection and returns them with fresh descending scores. Ties in
/// the MMR objective keep the earlier first-stage document, so the
/// selection is deterministic and `lambda = 1` is an exact identity on
/// the considered prefix.
pub fn mmr_rerank(
    first_stage: &RankedList,
    corpus: &HashMap<String, Document>,
    config: &MmrConfig,
) -> Result<RankedList> {
    if !(0.0..=1.0).contains(&config.lambda) {
        return Err(MmrError::InvalidLambda(config.lambda));
    }
    let considered = first_stage.truncated(config.depth);
    let texts: Vec<&str> = considered
        .entries()
        .iter()
        .map(|e| {
            corpus
                .get(&e.doc_id)
                .map(|d| d.text.as_str())
                .ok_or_else(|| MmrError::UnknownDocument(e.doc_id.clone()))
        })
        .collect::<Result<_>>()?;

    // Min-max normalize the first-stage scores over the considered
    // prefix; a constant score vector normalizes to all-ones, which is
    // harmless because a constant relevance term never changes an argmax.
    let scores: Vec<f64> = considered.entries().iter().map(|e| e.score).collect();
    let (min, max) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let relevance: Vec<f64> = scores
        .iter()
        .map(|&s| if max > min { (s - min) / (max - min) } else { 1.0 })
        .collect();

    let n = considered.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected_texts: Vec<&str> = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let mut best: Option<(f64, usize)> = None; // (mmr score, position in `remaining`)
        for (pos, &i) in remaining.iter().enumerate() {
            let redundancy = selected_texts
                .iter()
                .map(|t| 1.0 - jaccard_distance(texts[i], t))
                .fold(0.0, f64::max);
            let mmr = config.lambda * relevance[i] - (1.0 - config.lambda) * redundancy;
            // Strictly-greater keeps the earliest first-stage position on
            // ties (`remaining` stays sorted by first-stage rank).
            if best.is_none() || mmr > best.unwrap().0 {
                best = Some((mmr, pos));
            }
        }
        let (_, pos) = best.expect("remaining is non-empty");
        let i = remaining.remove(pos);
        selected_texts.push(texts[i]);
        order.push(i);
    }

    let entries = order
        .into_iter()
        .map(|i| considered.entries()[i].clone())
        .collect();
    Ok(RankedList::from_ordered(first_stage.query_id.clone(), first_stage.tag.clone(), entries)
        .expect("reordering keeps entries valid")
        .with_synthetic_scores())
}
