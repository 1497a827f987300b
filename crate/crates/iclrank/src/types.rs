//! Core data types shared across the pipeline.
//!
//! Everything downstream (example construction, window reranking, metrics)
//! operates on three shapes defined here: [`Document`]s carrying optional
//! group attributes, [`Query`]s, and [`RankedList`]s. Ranked lists have a
//! canonical form — entries sorted by descending score with ties broken by
//! ascending document id — which makes run files reproducible byte for
//! byte and keeps score ties deterministic across platforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("duplicate doc_id `{doc_id}` in ranked list for query `{query_id}`")]
    DuplicateDocId { query_id: String, doc_id: String },
    #[error("non-finite score for doc_id `{doc_id}` in ranked list for query `{query_id}`")]
    NonFiniteScore { query_id: String, doc_id: String },
    #[error("invalid attribute schema: {0}")]
    InvalidSchema(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

// ─── Documents and queries ──────────────────────────────────────────────────

/// A retrievable passage. `attribute` is an optional group index in
/// `[0, k)` under the governing [`AttributeSchema`] (e.g. a protected
/// group for fairness tasks or a topic cluster for diversity tasks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<usize>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document { doc_id: doc_id.into(), text: text.into(), attribute: None }
    }

    #[must_use]
    pub fn with_attribute(mut self, attribute: usize) -> Self {
        self.attribute = Some(attribute);
        self
    }
}

/// A search request, either a live test query or a logged one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Query { query_id: query_id.into(), text: text.into() }
    }
}

/// Names the attribute dimension and its `k` distinct group labels.
/// Labels are indexed by position, so `value_labels[g]` is the label of
/// group `g` and every `Document::attribute` must be `< k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    name: String,
    value_labels: Vec<String>,
}

impl AttributeSchema {
    /// Builds a schema, requiring at least one label and no duplicates.
    pub fn new(name: impl Into<String>, value_labels: Vec<String>) -> Result<Self> {
        if value_labels.is_empty() {
            return Err(CoreError::InvalidSchema("schema needs at least one group label".into()));
        }
        let mut seen = value_labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != value_labels.len() {
            return Err(CoreError::InvalidSchema("group labels must be distinct".into()));
        }
        Ok(AttributeSchema { name: name.into(), value_labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of groups `k`.
    pub fn k(&self) -> usize {
        self.value_labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.value_labels
    }

    /// Index of a label, if it belongs to the schema.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.value_labels.iter().position(|l| l == label)
    }
}

// ─── Ranked lists ────────────────────────────────────────────────────────────

/// One scored document inside a [`RankedList`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

impl RankedEntry {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        RankedEntry { doc_id: doc_id.into(), score }
    }
}

/// A ranking of documents for one query plus the run tag it belongs to.
///
/// Construct with [`RankedList::canonicalize`] to get the canonical form
/// (score descending, ties by ascending doc id) or with
/// [`RankedList::from_ordered`] when the entry order itself is the ranking
/// (e.g. after a deliberate shuffle). Both reject duplicate doc ids and
/// non-finite scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub tag: String,
    entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Builds the canonical form: entries sorted by descending score,
    /// ties broken by ascending doc id.
    pub fn canonicalize(
        query_id: impl Into<String>,
        tag: impl Into<String>,
        mut entries: Vec<RankedEntry>,
    ) -> Result<Self> {
        let query_id = query_id.into();
        validate_entries(&query_id, &entries)?;
        entries.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        Ok(RankedList { query_id, tag: tag.into(), entries })
    }

    /// Keeps the given entry order as the ranking. Used when an upstream
    /// step (shuffling, window permutation) has already decided the order.
    pub fn from_ordered(
        query_id: impl Into<String>,
        tag: impl Into<String>,
        entries: Vec<RankedEntry>,
    ) -> Result<Self> {
        let query_id = query_id.into();
        validate_entries(&query_id, &entries)?;
        Ok(RankedList { query_id, tag: tag.into(), entries })
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// The top `depth` entries as a new list (same tag and query).
    #[must_use]
    pub fn truncated(&self, depth: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            tag: self.tag.clone(),
            entries: self.entries.iter().take(depth).cloned().collect(),
        }
    }

    /// A seeded permutation of the entries; scores travel with their
    /// doc ids, so the multiset of (doc id, score) pairs is preserved.
    #[must_use]
    pub fn shuffled(&self, rng: &mut SeededRng) -> RankedList {
        let mut entries = self.entries.clone();
        rng.shuffle(&mut entries);
        RankedList {
            query_id: self.query_id.clone(),
            tag: self.tag.clone(),
            entries,
        }
    }

    /// Replaces every score with `len - position` so that the current
    /// entry order survives canonicalization and run-file round trips.
    #[must_use]
    pub fn with_synthetic_scores(mut self) -> RankedList {
        let n = self.entries.len();
        for (i, entry) in self.entries.iter_mut().enumerate() {
            entry.score = (n - i) as f64;
        }
        self
    }
}

fn validate_entries(query_id: &str, entries: &[RankedEntry]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for entry in entries {
        if !entry.score.is_finite() {
            return Err(CoreError::NonFiniteScore {
                query_id: query_id.to_string(),
                doc_id: entry.doc_id.clone(),
            });
        }
        if !seen.insert(entry.doc_id.as_str()) {
            return Err(CoreError::DuplicateDocId {
                query_id: query_id.to_string(),
                doc_id: entry.doc_id.clone(),
            });
        }
    }
    Ok(())
}
