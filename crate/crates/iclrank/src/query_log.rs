//! BM25 retrieval over a query log, used to find the logged query most
//! similar to a test query so its candidates can serve as the
//! in-context demonstration.
//!
//! The index treats each logged query as a tiny document: lowercase,
//! split on non-alphanumeric runs, no stemming or stopword removal (log
//! queries are too short for either to help). Scoring is Okapi BM25 with
//! `k1 = 0.9`, `b = 0.4` and the non-negative idf variant
//! `ln((N − df + 0.5)/(df + 0.5) + 1)`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Query;

#[derive(Debug, Error, PartialEq)]
pub enum QueryLogError {
    #[error("duplicate query_id `{query_id}` in query log")]
    DuplicateQueryId { query_id: String },
}

pub type Result<T> = std::result::Result<T, QueryLogError>;

pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

/// Lowercases and splits on runs of non-alphanumeric characters.
/// `"C++11!"` → `["c", "11"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Posting {
    /// Index into `queries`.
    query: u32,
    /// Term frequency within that query's text.
    tf: u32,
}

/// Inverted index over a query log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLogIndex {
    queries: Vec<Query>,
    /// Token count of each query, parallel to `queries`.
    lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    k1: f64,
    b: f64,
}

/// Builds the inverted index. Query ids must be unique.
pub fn build_index(queries: Vec<Query>, k1: f64, b: f64) -> Result<QueryLogIndex> {
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut lengths = Vec::with_capacity(queries.len());
    let mut seen = std::collections::HashSet::new();
    for (idx, query) in queries.iter().enumerate() {
        if !seen.insert(query.query_id.as_str()) {
            return Err(QueryLogError::DuplicateQueryId { query_id: query.query_id.clone() });
        }
        let tokens = tokenize(&query.text);
        lengths.push(tokens.len() as u32);
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for token in &tokens {
            *tf.entry(token.as_str()).or_default() += 1;
        }
        for (token, count) in tf {
            postings
                .entry(token.to_string())
                .or_default()
                .push(Posting { query: idx as u32, tf: count });
        }
    }
    Ok(QueryLogIndex { queries, lengths, postings, k1, b })
}

impl QueryLogIndex {
    /// Number of indexed queries.
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Number of distinct terms.
    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_length(&self) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        self.lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / self.queries.len() as f64
    }

    /// Top-`k` most similar logged queries by BM25, ties broken by
    /// ascending query id. Queries sharing no term with the probe are
    /// never returned. With `exclude_exact_text`, logged queries whose
    /// token sequence equals the probe's are dropped — when the probe
    /// itself comes from the log, its twin would demonstrate nothing.
    pub fn similar_queries(
        &self,
        probe: &str,
        k: usize,
        exclude_exact_text: bool,
    ) -> Vec<(Query, f64)> {
        let probe_tokens = tokenize(probe);
        if probe_tokens.is_empty() || self.queries.is_empty() || k == 0 {
            return Vec::new();
        }
        let n = self.queries.len() as f64;
        let avg_len = self.avg_length();
        // Deduplicate probe terms; BM25 treats repeated probe terms once
        // here (short queries rarely repeat terms meaningfully).
        let mut terms: Vec<&str> = probe_tokens.iter().map(String::as_str).collect();
        terms.sort_unstable();
        terms.dedup();

        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in terms {
            let Some(postings) = self.postings.get(term) else { continue };
            let df = postings.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for posting in postings {
                let tf = f64::from(posting.tf);
                let dl = f64::from(self.lengths[posting.query as usize]);
                let norm = tf + self.k1 * (1.0 - self.b + self.b * dl / avg_len);
                *scores.entry(posting.query).or_default() += idf * tf * (self.k1 + 1.0) / norm;
            }
        }

        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| {
                self.queries[a.0 as usize]
                    .query_id
                    .cmp(&self.queries[b.0 as usize].query_id)
            })
        });

        let mut out = Vec::with_capacity(k);
        for (idx, score) in ranked {
            let query = &self.queries[idx as usize];
            if exclude_exact_text && tokenize(&query.text) == probe_tokens {
                continue;
            }
            out.push((query.clone(), score));
            if out.len() == k {
                break;
            }
        }
        out
    }
}
