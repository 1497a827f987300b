//! Evaluation: relevance (nDCG), novelty-aware diversity (alpha-nDCG),
//! group exposure (AWRF), their product, and paired significance tests.
//!
//! Conventions follow the common TREC tooling: linear gains, log2
//! position discounts, unjudged documents count as grade 0, and a query
//! with an empty ideal scores 0. AWRF compares the attention-weighted
//! group exposure of the top-`cutoff` ranking against a target
//! distribution via Jensen–Shannon divergence (base 2, so the divergence
//! — and the resulting score — lives in [0, 1]).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::distribution::CategoricalDistribution;
use crate::types::RankedList;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("qrels carry no subtopic labels but a diversity metric needs them")]
    MissingSubtopics,
    #[error("document `{doc_id}` in the top-{cutoff} has no group attribute")]
    MissingAttribute { doc_id: String, cutoff: usize },
    #[error("paired test needs equal-length samples, got {left} and {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("paired test needs at least two pairs, got {0}")]
    TooFewPairs(usize),
    #[error("paired differences are all equal ({0}); the t statistic is undefined")]
    DegenerateVariance(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

// ─── Qrels ───────────────────────────────────────────────────────────────────

/// Relevance judgments: per-query graded judgments, optionally enriched
/// with subtopic labels for diversity evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
    /// `query → doc → subtopics the doc is relevant to`. `None` when the
    /// qrels were loaded without subtopic information.
    subtopics: Option<BTreeMap<String, BTreeMap<String, BTreeSet<String>>>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    /// Records a graded judgment; repeated (query, doc) pairs keep the
    /// maximum grade.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        let slot = self
            .grades
            .entry(query_id.to_string())
            .or_default()
            .entry(doc_id.to_string())
            .or_insert(0);
        *slot = (*slot).max(grade);
    }

    /// Records a judgment against a subtopic; positive grades also mark
    /// the document relevant to that subtopic.
    pub fn insert_subtopic(&mut self, query_id: &str, subtopic: &str, doc_id: &str, grade: u32) {
        self.insert(query_id, doc_id, grade);
        let map = self.subtopics.get_or_insert_with(BTreeMap::new);
        let entry = map
            .entry(query_id.to_string())
            .or_default()
            .entry(doc_id.to_string())
            .or_default();
        if grade > 0 {
            entry.insert(subtopic.to_string());
        }
    }

    pub fn has_subtopics(&self) -> bool {
        self.subtopics.is_some()
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_judged(&self, query_id: &str) -> bool {
        self.grades.contains_key(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    /// Doc ids judged relevant (grade > 0) for the query.
    pub fn relevant_docs(&self, query_id: &str) -> Vec<&str> {
        self.grades
            .get(query_id)
            .map(|m| {
                m.iter()
                    .filter(|(_, &g)| g > 0)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// All grades for the query (for the ideal DCG).
    fn grades_for(&self, query_id: &str) -> Vec<u32> {
        self.grades
            .get(query_id)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default()
    }

    /// Subtopic sets for the query: `doc → subtopics`, only docs
    /// relevant to at least one subtopic.
    /// Per-document subtopic coverage for a query, when recorded.
    pub fn subtopic_sets(&self, query_id: &str) -> Option<BTreeMap<&str, &BTreeSet<String>>> {
        self.subtopics.as_ref().map(|map| {
            map.get(query_id)
                .map(|docs| {
                    docs.iter()
                        .filter(|(_, t)| !t.is_empty())
                        .map(|(d, t)| (d.as_str(), t))
                        .collect()
                })
                .unwrap_or_default()
        })
    }
}

// ─── nDCG ────────────────────────────────────────────────────────────────────

fn discount(rank: usize) -> f64 {
    // rank is 1-based.
    1.0 / ((rank as f64) + 1.0).log2()
}

/// Linear-gain nDCG at `cutoff`: gains are the raw grades, discounts are
/// `1/log2(rank+1)`, the ideal sorts all judged grades descending, and
/// the score is 0 when the ideal DCG is 0 (no relevant documents).
pub fn ndcg_at(run: &RankedList, qrels: &Qrels, cutoff: usize) -> f64 {
    let dcg: f64 = run
        .entries()
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, e)| f64::from(qrels.grade(&run.query_id, &e.doc_id)) * discount(i + 1))
        .sum();
    let mut grades = qrels.grades_for(&run.query_id);
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| f64::from(g) * discount(i + 1))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

// ─── alpha-nDCG ──────────────────────────────────────────────────────────────

/// Gain of a document at a point where `covered[t]` subtopics counts are
/// already on the table: every subtopic it is relevant to contributes
/// `(1 − alpha)^{times seen before}`.
fn alpha_gain(
    subtopics: &BTreeSet<String>,
    covered: &BTreeMap<&str, u32>,
    alpha: f64,
) -> f64 {
    subtopics
        .iter()
        .map(|t| {
            let c = covered.get(t.as_str()).copied().unwrap_or(0);
            if c == 0 {
                1.0
            } else {
                (1.0 - alpha).powi(c as i32)
            }
        })
        .sum()
}

/// Novelty-biased nDCG at `cutoff`. A document's gain is the number of
/// its subtopics discounted by `(1 − alpha)^(prior occurrences)`; the
/// ideal ranking is the greedy maximum-marginal-gain order over all
/// judged documents, ties broken by ascending doc id. Requires qrels
/// with subtopics; scores 0 when no judged document covers any subtopic.
pub fn alpha_ndcg_at(run: &RankedList, qrels: &Qrels, alpha: f64, cutoff: usize) -> Result<f64> {
    assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
    if !qrels.has_subtopics() {
        return Err(MetricsError::MissingSubtopics);
    }
    let sets = qrels.subtopic_sets(&run.query_id).unwrap_or_default();

    // DCG of the run.
    let mut covered: BTreeMap<&str, u32> = BTreeMap::new();
    let mut dcg = 0.0;
    for (i, entry) in run.entries().iter().take(cutoff).enumerate() {
        if let Some(subs) = sets.get(entry.doc_id.as_str()) {
            dcg += alpha_gain(subs, &covered, alpha) * discount(i + 1);
            for t in subs.iter() {
                *covered.entry(t.as_str()).or_default() += 1;
            }
        }
    }

    // Ideal DCG: greedy max marginal gain over the judged pool.
    let mut pool: Vec<&str> = sets.keys().copied().collect(); // ascending doc id
    let mut covered: BTreeMap<&str, u32> = BTreeMap::new();
    let mut idcg = 0.0;
    for rank in 1..=cutoff.min(pool.len()) {
        let mut best: Option<(f64, usize)> = None;
        for (i, doc) in pool.iter().enumerate() {
            let gain = alpha_gain(sets[doc], &covered, alpha);
            // Strictly-greater keeps the earliest (smallest doc id) of ties.
            if best.is_none() || gain > best.unwrap().0 {
                best = Some((gain, i));
            }
        }
        let (gain, i) = best.expect("pool is non-empty");
        let doc = pool.remove(i);
        idcg += gain * discount(rank);
        for t in sets[doc].iter() {
            *covered.entry(t.as_str()).or_default() += 1;
        }
    }

    if idcg == 0.0 {
        Ok(0.0)
    } else {
        Ok(dcg / idcg)
    }
}

// ─── AWRF ────────────────────────────────────────────────────────────────────

/// Attention weight of 1-based rank `i`, before normalization.
fn attention(rank: usize) -> f64 {
    discount(rank)
}

/// Attention-weighted ranking fairness at `cutoff`: the group exposure
/// of the top-`cutoff` documents under log-discounted attention,
/// compared to `target` via `1 − JS divergence` (base 2). 1 means the
/// exposure matches the target exactly; 0 means maximal divergence.
/// Every counted document must have an attribute below `target.k()`.
pub fn awrf_at(
    run: &RankedList,
    attributes: &BTreeMap<String, usize>,
    target: &CategoricalDistribution,
    cutoff: usize,
) -> Result<f64> {
    let counted = run.entries().iter().take(cutoff).collect::<Vec<_>>();
    if counted.is_empty() {
        // No exposure to compare; treat as maximally divergent.
        return Ok(0.0);
    }
    let total_attention: f64 = (1..=counted.len()).map(attention).sum();
    let mut exposure = vec![0.0; target.k()];
    for (i, entry) in counted.iter().enumerate() {
        let group = attributes
            .get(&entry.doc_id)
            .copied()
            .filter(|&g| g < target.k())
            .ok_or_else(|| MetricsError::MissingAttribute {
                doc_id: entry.doc_id.clone(),
                cutoff,
            })?;
        exposure[group] += attention(i + 1) / total_attention;
    }
    Ok(1.0 - js_divergence_base2(&exposure, target.probs()))
}

/// Jensen–Shannon divergence in bits; symmetric and bounded by [0, 1].
fn js_divergence_base2(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let kl2 = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(ai, _)| **ai > 0.0)
            .map(|(ai, mi)| ai * (ai / mi).log2())
            .sum()
    };
    let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl2(p, &mid) + 0.5 * kl2(q, &mid)
}

/// Joint relevance-and-fairness score: `nDCG@cutoff × AWRF@cutoff`.
pub fn m1_at(
    run: &RankedList,
    qrels: &Qrels,
    attributes: &BTreeMap<String, usize>,
    target: &CategoricalDistribution,
    cutoff: usize,
) -> Result<f64> {
    Ok(ndcg_at(run, qrels, cutoff) * awrf_at(run, attributes, target, cutoff)?)
}

// ─── Paired t-test ───────────────────────────────────────────────────────────

/// Two-sided paired t-test over per-query metric values (`a[i]` and
/// `b[i]` must belong to the same query). Returns `(t, p)`.
///
/// Two degenerate cases: identical samples have no effect at all and
/// return `(0, 1)`; samples whose differences are all equal but non-zero
/// have zero variance around a non-zero mean, so `t` is unbounded and
/// the test is refused ([`MetricsError::DegenerateVariance`]).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < 2 {
        return Err(MetricsError::TooFewPairs(a.len()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean == 0.0 {
            Ok((0.0, 1.0))
        } else {
            Err(MetricsError::DegenerateVariance(mean))
        };
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution for n >= 2");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}

// ─── Reports ─────────────────────────────────────────────────────────────────

/// Per-query metric values plus their arithmetic means, serializable to
/// TSV (trec_eval style) and JSON. BTreeMaps keep both outputs stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub means: BTreeMap<String, f64>,
}

impl MetricReport {
    /// Builds the report, computing each metric's mean over the queries
    /// that have a value for it.
    pub fn from_per_query(per_query: BTreeMap<String, BTreeMap<String, f64>>) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for metrics in per_query.values() {
            for (name, value) in metrics {
                let slot = sums.entry(name.clone()).or_insert((0.0, 0));
                slot.0 += value;
                slot.1 += 1;
            }
        }
        let means = sums
            .into_iter()
            .map(|(name, (sum, count))| (name, sum / count as f64))
            .collect();
        MetricReport { per_query, means }
    }

    /// `metric<TAB>query<TAB>value` lines, one per query per metric,
    /// followed by a mean line per metric with query id `all`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut names: BTreeSet<&String> = self.means.keys().collect();
        for metrics in self.per_query.values() {
            names.extend(metrics.keys());
        }
        for name in names {
            for (query, metrics) in &self.per_query {
                if let Some(value) = metrics.get(name.as_str()) {
                    out.push_str(&format!("{name}\t{query}\t{value:.6}\n"));
                }
            }
            if let Some(mean) = self.means.get(name.as_str()) {
                out.push_str(&format!("{name}\tall\t{mean:.6}\n"));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
