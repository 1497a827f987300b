//! Categorical group distributions and the smoothed KL divergence that
//! drives demonstration ordering.
//!
//! A target distribution says what share of exposure each group should
//! get. For fairness tasks it is estimated from the relevant documents'
//! group labels; for diversity tasks it is uniform over topics. The
//! greedy orderer (see [`crate::example_builder`]) compares a growing
//! ranking prefix against the target with [`smoothed_kl`], an
//! epsilon-smoothed KL divergence in nats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AttributeSchema, Document};

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("no relevant documents to estimate a target distribution from")]
    EmptyRelevantSet,
    #[error("document `{doc_id}` has no attribute but one is required")]
    MissingAttribute { doc_id: String },
    #[error("document `{doc_id}` has attribute {attribute} outside [0, {k})")]
    AttributeOutOfRange { doc_id: String, attribute: usize, k: usize },
}

pub type Result<T> = std::result::Result<T, DistributionError>;

/// How far probabilities may drift from summing to exactly 1.
const SUM_TOLERANCE: f64 = 1e-9;

// ─── Categorical distributions ───────────────────────────────────────────────

/// A probability vector over `k` groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    /// Validates that the vector is non-empty, non-negative, and sums to 1.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(DistributionError::Invalid("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DistributionError::Invalid(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::Invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(CategoricalDistribution { probs })
    }

    /// The uniform distribution over `k` groups.
    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution needs at least one group");
        CategoricalDistribution { probs: vec![1.0 / k as f64; k] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }
}

/// Convenience alias for [`CategoricalDistribution::uniform`].
pub fn uniform_distribution(k: usize) -> CategoricalDistribution {
    CategoricalDistribution::uniform(k)
}

/// The exposure-reversing counterpart of `target`: the group that should
/// have received the most probability gets the least, and so on down the
/// sorted order. Applying it twice restores the original whenever all
/// probabilities are distinct.
pub fn adversarial_distribution(target: &CategoricalDistribution) -> CategoricalDistribution {
    let probs = target.probs();
    let k = probs.len();
    // Group indices from the smallest probability up (ties by index).
    let mut ascending: Vec<usize> = (0..k).collect();
    ascending.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    // Probability values from the largest down.
    let mut descending: Vec<f64> = probs.to_vec();
    descending.sort_by(|a, b| b.total_cmp(a));
    let mut out = vec![0.0; k];
    for (rank, &group) in ascending.iter().enumerate() {
        out[group] = descending[rank];
    }
    CategoricalDistribution { probs: out }
}

/// Estimates the target from the group shares of `relevant` documents:
/// `target[g] = |{d : attribute(d) = g}| / |relevant|`.
pub fn target_distribution(
    relevant: &[Document],
    schema: &AttributeSchema,
) -> Result<CategoricalDistribution> {
    if relevant.is_empty() {
        return Err(DistributionError::EmptyRelevantSet);
    }
    let counts = prefix_distribution(relevant, schema)?;
    let total = counts.total() as f64;
    let probs = counts.counts().iter().map(|&c| c as f64 / total).collect();
    Ok(CategoricalDistribution { probs })
}

// ─── Group counts over ranking prefixes ──────────────────────────────────────

/// Per-group document counts for a ranking prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupCounts {
    counts: Vec<u64>,
}

impl GroupCounts {
    pub fn new(k: usize) -> Self {
        assert!(k > 0, "group counts need at least one group");
        GroupCounts { counts: vec![0; k] }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one document of the given group.
    pub fn add(&mut self, group: usize) {
        assert!(group < self.counts.len(), "group index out of range");
        self.counts[group] += 1;
    }

    /// A copy with one more document of the given group — the candidate
    /// evaluation step of the greedy orderer.
    #[must_use]
    pub fn with_added(&self, group: usize) -> GroupCounts {
        let mut next = self.clone();
        next.add(group);
        next
    }
}

/// Counts the groups of a ranking prefix. Every document must carry an
/// in-range attribute.
pub fn prefix_distribution(prefix: &[Document], schema: &AttributeSchema) -> Result<GroupCounts> {
    let mut counts = GroupCounts::new(schema.k());
    for doc in prefix {
        let attribute = doc.attribute.ok_or_else(|| DistributionError::MissingAttribute {
            doc_id: doc.doc_id.clone(),
        })?;
        if attribute >= schema.k() {
            return Err(DistributionError::AttributeOutOfRange {
                doc_id: doc.doc_id.clone(),
                attribute,
                k: schema.k(),
            });
        }
        counts.add(attribute);
    }
    Ok(counts)
}

// ─── Smoothed KL divergence ──────────────────────────────────────────────────

/// KL(target ‖ p̂) in nats, where p̂ is the empirical distribution of
/// `counts` smoothed as `p̂[g] = (counts[g] + ε) / (total + kε)`.
///
/// Smoothing is applied to the empirical side only, so groups the target
/// assigns zero probability contribute nothing, and empty groups never
/// produce infinities. Always finite and non-negative up to float error.
pub fn smoothed_kl(target: &CategoricalDistribution, counts: &GroupCounts, epsilon: f64) -> f64 {
    assert_eq!(target.k(), counts.k(), "target and counts must have the same group count");
    assert!(epsilon > 0.0, "smoothing epsilon must be positive");
    let k = target.k() as f64;
    let total = counts.total() as f64;
    let denom = total + k * epsilon;
    let mut kl = 0.0;
    for (t, &c) in target.probs().iter().zip(counts.counts()) {
        if *t > 0.0 {
            let p_hat = (c as f64 + epsilon) / denom;
            kl += t * (t / p_hat).ln();
        }
    }
    kl
}
