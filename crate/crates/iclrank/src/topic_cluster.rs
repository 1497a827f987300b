//! Topic discovery for diversity tasks: agglomerative complete-linkage
//! clustering of documents under Jaccard token distance.
//!
//! Corpora rarely ship subtopic labels, so the pipeline derives them:
//! the top-ranked documents of each query are clustered, every cluster
//! becomes a topic, and the cluster index doubles as the document's
//! group attribute for uniform-target example construction and for
//! diversity evaluation.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::query_log::tokenize;
use crate::types::{AttributeSchema, CoreError, Document};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("document `{doc_id}` has no cluster assignment")]
    UnknownDocument { doc_id: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Default complete-linkage distance threshold for merging.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Jaccard distance between the token *sets* of two texts:
/// `1 − |A ∩ B| / |A ∪ B|`. Two empty texts are identical (distance 0).
pub fn jaccard_distance(a: &str, b: &str) -> f64 {
    let set_a: HashSet<String> = tokenize(a).into_iter().collect();
    let set_b: HashSet<String> = tokenize(b).into_iter().collect();
    if set_a.is_empty() && set_b.is_empty() {
        return 0.0;
    }
    let intersection = set_a.intersection(&set_b).count() as f64;
    let union = set_a.union(&set_b).count() as f64;
    1.0 - intersection / union
}

/// Cluster labels for one query's documents. `k` is the number of
/// clusters; labels are `0..k`, numbered by each cluster's first member
/// in the input document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub query_id: String,
    labels: BTreeMap<String, usize>,
    k: usize,
}

impl ClusterAssignment {
    pub fn new(query_id: impl Into<String>, labels: BTreeMap<String, usize>, k: usize) -> Self {
        ClusterAssignment { query_id: query_id.into(), labels, k }
    }

    /// Tags the assignment with the query it was computed for.
    #[must_use]
    pub fn for_query(mut self, query_id: impl Into<String>) -> Self {
        self.query_id = query_id.into();
        self
    }

    pub fn label(&self, doc_id: &str) -> Option<usize> {
        self.labels.get(doc_id).copied()
    }

    /// Number of clusters.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (doc_id, label) pairs in ascending doc-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.labels.iter().map(|(d, &l)| (d.as_str(), l))
    }
}

/// Agglomerative complete-linkage clustering under Jaccard distance.
///
/// Starts from singletons and repeatedly merges the pair of clusters
/// with the smallest complete-linkage distance (the maximum pairwise
/// document distance between them), stopping when that minimum exceeds
/// `threshold`. Ties are resolved by the smaller first cluster index,
/// then the smaller second, making the dendrogram deterministic.
pub fn agglomerative_cluster(docs: &[Document], threshold: f64) -> ClusterAssignment {
    let n = docs.len();
    if n == 0 {
        return ClusterAssignment::new("", BTreeMap::new(), 0);
    }

    // Pairwise document distances, computed once.
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = jaccard_distance(&docs[i].text, &docs[j].text);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    // Active clusters as sorted member lists; merging j into i keeps i's
    // slot, so "first cluster index" ties stay meaningful.
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        if clusters.len() == 1 {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let mut complete = 0.0f64;
                for &a in &clusters[i] {
                    for &b in &clusters[j] {
                        complete = complete.max(dist[a][b]);
                    }
                }
                // Strict less-than keeps the first (smallest i, then j) of
                // any tied pairs.
                if best.is_none() || complete < best.unwrap().0 {
                    best = Some((complete, i, j));
                }
            }
        }
        let (d, i, j) = best.expect("at least two clusters");
        if d > threshold {
            break;
        }
        let merged = clusters.remove(j);
        clusters[i].extend(merged);
        clusters[i].sort_unstable();
    }

    // Number clusters by their first member's position in `docs`.
    clusters.sort_by_key(|members| members[0]);
    let mut labels = BTreeMap::new();
    for (label, members) in clusters.iter().enumerate() {
        for &member in members {
            labels.insert(docs[member].doc_id.clone(), label);
        }
    }
    ClusterAssignment::new("", labels, clusters.len())
}

/// Copies cluster labels onto the documents' `attribute` field and
/// builds the matching schema (`cluster0`, `cluster1`, …) so diversity
/// tasks can reuse the group machinery unchanged.
pub fn labels_to_attributes(
    assignment: &ClusterAssignment,
    docs: &[Document],
) -> Result<(Vec<Document>, AttributeSchema)> {
    let labeled = docs
        .iter()
        .map(|doc| {
            assignment
                .label(&doc.doc_id)
                .map(|l| doc.clone().with_attribute(l))
                .ok_or_else(|| ClusterError::UnknownDocument { doc_id: doc.doc_id.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let schema_labels = (0..assignment.k().max(1)).map(|i| format!("cluster{i}")).collect();
    let schema = AttributeSchema::new("topic", schema_labels)?;
    Ok((labeled, schema))
}
