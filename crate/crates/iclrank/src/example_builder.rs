//! Construction of the in-context demonstration: a similar query's
//! candidates reordered so the demonstrated ranking tracks a target
//! group distribution.
//!
//! The orderer partitions the window's documents into per-group queues
//! (first-stage order preserved inside each queue) and then repeatedly
//! emits the queue head whose addition minimizes the smoothed KL
//! divergence between the target and the empirical distribution of the
//! ranking prefix built so far. Relative order within a group therefore
//! never changes — the rule only interleaves groups.
//!
//! Strategy variants reuse the same machinery: `Adversarial` runs the
//! greedy rule against the exposure-reversed target, `Uniform` against a
//! uniform target over the groups present in the window, `Relevant`
//! keeps the first-stage order, and `Static` returns a fixed,
//! configuration-supplied example.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{
    adversarial_distribution, smoothed_kl, CategoricalDistribution, DistributionError,
    GroupCounts,
};
use crate::rng::SeededRng;
use crate::types::{AttributeSchema, Document, Query, RankedList};

#[derive(Debug, Error, PartialEq)]
pub enum ExampleError {
    #[error("window needs {needed} documents but only {found} are available")]
    TooFewDocuments { found: usize, needed: usize },
    #[error("strategy `{strategy}` requires a target distribution")]
    MissingTarget { strategy: String },
    #[error("strategy `{strategy}` requires an attribute schema")]
    MissingSchema { strategy: String },
    #[error("static strategy selected but no static example was supplied")]
    MissingStaticExample,
    #[error("document `{doc_id}` from the run is missing from the corpus")]
    UnknownDocument { doc_id: String },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

pub type Result<T> = std::result::Result<T, ExampleError>;

// ─── Strategies and ordering policies ────────────────────────────────────────

/// How the demonstrated ranking is derived from the example window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleStrategy {
    /// Greedy KL-tracking order toward the task target distribution.
    Target,
    /// Greedy order toward the exposure-reversed target (ablation).
    Adversarial,
    /// Greedy order toward a uniform target over groups present in the
    /// window (ablation).
    Uniform,
    /// First-stage retrieval order, i.e. pure relevance (ablation).
    Relevant,
    /// A fixed example supplied via configuration (ablation).
    Static,
}

impl ExampleStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleStrategy::Target => "target",
            ExampleStrategy::Adversarial => "adversarial",
            ExampleStrategy::Uniform => "uniform",
            ExampleStrategy::Relevant => "relevant",
            ExampleStrategy::Static => "static",
        }
    }
}

/// How the documents are arranged when *shown* in the prompt. The
/// demonstrated ranking (`target_order`) is expressed against this
/// display order, so shuffling changes the surface form but not the
/// demonstrated ordering itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleOrdering {
    /// Seeded shuffle of the window (default: avoids teaching the model
    /// that display position equals rank).
    RandomSeeded,
    /// Keep first-stage retrieval order.
    FirstStage,
}

// ─── The demonstration itself ────────────────────────────────────────────────

/// One in-context demonstration: a query, its window of documents in
/// display order, and the 1-based display indices in demonstrated rank
/// order (`target_order[0]` is the display index shown as ranked first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    pub example_query: Query,
    pub documents: Vec<Document>,
    pub target_order: Vec<usize>,
    pub strategy: ExampleStrategy,
}

impl IclExample {
    /// The documents in demonstrated rank order.
    pub fn ranked_documents(&self) -> Vec<&Document> {
        self.target_order.iter().map(|&i| &self.documents[i - 1]).collect()
    }
}

// ─── Per-group queues ────────────────────────────────────────────────────────

/// The window's documents split into `k` queues by attribute, preserving
/// first-stage order inside each queue. Cursors track how far the greedy
/// orderer has consumed each queue.
#[derive(Debug, Clone)]
pub struct GroupQueues {
    // Each entry keeps its first-stage position for tie-breaking: the
    // input is sorted by descending retrieval score (ties by doc id), so
    // an earlier position means a higher-scored document.
    queues: Vec<Vec<(usize, Document)>>,
    cursors: Vec<usize>,
}

impl GroupQueues {
    pub fn k(&self) -> usize {
        self.queues.len()
    }

    /// Total number of documents across all queues.
    pub fn len(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Doc ids of one queue in first-stage order (for inspection/tests).
    pub fn queue_doc_ids(&self, group: usize) -> Vec<&str> {
        self.queues[group].iter().map(|(_, d)| d.doc_id.as_str()).collect()
    }

    fn head(&self, group: usize) -> Option<&(usize, Document)> {
        self.queues[group].get(self.cursors[group])
    }
}

/// Splits `docs` (already in first-stage order) into per-group queues.
pub fn partition_by_attribute(docs: &[Document], schema: &AttributeSchema) -> Result<GroupQueues> {
    let mut queues = vec![Vec::new(); schema.k()];
    for (pos, doc) in docs.iter().enumerate() {
        let group = doc.attribute.ok_or_else(|| DistributionError::MissingAttribute {
            doc_id: doc.doc_id.clone(),
        })?;
        if group >= schema.k() {
            return Err(DistributionError::AttributeOutOfRange {
                doc_id: doc.doc_id.clone(),
                attribute: group,
                k: schema.k(),
            }
            .into());
        }
        queues[group].push((pos, doc.clone()));
    }
    let cursors = vec![0; schema.k()];
    Ok(GroupQueues { queues, cursors })
}

// ─── Greedy KL-tracking reordering ───────────────────────────────────────────

/// Reorders the queued documents by repeatedly emitting the queue head
/// whose addition minimizes `smoothed_kl(target, prefix + candidate)`.
/// KL ties go to the candidate with the earlier first-stage position
/// (higher retrieval score, then ascending doc id for canonical input).
/// Exhausted queues simply drop out of the candidate set.
pub fn greedy_rerank(
    queues: GroupQueues,
    target: &CategoricalDistribution,
    epsilon: f64,
) -> Vec<Document> {
    greedy_rerank_with_trace(queues, target, epsilon).0
}

/// Like [`greedy_rerank`] but also returns the per-step KL value of the
/// chosen prefix, useful for audit and testing.
pub fn greedy_rerank_with_trace(
    mut queues: GroupQueues,
    target: &CategoricalDistribution,
    epsilon: f64,
) -> (Vec<Document>, Vec<f64>) {
    assert_eq!(queues.k(), target.k(), "queue count must match target dimension");
    let total = queues.len();
    let mut counts = GroupCounts::new(target.k());
    let mut ordered = Vec::with_capacity(total);
    let mut trace = Vec::with_capacity(total);
    while ordered.len() < total {
        let mut best: Option<(f64, usize, usize)> = None; // (kl, first-stage pos, group)
        for group in 0..queues.k() {
            let Some(&(pos, _)) = queues.head(group) else { continue };
            let kl = smoothed_kl(target, &counts.with_added(group), epsilon);
            let better = match best {
                None => true,
                Some((best_kl, best_pos, _)) => {
                    kl < best_kl || (kl == best_kl && pos < best_pos)
                }
            };
            if better {
                best = Some((kl, pos, group));
            }
        }
        let (kl, _, group) = best.expect("non-empty queues must yield a candidate");
        let (_, doc) = queues.queues[group][queues.cursors[group]].clone();
        queues.cursors[group] += 1;
        counts.add(group);
        ordered.push(doc);
        trace.push(kl);
    }
    (ordered, trace)
}

// ─── Demonstration assembly ──────────────────────────────────────────────────

/// Everything [`build_example`] needs besides the query and its run.
#[derive(Debug, Clone)]
pub struct ExampleSpec<'a> {
    pub strategy: ExampleStrategy,
    pub ordering: ExampleOrdering,
    /// Window size `m`: the demonstration uses the top-`m` documents and
    /// must match the inference window size.
    pub window: usize,
    /// Smoothing constant for the greedy KL rule.
    pub epsilon: f64,
    /// Task target; required by `Target` and `Adversarial`.
    pub target: Option<&'a CategoricalDistribution>,
    /// Group schema; required by `Target`, `Adversarial`, and `Uniform`.
    pub schema: Option<&'a AttributeSchema>,
    /// Fixed example; required by `Static`.
    pub static_example: Option<&'a IclExample>,
}

/// Builds the demonstration for one test query from a similar logged
/// query and its first-stage run. The returned example shows the top-`m`
/// documents in display order (shuffled or first-stage, per
/// `spec.ordering`) and demonstrates the strategy's ranking over them
/// via 1-based display indices.
pub fn build_example(
    example_query: &Query,
    retrieved: &RankedList,
    corpus: &HashMap<String, Document>,
    spec: &ExampleSpec<'_>,
    rng: &mut SeededRng,
) -> Result<IclExample> {
    if spec.strategy == ExampleStrategy::Static {
        return spec.static_example.cloned().ok_or(ExampleError::MissingStaticExample);
    }
    if retrieved.len() < spec.window {
        return Err(ExampleError::TooFewDocuments {
            found: retrieved.len(),
            needed: spec.window,
        });
    }

    // Top-m window in first-stage order, texts and attributes resolved.
    let window_docs: Vec<Document> = retrieved
        .entries()
        .iter()
        .take(spec.window)
        .map(|e| {
            corpus
                .get(&e.doc_id)
                .cloned()
                .ok_or_else(|| ExampleError::UnknownDocument { doc_id: e.doc_id.clone() })
        })
        .collect::<Result<_>>()?;

    let demonstrated: Vec<Document> = match spec.strategy {
        ExampleStrategy::Relevant => window_docs.clone(),
        ExampleStrategy::Target | ExampleStrategy::Adversarial | ExampleStrategy::Uniform => {
            let schema = spec.schema.ok_or_else(|| ExampleError::MissingSchema {
                strategy: spec.strategy.as_str().into(),
            })?;
            let queues = partition_by_attribute(&window_docs, schema)?;
            let target = match spec.strategy {
                ExampleStrategy::Target => spec
                    .target
                    .cloned()
                    .ok_or_else(|| ExampleError::MissingTarget {
                        strategy: spec.strategy.as_str().into(),
                    })?,
                ExampleStrategy::Adversarial => adversarial_distribution(
                    spec.target.ok_or_else(|| ExampleError::MissingTarget {
                        strategy: spec.strategy.as_str().into(),
                    })?,
                ),
                ExampleStrategy::Uniform => uniform_over_present(&window_docs, schema.k()),
                _ => unreachable!(),
            };
            greedy_rerank(queues, &target, spec.epsilon)
        }
        ExampleStrategy::Static => unreachable!("handled above"),
    };

    // Display order: seeded shuffle or first-stage order.
    let mut displayed = window_docs;
    if spec.ordering == ExampleOrdering::RandomSeeded {
        rng.shuffle(&mut displayed);
    }

    // Express the demonstrated ranking as 1-based display indices.
    let display_pos: HashMap<&str, usize> = displayed
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i + 1))
        .collect();
    let target_order = demonstrated
        .iter()
        .map(|d| display_pos[d.doc_id.as_str()])
        .collect();

    Ok(IclExample {
        example_query: example_query.clone(),
        documents: displayed,
        target_order,
        strategy: spec.strategy,
    })
}

/// Uniform distribution over the groups that actually occur in `docs`,
/// zero elsewhere. Groups absent from the window cannot be demonstrated,
/// so spreading target mass over them would only distort the KL signal.
fn uniform_over_present(docs: &[Document], k: usize) -> CategoricalDistribution {
    let mut present = vec![false; k];
    for doc in docs {
        if let Some(g) = doc.attribute {
            if g < k {
                present[g] = true;
            }
        }
    }
    let n = present.iter().filter(|&&p| p).count().max(1);
    let probs = present
        .iter()
        .map(|&p| if p { 1.0 / n as f64 } else { 0.0 })
        .collect();
    CategoricalDistribution::new(probs).expect("uniform-over-present sums to 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RankedEntry;
    use proptest::prelude::*;

    const M: usize = 0;
    const F: usize = 1;

    fn schema() -> AttributeSchema {
        AttributeSchema::new("gender", vec!["M".into(), "F".into()]).unwrap()
    }

    /// The worked five-document window: D1..D5 with groups M, M, F, M, F
    /// in first-stage (descending score) order.
    fn window() -> Vec<Document> {
        [("D1", M), ("D2", M), ("D3", F), ("D4", M), ("D5", F)]
            .iter()
            .map(|(id, g)| Document::new(*id, format!("text of {id}")).with_attribute(*g))
            .collect()
    }

    fn dist(probs: &[f64]) -> CategoricalDistribution {
        CategoricalDistribution::new(probs.to_vec()).unwrap()
    }

    fn ids(docs: &[Document]) -> Vec<&str> {
        docs.iter().map(|d| d.doc_id.as_str()).collect()
    }

    #[test]
    fn partition_splits_into_per_group_queues_preserving_order() {
        let queues = partition_by_attribute(&window(), &schema()).unwrap();
        assert_eq!(queues.queue_doc_ids(M), vec!["D1", "D2", "D4"]);
        assert_eq!(queues.queue_doc_ids(F), vec!["D3", "D5"]);
        assert_eq!(queues.len(), 5);
    }

    #[test]
    fn partition_rejects_unlabeled_documents() {
        let mut docs = window();
        docs[2].attribute = None;
        let err = partition_by_attribute(&docs, &schema()).unwrap_err();
        assert_eq!(
            err,
            ExampleError::Distribution(DistributionError::MissingAttribute {
                doc_id: "D3".into()
            })
        );
    }

    #[test]
    fn greedy_tracks_the_point_six_point_four_target() {
        // Worked example: target (0.6, 0.4) on ⟨M, M, F, M, F⟩ gives
        // ⟨D1, D3, D2, D5, D4⟩ — the first pick is M (KL 2.0915 vs 3.4732
        // for F), the second balances with F (0.0201 vs 2.3680 for MM),
        // and so on.
        let queues = partition_by_attribute(&window(), &schema()).unwrap();
        let (ordered, trace) =
            greedy_rerank_with_trace(queues, &dist(&[0.6, 0.4]), 1e-3);
        assert_eq!(ids(&ordered), vec!["D1", "D3", "D2", "D5", "D4"]);
        // Frozen stepwise KL values (nats), computed by hand from
        // p̂ = (c + ε)/(total + 2ε):
        let expected = [
            2.091488747046421,    // (1,0)
            0.020135513550688863, // (1,1)
            0.009679032707822569, // (2,1)
            0.020135513550688863, // (2,2)
        ];
        for (got, want) in trace.iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "trace {got} != {want}");
        }
        // Final prefix (3,2) matches the target almost exactly.
        assert!(trace[4] < 1e-5);
    }

    #[test]
    fn greedy_under_the_swapped_target_prefers_the_minority_queue() {
        let queues = partition_by_attribute(&window(), &schema()).unwrap();
        let ordered = greedy_rerank(queues, &dist(&[0.4, 0.6]), 1e-3);
        assert_eq!(ids(&ordered), vec!["D3", "D1", "D5", "D2", "D4"]);
    }

    #[test]
    fn point_mass_target_front_loads_that_group() {
        // target (0, 1) must place every F document before every M
        // document (verified against brute force over all interleavings).
        let queues = partition_by_attribute(&window(), &schema()).unwrap();
        let ordered = greedy_rerank(queues, &dist(&[0.0, 1.0]), 1e-3);
        assert_eq!(ids(&ordered), vec!["D3", "D5", "D1", "D2", "D4"]);
    }

    #[test]
    fn exhausted_queues_drop_out() {
        // Single-group input: the greedy order is just first-stage order.
        let docs: Vec<Document> = (0..4)
            .map(|i| Document::new(format!("d{i}"), "").with_attribute(M))
            .collect();
        let queues = partition_by_attribute(&docs, &schema()).unwrap();
        let ordered = greedy_rerank(queues, &dist(&[0.6, 0.4]), 1e-3);
        assert_eq!(ids(&ordered), vec!["d0", "d1", "d2", "d3"]);
    }

    // ── build_example ──

    fn run_of(window: &[Document]) -> RankedList {
        let entries = window
            .iter()
            .enumerate()
            .map(|(i, d)| RankedEntry::new(d.doc_id.clone(), (window.len() - i) as f64))
            .collect();
        RankedList::canonicalize("L1", "test", entries).unwrap()
    }

    fn corpus_of(window: &[Document]) -> HashMap<String, Document> {
        window.iter().map(|d| (d.doc_id.clone(), d.clone())).collect()
    }

    fn spec<'a>(
        strategy: ExampleStrategy,
        ordering: ExampleOrdering,
        target: Option<&'a CategoricalDistribution>,
        schema: Option<&'a AttributeSchema>,
    ) -> ExampleSpec<'a> {
        ExampleSpec {
            strategy,
            ordering,
            window: 5,
            epsilon: 1e-3,
            target,
            schema,
            static_example: None,
        }
    }

    #[test]
    fn target_strategy_demonstrates_the_greedy_order() {
        let window = window();
        let target = dist(&[0.6, 0.4]);
        let schema = schema();
        let example = build_example(
            &Query::new("L1", "who designs buildings"),
            &run_of(&window),
            &corpus_of(&window),
            &spec(ExampleStrategy::Target, ExampleOrdering::FirstStage, Some(&target), Some(&schema)),
            &mut SeededRng::new(42),
        )
        .unwrap();
        // First-stage display order with the greedy ranking expressed as
        // display indices: ⟨D1, D3, D2, D5, D4⟩ → [1, 3, 2, 5, 4].
        assert_eq!(ids(&example.documents), vec!["D1", "D2", "D3", "D4", "D5"]);
        assert_eq!(example.target_order, vec![1, 3, 2, 5, 4]);
        assert_eq!(ids(&example.ranked_documents().into_iter().cloned().collect::<Vec<_>>()),
                   vec!["D1", "D3", "D2", "D5", "D4"]);
    }

    #[test]
    fn adversarial_strategy_runs_greedy_under_the_reversed_target() {
        let window = window();
        let target = dist(&[0.6, 0.4]);
        let schema = schema();
        let example = build_example(
            &Query::new("L1", "q"),
            &run_of(&window),
            &corpus_of(&window),
            &spec(ExampleStrategy::Adversarial, ExampleOrdering::FirstStage, Some(&target), Some(&schema)),
            &mut SeededRng::new(42),
        )
        .unwrap();
        assert_eq!(example.target_order, vec![3, 1, 5, 2, 4]); // ⟨D3,D1,D5,D2,D4⟩
    }

    #[test]
    fn relevant_strategy_with_shuffle_maps_back_to_first_stage_order() {
        let window = window();
        let target = dist(&[0.6, 0.4]);
        let schema = schema();
        let example = build_example(
            &Query::new("L1", "q"),
            &run_of(&window),
            &corpus_of(&window),
            &spec(ExampleStrategy::Relevant, ExampleOrdering::RandomSeeded, Some(&target), Some(&schema)),
            &mut SeededRng::new(42),
        )
        .unwrap();
        // Whatever the display shuffle, following target_order recovers
        // the first-stage ranking D1..D5.
        let ranked: Vec<&str> =
            example.ranked_documents().iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ranked, vec!["D1", "D2", "D3", "D4", "D5"]);
        // And every display index occurs exactly once.
        let mut sorted = example.target_order.clone();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn uniform_strategy_renormalizes_over_groups_present_in_the_window() {
        // All-M window: uniform-over-present collapses to a point mass on
        // M, so the order is just first-stage — no KL pressure toward a
        // group that cannot be shown.
        let docs: Vec<Document> = (0..5)
            .map(|i| Document::new(format!("d{i}"), "t").with_attribute(M))
            .collect();
        let schema = schema();
        let example = build_example(
            &Query::new("L1", "q"),
            &run_of(&docs),
            &corpus_of(&docs),
            &spec(ExampleStrategy::Uniform, ExampleOrdering::FirstStage, None, Some(&schema)),
            &mut SeededRng::new(42),
        )
        .unwrap();
        assert_eq!(example.target_order, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn too_few_documents_is_an_error() {
        let window = window();
        let target = dist(&[0.6, 0.4]);
        let schema = schema();
        let mut s = spec(ExampleStrategy::Target, ExampleOrdering::FirstStage, Some(&target), Some(&schema));
        s.window = 9;
        let err = build_example(
            &Query::new("L1", "q"),
            &run_of(&window),
            &corpus_of(&window),
            &s,
            &mut SeededRng::new(42),
        )
        .unwrap_err();
        assert_eq!(err, ExampleError::TooFewDocuments { found: 5, needed: 9 });
    }

    #[test]
    fn target_strategy_without_a_target_is_an_error() {
        let window = window();
        let schema = schema();
        let err = build_example(
            &Query::new("L1", "q"),
            &run_of(&window),
            &corpus_of(&window),
            &spec(ExampleStrategy::Target, ExampleOrdering::FirstStage, None, Some(&schema)),
            &mut SeededRng::new(42),
        )
        .unwrap_err();
        assert_eq!(err, ExampleError::MissingTarget { strategy: "target".into() });
    }

    #[test]
    fn static_strategy_returns_the_configured_example_untouched() {
        let fixed = IclExample {
            example_query: Query::new("S", "static query"),
            documents: window(),
            target_order: vec![5, 4, 3, 2, 1],
            strategy: ExampleStrategy::Static,
        };
        let window = window();
        let mut s = spec(ExampleStrategy::Static, ExampleOrdering::FirstStage, None, None);
        s.static_example = Some(&fixed);
        let example = build_example(
            &Query::new("L1", "ignored"),
            &run_of(&window),
            &corpus_of(&window),
            &s,
            &mut SeededRng::new(42),
        )
        .unwrap();
        assert_eq!(example, fixed);
        // Without the configured example it is an error.
        s.static_example = None;
        let err = build_example(
            &Query::new("L1", "ignored"),
            &run_of(&window),
            &corpus_of(&window),
            &s,
            &mut SeededRng::new(42),
        )
        .unwrap_err();
        assert_eq!(err, ExampleError::MissingStaticExample);
    }

    #[test]
    fn shuffled_display_is_deterministic_per_seed() {
        let window = window();
        let target = dist(&[0.6, 0.4]);
        let schema = schema();
        let s = spec(ExampleStrategy::Target, ExampleOrdering::RandomSeeded, Some(&target), Some(&schema));
        let q = Query::new("L1", "q");
        let a = build_example(&q, &run_of(&window), &corpus_of(&window), &s, &mut SeededRng::new(7)).unwrap();
        let b = build_example(&q, &run_of(&window), &corpus_of(&window), &s, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
    }

    // ── property tests ──

    /// Brute-force step rule: re-derives each greedy pick directly from
    /// the definition, with its own KL expression.
    fn brute_force_next(
        remaining: &[(usize, usize)], // (first-stage pos, group) not yet picked, in order
        counts: &[u64],
        target: &[f64],
        epsilon: f64,
    ) -> usize {
        let k = target.len();
        let mut best: Option<(f64, usize)> = None;
        let mut heads_seen = vec![false; k];
        for &(pos, g) in remaining {
            if heads_seen[g] {
                continue; // only the earliest remaining doc per group is a queue head
            }
            heads_seen[g] = true;
            let total: u64 = counts.iter().sum::<u64>() + 1;
            let denom = total as f64 + k as f64 * epsilon;
            let mut kl = 0.0;
            for (i, &t) in target.iter().enumerate() {
                if t > 0.0 {
                    let c = counts[i] + u64::from(i == g);
                    kl += t * (t / ((c as f64 + epsilon) / denom)).ln();
                }
            }
            if best.is_none() || kl < best.unwrap().0 || (kl == best.unwrap().0 && pos < best.unwrap().1) {
                best = Some((kl, pos));
            }
        }
        best.unwrap().1
    }

    proptest! {
        #[test]
        fn greedy_output_is_a_permutation_preserving_group_order(
            groups in proptest::collection::vec(0usize..3, 1..12),
            t0 in 0.05f64..1.0, t1 in 0.05f64..1.0, t2 in 0.05f64..1.0,
        ) {
            let schema = AttributeSchema::new("g", vec!["a".into(), "b".into(), "c".into()]).unwrap();
            let docs: Vec<Document> = groups.iter().enumerate()
                .map(|(i, g)| Document::new(format!("d{i:02}"), "").with_attribute(*g))
                .collect();
            let sum = t0 + t1 + t2;
            let target = CategoricalDistribution::new(vec![t0/sum, t1/sum, t2/sum]).unwrap();
            let queues = partition_by_attribute(&docs, &schema).unwrap();
            let ordered = greedy_rerank(queues, &target, 1e-3);

            // Permutation of the input.
            let mut got: Vec<&str> = ordered.iter().map(|d| d.doc_id.as_str()).collect();
            let mut want: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);

            // Within every group, first-stage order is preserved.
            for g in 0..3 {
                let in_order: Vec<&str> = docs.iter()
                    .filter(|d| d.attribute == Some(g))
                    .map(|d| d.doc_id.as_str()).collect();
                let out_order: Vec<&str> = ordered.iter()
                    .filter(|d| d.attribute == Some(g))
                    .map(|d| d.doc_id.as_str()).collect();
                prop_assert_eq!(in_order, out_order);
            }
        }

        #[test]
        fn greedy_agrees_with_a_brute_force_step_rule(
            groups in proptest::collection::vec(0usize..2, 1..10),
            t0 in 0.05f64..1.0, t1 in 0.05f64..1.0,
        ) {
            let schema = AttributeSchema::new("g", vec!["a".into(), "b".into()]).unwrap();
            let docs: Vec<Document> = groups.iter().enumerate()
                .map(|(i, g)| Document::new(format!("d{i:02}"), "").with_attribute(*g))
                .collect();
            let sum = t0 + t1;
            let tvec = vec![t0/sum, t1/sum];
            let target = CategoricalDistribution::new(tvec.clone()).unwrap();
            let queues = partition_by_attribute(&docs, &schema).unwrap();
            let ordered = greedy_rerank(queues, &target, 1e-3);

            let mut remaining: Vec<(usize, usize)> = groups.iter().cloned().enumerate().collect();
            let mut counts = vec![0u64; 2];
            for picked in &ordered {
                let pos = brute_force_next(&remaining, &counts, &tvec, 1e-3);
                let expected = format!("d{pos:02}");
                prop_assert_eq!(picked.doc_id.as_str(), expected.as_str());
                counts[groups[pos]] += 1;
                remaining.retain(|&(p, _)| p != pos);
            }
        }
    }
}
