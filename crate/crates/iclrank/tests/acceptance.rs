//! Acceptance suite: one test per release criterion. Each test prints a
//! single `[PASS]`/`[FAIL]` line describing what was checked; run with
//!
//! ```text
//! cargo test --test acceptance -- --nocapture --test-threads=1
//! ```
//!
//! to see all eleven lines in order. Every check is self-contained:
//! reference values are either computed by an independent in-test
//! reimplementation or enumerated exhaustively.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use iclrank::distribution::{
    adversarial_distribution, prefix_distribution, smoothed_kl, target_distribution,
    CategoricalDistribution,
};
use iclrank::example_builder::{
    greedy_rerank, greedy_rerank_with_trace, partition_by_attribute, ExampleOrdering,
};
use iclrank::io;
use iclrank::llm_rerank::{expected_llm_calls, sliding_window_rerank, GarbageClient, RerankParams};
use iclrank::metrics::{alpha_ndcg_at, awrf_at, m1_at, ndcg_at, paired_t_test, Qrels};
use iclrank::mmr::{mmr_rerank, MmrConfig};
use iclrank::pipeline::{
    cmd_evaluate, cmd_make_examples, cmd_rerank, ClientKind, Mode, Objective, PipelineConfig,
};
use iclrank::rng::SeededRng;
use iclrank::types::{AttributeSchema, Document, Query, RankedEntry, RankedList};

// ─── Harness ─────────────────────────────────────────────────────────────────

/// Prints the one-line verdict and fails the test on Err.
fn report(number: usize, name: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("[PASS] criterion {number:>2} — {name}: {detail}"),
        Err(detail) => {
            println!("[FAIL] criterion {number:>2} — {name}: {detail}");
            panic!("criterion {number} ({name}) failed: {detail}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !($cond) {
            return Err(format!($($arg)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn toy_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy").join(name)
}

/// The bundled toy collection with offline-friendly settings.
fn toy_config() -> PipelineConfig {
    let mut config = PipelineConfig::default();
    config.corpus = Some(toy_path("corpus.jsonl"));
    config.queries = Some(toy_path("queries.tsv"));
    config.query_log = Some(toy_path("querylog.tsv"));
    config.first_stage_run = Some(toy_path("firststage.run"));
    config.qrels = Some(toy_path("qrels.txt"));
    config.attributes = Some(toy_path("attributes.tsv"));
    config.window = 5;
    config.stride = 3;
    config.depth = 10;
    config.ordering = ExampleOrdering::FirstStage;
    config.client = ClientKind::Identity;
    config
}

/// All permutations of `0..n` (Heap's algorithm), for exhaustive checks.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(items, k - 1, out);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(&mut items, n, &mut out);
    out
}

// ─── Criterion 1: worked-example fidelity ────────────────────────────────────

#[test]
fn criterion_01_worked_example_fidelity() {
    report(1, "worked-example fidelity", (|| {
        // Five documents in first-stage order with groups (M, M, F, M, F)
        // and a target of 60% M / 40% F. Schema labels sort, so F is
        // group 0 and M is group 1; the target vector is (0.4, 0.6).
        let schema =
            AttributeSchema::new("group", vec!["F".into(), "M".into()]).map_err(fail)?;
        let groups = [1usize, 1, 0, 1, 0];
        let docs: Vec<Document> = groups
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                Document::new(format!("D{}", i + 1), format!("passage {}", i + 1))
                    .with_attribute(g)
            })
            .collect();
        let target = CategoricalDistribution::new(vec![0.4, 0.6]).map_err(fail)?;
        let queues = partition_by_attribute(&docs, &schema).map_err(fail)?;

        let started = Instant::now();
        let ordered = greedy_rerank(queues, &target, 1e-3);
        let elapsed = started.elapsed();

        let ids: Vec<&str> = ordered.iter().map(|d| d.doc_id.as_str()).collect();
        ensure!(
            ids == ["D1", "D3", "D2", "D5", "D4"],
            "expected D1 > D3 > D2 > D5 > D4, got {ids:?}"
        );
        ensure!(elapsed < Duration::from_millis(1), "took {elapsed:?}, budget is 1 ms");
        Ok(format!(
            "input (M, M, F, M, F) with target (0.6 M, 0.4 F) orders as D1 > D3 > D2 > D5 > D4 \
             in {elapsed:?}"
        ))
    })());
}

// ─── Criterion 2: greedy oracle equivalence ──────────────────────────────────

/// Independent reimplementation of the smoothed divergence, written to
/// the same arithmetic sequence so tie comparisons are bit-compatible.
fn bf_kl(target: &[f64], counts: &[u64], epsilon: f64) -> f64 {
    let k = target.len() as f64;
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + k * epsilon;
    let mut kl = 0.0;
    for (i, &t) in target.iter().enumerate() {
        if t > 0.0 {
            let p_hat = (counts[i] as f64 + epsilon) / denom;
            kl += t * (t / p_hat).ln();
        }
    }
    kl
}

/// Independent step rule: per-group FIFO queues over first-stage
/// positions; each step emits the queue head minimizing the smoothed
/// divergence of the extended prefix, ties by earlier first-stage
/// position. Returns chosen positions and the per-step divergence.
fn bf_greedy(sequence: &[usize], target: &[f64], epsilon: f64) -> (Vec<usize>, Vec<f64>) {
    let k = target.len();
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &g) in sequence.iter().enumerate() {
        queues[g].push(pos);
    }
    let mut cursor = vec![0usize; k];
    let mut counts = vec![0u64; k];
    let mut order = Vec::with_capacity(sequence.len());
    let mut divergences = Vec::with_capacity(sequence.len());
    for _ in 0..sequence.len() {
        let mut best: Option<(f64, usize, usize)> = None; // (kl, pos, group)
        for g in 0..k {
            if cursor[g] >= queues[g].len() {
                continue;
            }
            let pos = queues[g][cursor[g]];
            counts[g] += 1;
            let kl = bf_kl(target, &counts, epsilon);
            counts[g] -= 1;
            let better = match best {
                None => true,
                Some((bk, bp, _)) => kl < bk || (kl == bk && pos < bp),
            };
            if better {
                best = Some((kl, pos, g));
            }
        }
        let (kl, pos, g) = best.expect("some queue is non-empty");
        cursor[g] += 1;
        counts[g] += 1;
        order.push(pos);
        divergences.push(kl);
    }
    (order, divergences)
}

#[test]
fn criterion_02_greedy_oracle_equivalence() {
    report(2, "greedy oracle equivalence", (|| {
        let epsilon = 1e-3;
        let targets_for = |k: usize| -> Vec<Vec<f64>> {
            match k {
                1 => vec![vec![1.0]],
                2 => vec![vec![0.5, 0.5], vec![0.6, 0.4]],
                3 => vec![vec![1.0 / 3.0; 3], vec![0.5, 0.3, 0.2]],
                _ => unreachable!(),
            }
        };

        let started = Instant::now();
        let mut cases = 0usize;
        for k in 1..=3usize {
            let schema = AttributeSchema::new(
                "group",
                (0..k).map(|g| format!("g{g}")).collect(),
            )
            .map_err(fail)?;
            for m in 1..=8usize {
                let total = (k as u64).pow(m as u32);
                for code in 0..total {
                    // Decode the attribute sequence in base k.
                    let mut sequence = vec![0usize; m];
                    let mut rest = code;
                    for slot in sequence.iter_mut() {
                        *slot = (rest % k as u64) as usize;
                        rest /= k as u64;
                    }
                    let docs: Vec<Document> = sequence
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| {
                            Document::new(format!("d{i:02}"), format!("text {i}"))
                                .with_attribute(g)
                        })
                        .collect();
                    for probs in targets_for(k) {
                        let target =
                            CategoricalDistribution::new(probs.clone()).map_err(fail)?;
                        let queues = partition_by_attribute(&docs, &schema).map_err(fail)?;
                        let (ordered, trace) =
                            greedy_rerank_with_trace(queues, &target, epsilon);
                        let (expected_order, expected_kls) =
                            bf_greedy(&sequence, &probs, epsilon);
                        for step in 0..m {
                            let expected_id = format!("d{:02}", expected_order[step]);
                            ensure!(
                                ordered[step].doc_id == expected_id,
                                "sequence {sequence:?}, target {probs:?}, step {step}: \
                                 greedy chose {}, independent rule chose {expected_id}",
                                ordered[step].doc_id
                            );
                            ensure!(
                                (trace[step] - expected_kls[step]).abs() <= 1e-12,
                                "sequence {sequence:?}, target {probs:?}, step {step}: \
                                 divergence {} vs {}",
                                trace[step],
                                expected_kls[step]
                            );
                        }
                        cases += 1;
                    }
                }
            }
        }
        let elapsed = started.elapsed();
        ensure!(cases >= 10_000, "only {cases} cases enumerated");
        ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}, budget is 60 s");
        Ok(format!(
            "{cases} exhaustively enumerated cases (m ≤ 8, k ≤ 3, uniform and skewed targets) \
             match the independent step rule exactly, in {elapsed:.2?}"
        ))
    })());
}

// ─── Criterion 3: permutation safety ─────────────────────────────────────────

#[test]
fn criterion_03_permutation_safety() {
    report(3, "permutation safety", (|| {
        // One shared corpus; per-run length and garbage stream vary.
        let corpus: HashMap<String, Document> = (0..120)
            .map(|i| {
                let doc = Document::new(
                    format!("d{i:03}"),
                    format!("passage number {i} with its own distinct wording {i}"),
                );
                (doc.doc_id.clone(), doc)
            })
            .collect();
        let params = RerankParams::default(); // window 20, stride 10, depth 100

        let started = Instant::now();
        let mut rng = SeededRng::new(0xC3);
        let mut windows_total = 0usize;
        for case in 0..1000 {
            let n = 2 + rng.below(119) as usize; // 2..=120 candidates
            let entries: Vec<RankedEntry> = (0..n)
                .map(|i| RankedEntry::new(format!("d{i:03}"), (n - i) as f64))
                .collect();
            let first_stage =
                RankedList::from_ordered(format!("g{case}"), "bm25", entries).map_err(fail)?;
            let query = Query::new(format!("g{case}"), format!("robustness query {case}"));
            let client = GarbageClient::new(rng.next_u64());

            let outcome = sliding_window_rerank(&client, &query, &first_stage, &corpus, &params)
                .map_err(fail)?;

            ensure!(
                outcome.list.len() == first_stage.len(),
                "case {case}: {} documents in, {} out",
                first_stage.len(),
                outcome.list.len()
            );
            let mut got: Vec<&str> = outcome.list.doc_ids().collect();
            let mut want: Vec<&str> = first_stage.doc_ids().collect();
            got.sort_unstable();
            want.sort_unstable();
            ensure!(got == want, "case {case}: output is not a permutation of the input");
            ensure!(outcome.llm_calls >= 1, "case {case}: no window was sent");
            ensure!(
                outcome.repaired_windows == outcome.llm_calls
                    && outcome.traces.iter().all(|t| t.repaired),
                "case {case}: some garbage window was not flagged as repaired"
            );
            windows_total += outcome.llm_calls;
        }
        let elapsed = started.elapsed();
        ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}, budget is 10 s");
        Ok(format!(
            "1000 garbage-mock reranks ({windows_total} windows) returned exact permutations \
             with every repair flagged, in {elapsed:.2?}"
        ))
    })());
}

// ─── Criterion 4: identity no-op ─────────────────────────────────────────────

#[test]
fn criterion_04_identity_no_op() {
    report(4, "identity no-op", (|| {
        let dir = tempfile::tempdir().map_err(fail)?;
        let n = 100usize;

        // Synthetic corpus, query, and first-stage run with messy
        // descending scores (so canonical re-scoring genuinely rewrites
        // every line).
        let mut corpus_lines = String::new();
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let doc = Document::new(
                format!("doc{i:03}"),
                format!("synthetic passage {i} about subject {}", i % 7),
            );
            corpus_lines.push_str(&serde_json::to_string(&doc).map_err(fail)?);
            corpus_lines.push('\n');
            entries.push(RankedEntry::new(doc.doc_id, 1000.0 / (i as f64 + 1.0)));
        }
        io::write_text(&dir.path().join("corpus.jsonl"), &corpus_lines).map_err(fail)?;
        io::write_text(&dir.path().join("queries.tsv"), "q100\tsynthetic benchmark query\n")
            .map_err(fail)?;
        let first_stage =
            RankedList::from_ordered("q100", "bm25", entries.clone()).map_err(fail)?;
        io::write_run(&dir.path().join("first.run"), &[first_stage]).map_err(fail)?;

        let mut config = PipelineConfig::default(); // window 20, stride 10, depth 100
        config.corpus = Some(dir.path().join("corpus.jsonl"));
        config.queries = Some(dir.path().join("queries.tsv"));
        config.first_stage_run = Some(dir.path().join("first.run"));
        config.client = ClientKind::Identity;
        config.mode = Mode::ZeroShot;

        // Expected output: the same order under canonical re-scoring
        // (score = list length − position) and the pipeline's tag.
        let expected = RankedList::from_ordered("q100", config.tag.clone(), entries)
            .map_err(fail)?
            .with_synthetic_scores();
        io::write_run(&dir.path().join("expected.run"), &[expected]).map_err(fail)?;

        let started = Instant::now();
        let summary = cmd_rerank(&config, &dir.path().join("out.run"), None).map_err(fail)?;
        let elapsed = started.elapsed();

        ensure!(
            summary.llm_calls == expected_llm_calls(100, 20, 10),
            "expected {} windows, sent {}",
            expected_llm_calls(100, 20, 10),
            summary.llm_calls
        );
        let got = fs::read(dir.path().join("out.run")).map_err(fail)?;
        let want = fs::read(dir.path().join("expected.run")).map_err(fail)?;
        ensure!(
            got == want,
            "identity rerank did not reproduce the canonically re-scored first-stage run"
        );
        ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}, budget is 5 s");
        Ok(format!(
            "depth 100 / window 20 / stride 10 identity rerank ({} chat calls) reproduced the \
             first-stage run byte-for-byte ({} bytes) in {elapsed:.2?}",
            summary.llm_calls,
            got.len()
        ))
    })());
}

// ─── Criterion 5: oracle ceiling ─────────────────────────────────────────────

#[test]
fn criterion_05_oracle_ceiling() {
    report(5, "oracle ceiling", (|| {
        let dir = tempfile::tempdir().map_err(fail)?;
        let mut config = toy_config();
        config.client = ClientKind::Oracle;
        config.mode = Mode::ZeroShot;
        config.objective = Objective::RelevanceOnly;
        // One window per query so the oracle sorts each list outright.
        config.window = 20;
        config.stride = 10;
        config.depth = 20;

        let out = dir.path().join("oracle.run");
        cmd_rerank(&config, &out, None).map_err(fail)?;
        let summary = cmd_evaluate(&config, &out, None, None, None).map_err(fail)?;

        let mean = *summary
            .report
            .means
            .get("ndcg@10")
            .ok_or_else(|| "report has no ndcg@10 mean".to_string())?;
        ensure!((mean - 1.0).abs() <= 1e-9, "mean nDCG@10 = {mean}, expected 1.0");
        for (query_id, metrics) in &summary.report.per_query {
            let value = metrics.get("ndcg@10").copied().unwrap_or_default();
            ensure!(
                (value - 1.0).abs() <= 1e-9,
                "query {query_id}: nDCG@10 = {value}, expected 1.0"
            );
        }
        Ok(format!(
            "oracle-mock rerank of the toy collection reaches nDCG@10 = {mean:.12} on all {} \
             queries",
            summary.report.per_query.len()
        ))
    })());
}

// ─── Criterion 6: metric correctness ─────────────────────────────────────────

fn bf_discount(rank_one_based: usize) -> f64 {
    1.0 / ((rank_one_based as f64) + 1.0).log2()
}

/// Independent linear-gain DCG.
fn bf_dcg(grades_in_rank_order: &[u32], cutoff: usize) -> f64 {
    grades_in_rank_order
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| f64::from(g) * bf_discount(i + 1))
        .sum()
}

/// Independent redundancy-discounted DCG: `subs[doc]` lists the
/// subtopics the document covers; each coverage after the first is
/// scaled by `(1 − alpha)` per prior coverage.
fn bf_alpha_dcg(order: &[usize], subs: &[Vec<usize>], alpha: f64, cutoff: usize) -> f64 {
    let topics = subs.iter().flatten().max().map_or(0, |&t| t + 1);
    let mut covered = vec![0u32; topics];
    let mut dcg = 0.0;
    for (i, &doc) in order.iter().take(cutoff).enumerate() {
        let mut gain = 0.0;
        for &s in &subs[doc] {
            gain += (1.0 - alpha).powi(covered[s] as i32);
        }
        dcg += gain * bf_discount(i + 1);
        for &s in &subs[doc] {
            covered[s] += 1;
        }
    }
    dcg
}

/// Independent Jensen–Shannon divergence in bits.
fn bf_js_base2(p: &[f64], q: &[f64]) -> f64 {
    let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let kl = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&mid)
            .filter(|(xi, _)| **xi > 0.0)
            .map(|(xi, mi)| xi * (xi / mi).log2())
            .sum()
    };
    0.5 * kl(p) + 0.5 * kl(q)
}

/// Independent exposure-alignment score at `cutoff`.
fn bf_awrf(groups_in_rank_order: &[usize], target: &[f64], cutoff: usize) -> f64 {
    let counted = groups_in_rank_order.len().min(cutoff);
    let total: f64 = (1..=counted).map(bf_discount).sum();
    let mut exposure = vec![0.0; target.len()];
    for (i, &g) in groups_in_rank_order.iter().take(counted).enumerate() {
        exposure[g] += bf_discount(i + 1) / total;
    }
    1.0 - bf_js_base2(&exposure, target)
}

#[test]
fn criterion_06_metric_correctness() {
    report(6, "metric correctness", (|| {
        let cutoff = 10usize;
        let alpha = 1.0f64;
        let doc_ids = ["A", "B", "C", "D"];
        let grades = [3u32, 2, 1, 0];
        // Subtopic coverage: A {s1}, B {s1, s2}, C {s2}, D judged but
        // covering nothing.
        let subs: Vec<Vec<usize>> = vec![vec![0], vec![0, 1], vec![1], vec![]];
        let patterns: [[usize; 4]; 3] = [[0, 0, 1, 1], [0, 1, 0, 1], [1, 0, 0, 1]];
        let target_probs = [0.7, 0.3];
        let target = CategoricalDistribution::new(target_probs.to_vec()).map_err(fail)?;

        let mut graded_qrels = Qrels::new();
        let mut subtopic_qrels = Qrels::new();
        for (i, id) in doc_ids.iter().enumerate() {
            graded_qrels.insert("q", id, grades[i]);
            if subs[i].is_empty() {
                subtopic_qrels.insert_subtopic("q", "s1", id, 0);
            }
            for &s in &subs[i] {
                subtopic_qrels.insert_subtopic("q", &format!("s{}", s + 1), id, 1);
            }
        }

        // Reference ideal for the redundancy-discounted metric: the
        // exhaustive maximum over every ordering of the judged pool.
        let ideal_alpha_dcg = permutations(4)
            .iter()
            .map(|p| bf_alpha_dcg(p, &subs, alpha, cutoff))
            .fold(f64::NEG_INFINITY, f64::max);
        ensure!(ideal_alpha_dcg > 0.0, "degenerate fixture: zero ideal");

        // Reference ideal for linear-gain DCG: grades sorted descending.
        let mut sorted = grades;
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let ideal_dcg = bf_dcg(&sorted, cutoff);

        let mut comparisons = 0usize;
        for perm in permutations(4) {
            let entries: Vec<RankedEntry> = perm
                .iter()
                .enumerate()
                .map(|(i, &doc)| RankedEntry::new(doc_ids[doc], (4 - i) as f64))
                .collect();
            let run = RankedList::from_ordered("q", "t", entries).map_err(fail)?;

            let perm_grades: Vec<u32> = perm.iter().map(|&d| grades[d]).collect();
            let expected_ndcg = bf_dcg(&perm_grades, cutoff) / ideal_dcg;
            let got_ndcg = ndcg_at(&run, &graded_qrels, cutoff);
            ensure!(
                (got_ndcg - expected_ndcg).abs() <= 1e-9,
                "permutation {perm:?}: nDCG {got_ndcg} vs {expected_ndcg}"
            );
            comparisons += 1;

            let expected_alpha = bf_alpha_dcg(&perm, &subs, alpha, cutoff) / ideal_alpha_dcg;
            let got_alpha = alpha_ndcg_at(&run, &subtopic_qrels, alpha, cutoff).map_err(fail)?;
            ensure!(
                (got_alpha - expected_alpha).abs() <= 1e-9,
                "permutation {perm:?}: alpha-nDCG {got_alpha} vs {expected_alpha}"
            );
            comparisons += 1;

            for pattern in &patterns {
                let attributes: std::collections::BTreeMap<String, usize> = doc_ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.to_string(), pattern[i]))
                    .collect();
                let perm_groups: Vec<usize> = perm.iter().map(|&d| pattern[d]).collect();
                let expected_awrf = bf_awrf(&perm_groups, &target_probs, cutoff);
                let got_awrf = awrf_at(&run, &attributes, &target, cutoff).map_err(fail)?;
                ensure!(
                    (got_awrf - expected_awrf).abs() <= 1e-9,
                    "permutation {perm:?}, pattern {pattern:?}: AWRF {got_awrf} vs \
                     {expected_awrf}"
                );
                comparisons += 1;

                let expected_m1 = expected_ndcg * expected_awrf;
                let got_m1 =
                    m1_at(&run, &graded_qrels, &attributes, &target, cutoff).map_err(fail)?;
                ensure!(
                    (got_m1 - expected_m1).abs() <= 1e-9,
                    "permutation {perm:?}, pattern {pattern:?}: M1 {got_m1} vs {expected_m1}"
                );
                comparisons += 1;
            }
        }
        Ok(format!(
            "nDCG, alpha-nDCG(α=1), AWRF, and M1 match independent brute force on all 24 \
             orderings × 3 attribute patterns ({comparisons} comparisons, tolerance 1e-9)"
        ))
    })());
}

// ─── Criterion 7: ablation direction ─────────────────────────────────────────

#[test]
fn criterion_07_ablation_direction() {
    report(7, "ablation direction", (|| {
        let epsilon = 1e-3;
        let window = 5usize;
        let corpus = io::read_corpus(&toy_path("corpus.jsonl")).map_err(fail)?;
        let qrels = io::read_qrels(&toy_path("qrels.txt")).map_err(fail)?;
        let (schema, attribute_map) =
            io::read_attributes(&toy_path("attributes.tsv")).map_err(fail)?;
        let runs = io::read_run(&toy_path("firststage.run")).map_err(fail)?;

        let with_attribute = |doc_id: &str| -> Result<Document, String> {
            let doc = corpus.get(doc_id).ok_or(format!("{doc_id} missing from corpus"))?;
            let group = *attribute_map
                .get(doc_id)
                .ok_or(format!("{doc_id} missing from attributes"))?;
            Ok(doc.clone().with_attribute(group))
        };

        let mean_prefix_kl = |ordering: &[Document],
                              target: &CategoricalDistribution|
         -> Result<f64, String> {
            let mut sum = 0.0;
            for t in 1..=ordering.len() {
                let counts = prefix_distribution(&ordering[..t], &schema).map_err(fail)?;
                sum += smoothed_kl(target, &counts, epsilon);
            }
            Ok(sum / ordering.len() as f64)
        };

        let mut lines = Vec::new();
        for query_id in ["q1", "q2", "q3"] {
            let run = runs
                .iter()
                .find(|r| r.query_id == query_id)
                .ok_or(format!("{query_id} missing from first-stage run"))?;
            let window_docs: Vec<Document> = run
                .entries()
                .iter()
                .take(window)
                .map(|e| with_attribute(&e.doc_id))
                .collect::<Result<_, _>>()?;

            // Eligibility: at least two groups in the window and a
            // non-uniform true target.
            let groups: std::collections::BTreeSet<usize> =
                window_docs.iter().filter_map(|d| d.attribute).collect();
            ensure!(groups.len() >= 2, "{query_id}: fewer than two groups in the window");
            let relevant: Vec<Document> = qrels
                .relevant_docs(query_id)
                .iter()
                .map(|id| with_attribute(id))
                .collect::<Result<_, _>>()?;
            let target = target_distribution(&relevant, &schema).map_err(fail)?;
            let uniform = 1.0 / schema.k() as f64;
            ensure!(
                target.probs().iter().any(|p| (p - uniform).abs() > 1e-12),
                "{query_id}: target is uniform"
            );

            let toward_target = greedy_rerank(
                partition_by_attribute(&window_docs, &schema).map_err(fail)?,
                &target,
                epsilon,
            );
            let reversed = adversarial_distribution(&target);
            let toward_reversed = greedy_rerank(
                partition_by_attribute(&window_docs, &schema).map_err(fail)?,
                &reversed,
                epsilon,
            );

            let kl_target = mean_prefix_kl(&toward_target, &target)?;
            let kl_reversed = mean_prefix_kl(&toward_reversed, &target)?;
            ensure!(
                kl_target < kl_reversed,
                "{query_id}: target-strategy mean prefix divergence {kl_target} is not \
                 strictly below the adversarial strategy's {kl_reversed}"
            );
            lines.push(format!("{query_id} {kl_target:.4} < {kl_reversed:.4}"));
        }
        Ok(format!(
            "target-strategy demonstrations track the true target strictly better than \
             adversarial ones on every eligible query ({})",
            lines.join(", ")
        ))
    })());
}

// ─── Criterion 8: alpha-nDCG collapse ────────────────────────────────────────

#[test]
fn criterion_08_alpha_ndcg_collapse() {
    report(8, "alpha-nDCG collapse", (|| {
        let cutoff = 10usize;
        let mut rng = SeededRng::new(0x08);
        for case in 0..200 {
            // First hundred: no redundancy discount (alpha = 0), any
            // number of relevant documents. Second hundred: full
            // discount (alpha = 1) with a single relevant document —
            // the two regimes in which a single subtopic makes the
            // diversity-aware score collapse to binary relevance.
            let single_relevant = case >= 100;
            let alpha = if single_relevant { 1.0 } else { 0.0 };

            let n = 3 + rng.below(18) as usize; // 3..=20 ranked documents
            let mut ids: Vec<String> = (0..n).map(|i| format!("d{i:02}")).collect();
            rng.shuffle(&mut ids);
            let relevant_count =
                if single_relevant { 1 } else { 1 + rng.below(n as u64) as usize };
            let mut pool = ids.clone();
            rng.shuffle(&mut pool);
            let relevant: Vec<String> = pool.iter().take(relevant_count).cloned().collect();

            let mut subtopic_qrels = Qrels::new();
            let mut flat_qrels = Qrels::new();
            for id in &relevant {
                subtopic_qrels.insert_subtopic("q", "s0", id, 1);
                flat_qrels.insert("q", id, 1);
            }
            // Sometimes judge an extra document irrelevant, and — in
            // the no-discount regime, where the ideals still agree —
            // sometimes add a relevant document the run never retrieved.
            if relevant_count < n && rng.below(2) == 0 {
                let loser = pool[relevant_count].as_str();
                subtopic_qrels.insert_subtopic("q", "s0", loser, 0);
                flat_qrels.insert("q", loser, 0);
            }
            if !single_relevant && rng.below(3) == 0 {
                let ghost = format!("ghost{case}");
                subtopic_qrels.insert_subtopic("q", "s0", &ghost, 1);
                flat_qrels.insert("q", &ghost, 1);
            }

            let entries: Vec<RankedEntry> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedEntry::new(id.clone(), (n - i) as f64))
                .collect();
            let run = RankedList::from_ordered("q", "t", entries).map_err(fail)?;

            let diversity = alpha_ndcg_at(&run, &subtopic_qrels, alpha, cutoff).map_err(fail)?;
            let binary = ndcg_at(&run, &flat_qrels, cutoff);
            ensure!(
                (diversity - binary).abs() <= 1e-9,
                "case {case} (alpha {alpha}, {relevant_count} relevant of {n}): \
                 alpha-nDCG@10 = {diversity} vs binary nDCG@10 = {binary}"
            );
        }
        Ok("single-subtopic alpha-nDCG@10 equals binary nDCG@10 on 200 random fixtures \
            (100 at α=0 with any relevance count, 100 at α=1 with one relevant document), \
            tolerance 1e-9"
            .to_string())
    })());
}

// ─── Criterion 9: MMR degeneracy ─────────────────────────────────────────────

#[test]
fn criterion_09_mmr_degeneracy() {
    report(9, "MMR degeneracy", (|| {
        // λ = 1 must reproduce the first-stage order everywhere: on
        // every toy list and on 50 synthetic runs with random texts.
        let toy_corpus = io::read_corpus(&toy_path("corpus.jsonl")).map_err(fail)?;
        let toy_runs = io::read_run(&toy_path("firststage.run")).map_err(fail)?;
        let identity = MmrConfig { lambda: 1.0, depth: 100 };
        let mut lists_checked = 0usize;
        for run in &toy_runs {
            let out = mmr_rerank(run, &toy_corpus, &identity).map_err(fail)?;
            let got: Vec<&str> = out.doc_ids().collect();
            let want: Vec<&str> = run.doc_ids().take(identity.depth).collect();
            ensure!(got == want, "λ=1 changed the order of toy query {}", run.query_id);
            lists_checked += 1;
        }

        let mut rng = SeededRng::new(0x09);
        for case in 0..50 {
            let n = 1 + rng.below(40) as usize;
            let mut corpus = HashMap::new();
            let mut entries = Vec::with_capacity(n);
            for i in 0..n {
                let words: Vec<String> =
                    (0..5 + rng.below(10)).map(|_| format!("w{}", rng.below(30))).collect();
                let doc = Document::new(format!("s{case}-{i:02}"), words.join(" "));
                corpus.insert(doc.doc_id.clone(), doc);
                entries.push(RankedEntry::new(format!("s{case}-{i:02}"), (n - i) as f64));
            }
            let run =
                RankedList::from_ordered(format!("s{case}"), "bm25", entries).map_err(fail)?;
            let out = mmr_rerank(&run, &corpus, &identity).map_err(fail)?;
            let got: Vec<&str> = out.doc_ids().collect();
            let want: Vec<&str> = run.doc_ids().take(identity.depth).collect();
            ensure!(got == want, "λ=1 changed the order of synthetic run {case}");
            lists_checked += 1;
        }

        // λ = 0 on the duplicate-pair fixture: two copies of the same
        // text lead, a distinct document trails; pure-diversity
        // selection must pull the distinct document up to second.
        let mut corpus = HashMap::new();
        for (id, text) in [
            ("dup1", "identical twin passage about rivers"),
            ("dup2", "identical twin passage about rivers"),
            ("distinct", "completely different passage about telescopes"),
        ] {
            corpus.insert(id.to_string(), Document::new(id, text));
        }
        let run = RankedList::from_ordered(
            "dup",
            "bm25",
            vec![
                RankedEntry::new("dup1", 3.0),
                RankedEntry::new("dup2", 2.0),
                RankedEntry::new("distinct", 1.0),
            ],
        )
        .map_err(fail)?;
        let out =
            mmr_rerank(&run, &corpus, &MmrConfig { lambda: 0.0, depth: 100 }).map_err(fail)?;
        let order: Vec<&str> = out.doc_ids().collect();
        ensure!(
            order == ["dup1", "distinct", "dup2"],
            "λ=0 on the duplicate-pair fixture gave {order:?}, expected the distinct document \
             second"
        );
        Ok(format!(
            "λ=1 reproduced the first-stage order on all {lists_checked} fixtures; λ=0 ranked \
             the distinct document second on the duplicate-pair fixture"
        ))
    })());
}

// ─── Criterion 10: statistical machinery ─────────────────────────────────────

#[test]
fn criterion_10_statistical_machinery() {
    report(10, "statistical machinery", (|| {
        // Paired samples with differences (1, 2, 3, 4, 5): mean 3,
        // sample sd √2.5, t = 3 / (√2.5 / √5) = 4.2426…, df = 4, and a
        // two-sided p of 0.013236 from the t distribution.
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (t, p) = paired_t_test(&a, &b).map_err(fail)?;
        ensure!((t - 4.242640687119285).abs() <= 1e-3, "t = {t}, expected ≈ 4.2426");
        ensure!((p - 0.013235599563682695).abs() <= 1e-3, "p = {p}, expected ≈ 0.013236");
        Ok(format!("paired t-test gives t = {t:.4} (df = 4), p = {p:.6}; reference 4.2426 / \
                    0.013236, tolerance 1e-3"))
    })());
}

// ─── Criterion 11: determinism ───────────────────────────────────────────────

#[test]
fn criterion_11_determinism() {
    report(11, "determinism", (|| {
        // Full offline pipeline — demonstrations, garbage-mock rerank,
        // evaluation — run twice with the same seed into different
        // directories; every artifact must match byte-for-byte.
        let run_once = |dir: &Path| -> Result<(), String> {
            let mut config = toy_config();
            config.mode = Mode::Icl;
            config.ordering = ExampleOrdering::RandomSeeded;
            config.client = ClientKind::Garbage;
            config.seed = 42;
            config.examples = Some(dir.join("examples.jsonl"));
            cmd_make_examples(&config, &dir.join("examples.jsonl")).map_err(fail)?;
            cmd_rerank(&config, &dir.join("out.run"), Some(&dir.join("transcript.jsonl")))
                .map_err(fail)?;
            cmd_evaluate(
                &config,
                &dir.join("out.run"),
                None,
                Some(&dir.join("report.tsv")),
                Some(&dir.join("report.json")),
            )
            .map_err(fail)?;
            Ok(())
        };

        let first = tempfile::tempdir().map_err(fail)?;
        let second = tempfile::tempdir().map_err(fail)?;
        run_once(first.path())?;
        run_once(second.path())?;

        let files =
            ["examples.jsonl", "out.run", "transcript.jsonl", "report.tsv", "report.json"];
        let mut bytes_compared = 0usize;
        for name in files {
            let a = fs::read(first.path().join(name)).map_err(fail)?;
            let b = fs::read(second.path().join(name)).map_err(fail)?;
            ensure!(!a.is_empty(), "{name} came out empty");
            ensure!(a == b, "{name} differs between identically-seeded runs");
            bytes_compared += a.len();
        }
        Ok(format!(
            "two identically-seeded pipeline runs (demonstrations, garbage-mock rerank, \
             evaluation) produced byte-identical artifacts ({} files, {bytes_compared} bytes)",
            files.len()
        ))
    })());
}
