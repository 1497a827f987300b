//! Readers and writers for every on-disk format the pipeline touches:
//! run files, relevance judgments, corpora, query tables, group and
//! cluster tables, demonstration records, chat transcripts, and the
//! serialized query-log index.
//!
//! Text formats follow the common TREC conventions — whitespace-separated
//! run and judgment lines, tab-separated id/text tables — and every parse
//! failure reports the file and 1-based line number it came from. Writers
//! are deterministic: the same in-memory value always serializes to the
//! same bytes, which is what makes runs reproducible and diffable.

use std::collections::{btree_map, BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::example_builder::IclExample;
use crate::llm_rerank::WindowTrace;
use crate::metrics::Qrels;
use crate::query_log::QueryLogIndex;
use crate::topic_cluster::ClusterAssignment;
use crate::types::{AttributeSchema, Document, Query, RankedEntry, RankedList};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}", path = path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}", path = path.display())]
    Invalid { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn invalid_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Invalid { path: path.to_path_buf(), message: message.into() }
}

/// Iterates a text file's non-empty lines as `(line_number, content)`,
/// with line numbers 1-based over *all* physical lines and trailing
/// carriage returns stripped.
fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        f(idx + 1, line)?;
    }
    Ok(())
}

/// Writes `contents` to `path`, mapping failures to [`IoError`].
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

// ─── Query tables ────────────────────────────────────────────────────────────

/// Reads a tab-separated `query_id<TAB>text` table (one query per line).
/// Used for both test query sets and query logs. Blank lines are skipped;
/// duplicate ids are rejected.
pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    let mut queries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for_each_line(path, |lineno, line| {
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected `query_id<TAB>text`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(parse_err(path, lineno, "empty query id"));
        }
        if let Some(first) = seen.insert(id.to_string(), lineno) {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate query id `{id}` (first seen on line {first})"),
            ));
        }
        queries.push(Query::new(id, text.trim()));
        Ok(())
    })?;
    Ok(queries)
}

// ─── Corpora ─────────────────────────────────────────────────────────────────

/// Reads a JSONL corpus, one `{"doc_id": ..., "text": ...}` object per
/// line. Unknown fields are ignored so corpora carrying extra metadata
/// (titles, URLs) load as-is. Duplicate doc ids are rejected.
pub fn read_corpus(path: &Path) -> Result<HashMap<String, Document>> {
    let mut corpus = HashMap::new();
    for_each_line(path, |lineno, line| {
        let doc: Document = serde_json::from_str(line)
            .map_err(|e| parse_err(path, lineno, format!("invalid document record: {e}")))?;
        if doc.doc_id.is_empty() {
            return Err(parse_err(path, lineno, "empty doc_id"));
        }
        if corpus.insert(doc.doc_id.clone(), doc.clone()).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate doc_id `{}`", doc.doc_id)));
        }
        Ok(())
    })?;
    Ok(corpus)
}

// ─── Run files ───────────────────────────────────────────────────────────────

/// Reads a six-column run file (`query_id Q0 doc_id rank score tag`,
/// whitespace-separated). Lines are grouped by query in order of first
/// appearance and each group is put in canonical order — descending
/// score, ties by ascending doc id — so the rank column is advisory and
/// the scores are authoritative, matching the usual evaluation-tool
/// convention. Each query's tag is taken from its first line.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (String, Vec<RankedEntry>)> = HashMap::new();
    for_each_line(path, |lineno, line| {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "expected 6 fields `query_id Q0 doc_id rank score tag`, got {}",
                    fields.len()
                ),
            ));
        }
        let (query_id, doc_id, rank, score, tag) =
            (fields[0], fields[2], fields[3], fields[4], fields[5]);
        rank.parse::<i64>()
            .map_err(|_| parse_err(path, lineno, format!("rank `{rank}` is not an integer")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("score `{score}` is not a number")))?;
        if !score.is_finite() {
            return Err(parse_err(path, lineno, format!("score `{score}` is not finite")));
        }
        let group = groups.entry(query_id.to_string()).or_insert_with(|| {
            order.push(query_id.to_string());
            (tag.to_string(), Vec::new())
        });
        group.1.push(RankedEntry::new(doc_id, score));
        Ok(())
    })?;

    let mut lists = Vec::with_capacity(order.len());
    for query_id in order {
        let (tag, entries) = groups.remove(&query_id).expect("grouped above");
        let list = RankedList::canonicalize(query_id, tag, entries)
            .map_err(|e| invalid_err(path, e.to_string()))?;
        lists.push(list);
    }
    Ok(lists)
}

/// Writes ranked lists in the six-column run format. Ranks are 1-based
/// positions; scores use Rust's shortest round-trip float formatting so a
/// written run reads back to exactly the same values.
pub fn write_run(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for list in lists {
        for (i, entry) in list.entries().iter().enumerate() {
            writeln!(
                out,
                "{} Q0 {} {} {} {}",
                list.query_id,
                entry.doc_id,
                i + 1,
                entry.score,
                list.tag
            )
            .map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

// ─── Relevance judgments ─────────────────────────────────────────────────────

/// Reads four-column judgments (`query_id key doc_id grade`,
/// whitespace-separated). When the second column is the literal `0` —
/// the classic unused-iteration column — the line is a plain graded
/// judgment; any other value is treated as a subtopic identifier and the
/// line additionally marks the document as covering that subtopic.
/// Negative grades (used by some collections for junk pages) clamp to 0.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for_each_line(path, |lineno, line| {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 4 fields `query_id key doc_id grade`, got {}", fields.len()),
            ));
        }
        let (query_id, key, doc_id, grade) = (fields[0], fields[1], fields[2], fields[3]);
        let grade: i64 = grade
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("grade `{grade}` is not an integer")))?;
        let grade = u32::try_from(grade.max(0))
            .map_err(|_| parse_err(path, lineno, format!("grade `{grade}` is out of range")))?;
        if key == "0" {
            qrels.insert(query_id, doc_id, grade);
        } else {
            qrels.insert_subtopic(query_id, key, doc_id, grade);
        }
        Ok(())
    })?;
    Ok(qrels)
}

// ─── Group attributes ────────────────────────────────────────────────────────

/// Reads a tab-separated `doc_id<TAB>attribute_label` table and returns
/// the schema (distinct labels, sorted, under the attribute name
/// `group`) plus each document's group index under that schema.
pub fn read_attributes(path: &Path) -> Result<(AttributeSchema, BTreeMap<String, usize>)> {
    let mut labels_by_doc: BTreeMap<String, String> = BTreeMap::new();
    for_each_line(path, |lineno, line| {
        let (doc_id, label) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected `doc_id<TAB>attribute_label`"))?;
        let (doc_id, label) = (doc_id.trim(), label.trim());
        if doc_id.is_empty() || label.is_empty() {
            return Err(parse_err(path, lineno, "empty doc_id or attribute label"));
        }
        match labels_by_doc.entry(doc_id.to_string()) {
            btree_map::Entry::Vacant(slot) => {
                slot.insert(label.to_string());
                Ok(())
            }
            btree_map::Entry::Occupied(_) => {
                Err(parse_err(path, lineno, format!("duplicate doc_id `{doc_id}`")))
            }
        }
    })?;

    let mut labels: Vec<String> = labels_by_doc.values().cloned().collect();
    labels.sort();
    labels.dedup();
    let schema = AttributeSchema::new("group", labels)
        .map_err(|e| invalid_err(path, e.to_string()))?;
    let map = labels_by_doc
        .into_iter()
        .map(|(doc_id, label)| {
            let index = schema.index_of(&label).expect("label came from the schema");
            (doc_id, index)
        })
        .collect();
    Ok((schema, map))
}

// ─── Cluster tables ──────────────────────────────────────────────────────────

/// Writes per-query cluster assignments as tab-separated
/// `query_id<TAB>doc_id<TAB>cluster` lines, documents in ascending id
/// order within each query.
pub fn write_clusters(path: &Path, assignments: &[ClusterAssignment]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for assignment in assignments {
        for (doc_id, label) in assignment.iter() {
            writeln!(out, "{}\t{}\t{}", assignment.query_id, doc_id, label)
                .map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Reads a cluster table back into per-query assignments. Each query's
/// cluster count is one past its largest label.
pub fn read_clusters(path: &Path) -> Result<BTreeMap<String, ClusterAssignment>> {
    let mut labels: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for_each_line(path, |lineno, line| {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected `query_id<TAB>doc_id<TAB>cluster`, got {} fields", fields.len()),
            ));
        }
        let cluster: usize = fields[2].trim().parse().map_err(|_| {
            parse_err(path, lineno, format!("cluster `{}` is not an integer", fields[2]))
        })?;
        let by_doc = labels.entry(fields[0].to_string()).or_default();
        if by_doc.insert(fields[1].to_string(), cluster).is_some() {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate doc_id `{}` for query `{}`", fields[1], fields[0]),
            ));
        }
        Ok(())
    })?;
    Ok(labels
        .into_iter()
        .map(|(query_id, by_doc)| {
            let k = by_doc.values().max().map_or(0, |&m| m + 1);
            let assignment = ClusterAssignment::new(query_id.clone(), by_doc, k);
            (query_id, assignment)
        })
        .collect())
}

// ─── Demonstration records ───────────────────────────────────────────────────

/// One constructed demonstration, keyed by the test query it was built
/// for. Serialized flat: the record's JSON carries `test_query_id` next
/// to the example's own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub test_query_id: String,
    #[serde(flatten)]
    pub example: IclExample,
}

/// Rejects demonstrations whose `target_order` is not a permutation of
/// `1..=documents.len()`.
fn validate_example(example: &IclExample) -> std::result::Result<(), String> {
    let m = example.documents.len();
    if example.target_order.len() != m {
        return Err(format!(
            "target_order has {} entries but the example has {m} documents",
            example.target_order.len()
        ));
    }
    let mut sorted = example.target_order.clone();
    sorted.sort_unstable();
    if sorted != (1..=m).collect::<Vec<_>>() {
        return Err(format!("target_order is not a permutation of 1..={m}"));
    }
    Ok(())
}

/// Writes demonstration records as JSONL, one record per line.
pub fn write_examples(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| invalid_err(path, format!("cannot serialize example record: {e}")))?;
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Reads demonstration records from JSONL, validating each example's
/// permutation and rejecting duplicate test query ids.
pub fn read_examples(path: &Path) -> Result<Vec<ExampleRecord>> {
    let mut records: Vec<ExampleRecord> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for_each_line(path, |lineno, line| {
        let record: ExampleRecord = serde_json::from_str(line)
            .map_err(|e| parse_err(path, lineno, format!("invalid example record: {e}")))?;
        validate_example(&record.example).map_err(|m| parse_err(path, lineno, m))?;
        if let Some(first) = seen.insert(record.test_query_id.clone(), lineno) {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "duplicate test_query_id `{}` (first seen on line {first})",
                    record.test_query_id
                ),
            ));
        }
        records.push(record);
        Ok(())
    })?;
    Ok(records)
}

/// Reads a single fixed demonstration from a JSON file (not JSONL) for
/// the static strategy.
pub fn read_static_example(path: &Path) -> Result<IclExample> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let example: IclExample = serde_json::from_str(&text)
        .map_err(|e| invalid_err(path, format!("invalid example: {e}")))?;
    validate_example(&example).map_err(|m| invalid_err(path, m))?;
    Ok(example)
}

// ─── Chat transcripts ────────────────────────────────────────────────────────

/// Writes one JSON object per chat call: query, window start, the exact
/// prompt sent, the raw response, and whether the answer needed repair.
pub fn write_transcript(path: &Path, traces: &[WindowTrace]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for trace in traces {
        let line = serde_json::to_string(trace)
            .map_err(|e| invalid_err(path, format!("cannot serialize trace: {e}")))?;
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Reads a transcript back; the inverse of [`write_transcript`].
pub fn read_transcript(path: &Path) -> Result<Vec<WindowTrace>> {
    let mut traces = Vec::new();
    for_each_line(path, |lineno, line| {
        let trace: WindowTrace = serde_json::from_str(line)
            .map_err(|e| parse_err(path, lineno, format!("invalid transcript line: {e}")))?;
        traces.push(trace);
        Ok(())
    })?;
    Ok(traces)
}

// ─── Query-log index ─────────────────────────────────────────────────────────

/// Serializes a built query-log index as JSON.
pub fn save_index(path: &Path, index: &QueryLogIndex) -> Result<()> {
    let out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    serde_json::to_writer(out, index)
        .map_err(|e| invalid_err(path, format!("cannot serialize index: {e}")))
}

/// Loads an index serialized by [`save_index`].
pub fn load_index(path: &Path) -> Result<QueryLogIndex> {
    let reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    serde_json::from_reader(reader).map_err(|e| invalid_err(path, format!("invalid index: {e}")))
}
