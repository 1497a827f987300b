//! Parsing (and repairing) the model's ranking output.
//!
//! Models are asked to answer in the form `[2] > [3] > [1]`, but real
//! responses drift: prose around the list, duplicated or out-of-range
//! identifiers, missing entries, or no identifiers at all. Parsing is a
//! total function — it always yields a valid permutation of `1..=m` —
//! and records whether any repair was needed so callers can audit how
//! often the model misbehaved.

use std::sync::OnceLock;

use regex::Regex;

/// A parsed ranking over `m` window positions: `order` holds 1-based
/// display indices, best first, and is always a full permutation of
/// `1..=m`. `repaired` is true unless the raw text contained exactly a
/// clean permutation. `raw` keeps the original response for transcripts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub order: Vec<usize>,
    pub repaired: bool,
    pub raw: String,
}

fn bracket_number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("static regex compiles"))
}

/// Extracts bracketed integers in order of appearance, drops values
/// outside `1..=m`, drops duplicates keeping the first occurrence, and
/// appends whatever indices are missing in ascending order. A response
/// with no usable identifiers therefore falls back to the identity
/// permutation — preserving the window's current order — with
/// `repaired = true`.
pub fn parse_permutation(raw: &str, m: usize) -> Permutation {
    assert!(m >= 1, "a window holds at least one passage");
    let mut extracted = 0usize; // bracketed numbers seen, parseable or not
    let mut kept: Vec<usize> = Vec::with_capacity(m);
    let mut seen = vec![false; m + 1];
    for capture in bracket_number().captures_iter(raw) {
        extracted += 1;
        // Numbers too large for usize are just another out-of-range case.
        let Ok(value) = capture[1].parse::<usize>() else { continue };
        if (1..=m).contains(&value) && !seen[value] {
            seen[value] = true;
            kept.push(value);
        }
    }
    // `kept` is a subsequence of the extracted numbers, so the response
    // was already a clean permutation iff nothing was dropped and
    // nothing is missing.
    let repaired = kept.len() != extracted || kept.len() != m;
    for value in 1..=m {
        if !seen[value] {
            kept.push(value);
        }
    }
    Permutation { order: kept, repaired, raw: raw.to_string() }
}

/// Renders an order the same way the model is asked to: `[1] > [2]`.
pub fn format_permutation(order: &[usize]) -> String {
    order.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" > ")
}
