use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use super::filters::{line_filter, sentences};

pub const SPAN_SENTENCES: usize = 3;
pub const MIN_SENTENCES: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    Off,
    /// Remove the sentences of every repeated three-sentence span.
    #[default]
    Spans,
    /// Drop any page containing an already-seen span.
    Pages,
}

/// What deduplication did to one page.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupStats {
    pub spans_removed: u64,
    pub sentences_removed: u64,
    pub lines_dropped: u64,
}

fn normalize_sentence(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn span_hash(window: &[(usize, String)]) -> u128 {
    let key: Vec<&str> = window.iter().map(|(_, s)| s.as_str()).collect();
    xxh3_128(key.join("\u{1f}").as_bytes())
}

/// Stream-order deduplicator. Holds 128-bit hashes of every span committed
/// so far; the first occurrence of a span always survives.
#[derive(Debug, Clone, Default)]
pub struct Deduplicator {
    mode: DedupMode,
    seen: HashSet<u128>,
}

impl Deduplicator {
    pub fn new(mode: DedupMode) -> Self {
        Deduplicator {
            mode,
            seen: HashSet::new(),
        }
    }

    pub fn mode(&self) -> DedupMode {
        self.mode
    }

    pub fn distinct_spans(&self) -> usize {
        self.seen.len()
    }

    /// Deduplicates the lines of one page. `None` means the page was dropped.
    pub fn process(&mut self, lines: Vec<String>) -> (Option<Vec<String>>, DedupStats) {
        match self.mode {
            DedupMode::Off => (Some(lines), DedupStats::default()),
            DedupMode::Pages => (self.page_mode(lines), DedupStats::default()),
            DedupMode::Spans => self.span_mode(lines),
        }
    }

    fn page_mode(&mut self, lines: Vec<String>) -> Option<Vec<String>> {
        let seq = flatten(&lines);
        let hashes: Vec<u128> = seq.windows(SPAN_SENTENCES).map(span_hash).collect();
        if hashes.iter().any(|h| self.seen.contains(h)) {
            return None;
        }
        self.seen.extend(hashes);
        Some(lines)
    }

    fn span_mode(&mut self, lines: Vec<String>) -> (Option<Vec<String>>, DedupStats) {
        let mut stats = DedupStats::default();
        let mut seq = flatten(&lines);
        let raw: Vec<Vec<String>> = lines.iter().map(|l| sentences(l).into_iter().map(String::from).collect()).collect();
        // normalized and raw sentences travel together, keyed by (line, index)
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for (li, r) in raw.iter().enumerate() {
            keys.extend((0..r.len()).map(|si| (li, si)));
        }
        let mut changed = BTreeSet::new();
        let mut dropped = BTreeSet::new();
        let local = loop {
            let mut local = HashSet::new();
            let mut stack = Vec::new();
            let mut i = 0;
            while i + SPAN_SENTENCES <= seq.len() {
                let h = span_hash(&seq[i..i + SPAN_SENTENCES]);
                if self.seen.contains(&h) || local.contains(&h) {
                    for (line, _) in seq.drain(i..i + SPAN_SENTENCES) {
                        changed.insert(line);
                    }
                    keys.drain(i..i + SPAN_SENTENCES);
                    stats.spans_removed += 1;
                    stats.sentences_removed += SPAN_SENTENCES as u64;
                    let back = i.min(SPAN_SENTENCES - 1);
                    for _ in 0..back {
                        local.remove(&stack.pop().expect("one hash per scanned position"));
                    }
                    i -= back;
                } else {
                    local.insert(h);
                    stack.push(h);
                    i += 1;
                }
            }
            let newly_dropped: Vec<usize> = changed
                .iter()
                .copied()
                .filter(|l| !dropped.contains(l))
                .filter(|&l| {
                    let text = rebuild(&raw, &keys, l);
                    !text.is_empty() && line_filter(&text).is_err()
                })
                .collect();
            if newly_dropped.is_empty() {
                break local;
            }
            for l in newly_dropped {
                dropped.insert(l);
                stats.lines_dropped += 1;
                let before = seq.len();
                let keep: Vec<bool> = keys.iter().map(|k| k.0 != l).collect();
                let mut it = keep.iter();
                seq.retain(|_| *it.next().expect("aligned"));
                let mut it = keep.iter();
                keys.retain(|_| *it.next().expect("aligned"));
                stats.sentences_removed += (before - seq.len()) as u64;
            }
        };
        if seq.len() < MIN_SENTENCES {
            return (None, stats);
        }
        self.seen.extend(local);
        let out = lines
            .into_iter()
            .enumerate()
            .filter_map(|(li, line)| {
                if !changed.contains(&li) {
                    Some(line)
                } else {
                    let text = rebuild(&raw, &keys, li);
                    (!text.is_empty()).then_some(text)
                }
            })
            .collect();
        (Some(out), stats)
    }
}

fn flatten(lines: &[String]) -> Vec<(usize, String)> {
    lines
        .iter()
        .enumerate()
        .flat_map(|(li, l)| sentences(l).into_iter().map(move |s| (li, normalize_sentence(s))))
        .collect()
}

/// Surviving raw sentences of line `line`, joined by single spaces.
fn rebuild(raw: &[Vec<String>], keys: &[(usize, usize)], line: usize) -> String {
    keys.iter()
        .filter(|k| k.0 == line)
        .map(|k| raw[line][k.1].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(s: &str) -> Vec<String> {
        s.lines().map(String::from).collect()
    }

    #[test]
    fn second_copy_is_dropped() {
        let mut d = Deduplicator::new(DedupMode::Spans);
        let p = page("A one b. A two b. A three b.\nA four b. A five b. A six b.");
        assert_eq!(d.process(p.clone()).0, Some(p.clone()));
        let (out, stats) = d.process(p);
        assert_eq!(out, None);
        assert_eq!(stats.spans_removed, 2);
    }

    #[test]
    fn page_mode_drops_whole_pages() {
        let mut d = Deduplicator::new(DedupMode::Pages);
        let p = page("A one b. A two b. A three b.\nA four b. A five b.");
        let q = page("New one here. A one b. A two b. A three b. New five here.");
        assert!(d.process(p).0.is_some());
        assert!(d.process(q).0.is_none());
    }
}
