//! Pronoun-resolution tasks cast as referent prediction.

use std::collections::HashMap;

use super::TaskExample;
use crate::{Error, Result};

/// Pronouns searched for when converting WNLI passages.
pub const PRONOUNS: [&str; 10] = [
    "he", "him", "his", "she", "her", "it", "its", "they", "them", "their",
];

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// A WSC or DPR example: the passage, the whitespace-token index of the
/// pronoun, the candidate referent and whether it is the correct one.
#[derive(Debug, Clone, PartialEq)]
pub struct WscExample {
    pub text: String,
    pub pronoun_index: usize,
    pub referent: String,
    pub label: bool,
}

/// A WNLI example. `sentence1` is the passage holding the pronoun and
/// `sentence2` the short sentence with the pronoun replaced by a noun phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct WnliExample {
    pub sentence1: String,
    pub sentence2: String,
    pub label: bool,
}

/// Referent-prediction form shared by WSC, DPR and converted WNLI.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferentExample {
    pub input: String,
    pub candidate: String,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionFailure {
    pub index: usize,
    pub reason: String,
}

/// Byte ranges of whitespace-separated tokens.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Wraps the pronoun at whitespace-token `index` in asterisks, leaving
/// surrounding punctuation outside.
pub fn wsc_format(passage: &str, index: usize) -> Result<String> {
    let spans = token_spans(passage);
    let &(s, e) = spans.get(index).ok_or(Error::Index {
        index,
        size: spans.len(),
    })?;
    let token = &passage[s..e];
    let core_start = token
        .char_indices()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, _)| i);
    let (a, b) = match core_start {
        Some(a) => {
            let b = token
                .char_indices()
                .filter(|(_, c)| c.is_alphanumeric())
                .map(|(i, c)| i + c.len_utf8())
                .last()
                .unwrap_or(token.len());
            (s + a, s + b)
        }
        None => (s, e),
    };
    Ok(format!(
        "{}*{}*{}",
        &passage[..a],
        &passage[a..b],
        &passage[b..]
    ))
}

/// Lowercases and strips punctuation, keeping apostrophes inside words.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(normalize_word)
        .collect()
}

fn normalize_word(w: &str) -> Option<String> {
    let kept: String = w
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'' || *c == '’')
        .map(|c| if c == '’' { '\'' } else { c })
        .flat_map(char::to_lowercase)
        .collect();
    let trimmed = kept.trim_matches('\'');
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

fn content_words(text: &str) -> Vec<String> {
    normalize_words(text)
        .into_iter()
        .filter(|w| !ARTICLES.contains(&w.as_str()))
        .collect()
}

fn is_sub_multiset(a: &[String], b: &[String]) -> bool {
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for w in b {
        *counts.entry(w).or_default() += 1;
    }
    a.iter().all(|w| {
        let c = counts.entry(w).or_default();
        *c -= 1;
        *c >= 0
    })
}

/// True when the words of one side are a subset of the other's, ignoring
/// case, punctuation and articles. An empty side is never a match.
pub fn wsc_eval(prediction: &str, candidate: &str) -> bool {
    let p = content_words(prediction);
    let c = content_words(candidate);
    if p.is_empty() || c.is_empty() {
        return false;
    }
    is_sub_multiset(&p, &c) || is_sub_multiset(&c, &p)
}

/// Input/target pair for a WSC-style example.
pub fn wsc_example(example: &WscExample) -> Result<TaskExample> {
    let text = wsc_format(&example.text, example.pronoun_index)?;
    Ok(TaskExample::new(
        "wsc",
        [("text", text.as_str())],
        &example.referent,
    ))
}

/// Keeps only examples whose referent is correct.
pub fn wsc_training_filter(examples: Vec<WscExample>) -> Vec<WscExample> {
    examples.into_iter().filter(|e| e.label).collect()
}

fn find_window(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).find(|&i| haystack[i..i + needle.len()] == *needle)
}

/// Longest prefix of `windows` found in `short`, as (length, start).
fn grow<'a>(short: &[String], windows: impl Iterator<Item = &'a [String]>) -> (usize, Option<usize>) {
    let mut best = (0, None);
    for (k, w) in windows.enumerate() {
        match find_window(short, w) {
            Some(pos) => best = (k + 1, Some(pos)),
            None => break,
        }
    }
    best
}

/// Longest run of words directly before or after position `at` that occurs
/// in `short`, as (length, start in `short`).
fn best_window(words: &[String], at: usize, short: &[String]) -> (usize, Option<usize>) {
    let after = grow(short, (at + 2..=words.len()).map(|end| &words[at + 1..end]));
    let before = grow(short, (0..at).rev().map(|start| &words[start..at]));
    if before.0 > after.0 {
        before
    } else {
        after
    }
}

fn depossessivize(word: &str) -> String {
    match word {
        "his" => "he".into(),
        "her" | "hers" => "she".into(),
        "its" => "it".into(),
        "their" | "theirs" => "they".into(),
        w => w.strip_suffix("'s").unwrap_or(w).to_string(),
    }
}

/// Converts a WNLI example to referent prediction.
pub fn wnli_convert(example: &WnliExample) -> Result<ReferentExample, ConversionFailure> {
    let fail = |reason: &str| ConversionFailure {
        index: 0,
        reason: reason.to_string(),
    };
    let spans = token_spans(&example.sentence1);
    // normalized words with the whitespace-token index they came from
    let mut words = Vec::new();
    let mut origin = Vec::new();
    for (i, &(s, e)) in spans.iter().enumerate() {
        if let Some(w) = normalize_word(&example.sentence1[s..e]) {
            words.push(w);
            origin.push(i);
        }
    }
    let short = normalize_words(&example.sentence2);

    let mut chosen: Option<(usize, usize, Option<usize>)> = None;
    for (at, w) in words.iter().enumerate() {
        if !PRONOUNS.contains(&w.as_str()) {
            continue;
        }
        let (len, pos) = best_window(&words, at, &short);
        if chosen.map_or(true, |(_, best, _)| len > best) {
            chosen = Some((at, len, pos));
        }
    }
    let (at, len, pos) = chosen.ok_or_else(|| fail("no pronoun in passage"))?;

    let mut remaining: Vec<&String> = short.iter().collect();
    if let Some(p) = pos {
        remaining.drain(p..p + len);
    }
    let candidate = remaining
        .into_iter()
        .map(|w| depossessivize(w))
        .collect::<Vec<_>>()
        .join(" ");
    if candidate.is_empty() {
        return Err(fail("candidate is empty after removing the match"));
    }
    let highlighted =
        wsc_format(&example.sentence1, origin[at]).map_err(|e| fail(&e.to_string()))?;
    Ok(ReferentExample {
        input: format!("wsc: {highlighted}"),
        candidate,
        label: example.label,
    })
}

/// Converts a batch, collecting failures with their positions.
pub fn convert_wnli_all(
    examples: &[WnliExample],
) -> (Vec<ReferentExample>, Vec<ConversionFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        match wnli_convert(e) {
            Ok(r) => ok.push(r),
            Err(mut f) => {
                f.index = i;
                failed.push(f);
            }
        }
    }
    (ok, failed)
}
