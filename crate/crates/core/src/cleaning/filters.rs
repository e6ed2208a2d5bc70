use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const TERMINAL: [char; 3] = ['.', '!', '?'];
const CLOSING_QUOTES: [char; 4] = ['"', '\'', '”', '’'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineDrop {
    NoTerminalPunctuation,
    TooFewWords,
    Javascript,
}

impl LineDrop {
    pub const ALL: [LineDrop; 3] = [
        LineDrop::NoTerminalPunctuation,
        LineDrop::TooFewWords,
        LineDrop::Javascript,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LineDrop::NoTerminalPunctuation => "no_terminal_punctuation",
            LineDrop::TooFewWords => "too_few_words",
            LineDrop::Javascript => "javascript",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageDrop {
    Language,
    TooFewSentences,
    BadWord,
    LoremIpsum,
    CurlyBracket,
    Domain,
    Duplicate,
}

impl PageDrop {
    pub const ALL: [PageDrop; 7] = [
        PageDrop::Language,
        PageDrop::TooFewSentences,
        PageDrop::BadWord,
        PageDrop::LoremIpsum,
        PageDrop::CurlyBracket,
        PageDrop::Domain,
        PageDrop::Duplicate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PageDrop::Language => "language",
            PageDrop::TooFewSentences => "too_few_sentences",
            PageDrop::BadWord => "bad_word",
            PageDrop::LoremIpsum => "lorem_ipsum",
            PageDrop::CurlyBracket => "curly_bracket",
            PageDrop::Domain => "domain",
            PageDrop::Duplicate => "duplicate",
        }
    }
}

/// True when `text` ends in terminal punctuation, possibly followed by
/// closing quotes.
pub fn ends_terminal(text: &str) -> bool {
    let core = text.trim_end().trim_end_matches(CLOSING_QUOTES);
    core.ends_with(TERMINAL)
}

/// Lowercased alphanumeric runs.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// First rule a line fails, checked in the order terminal punctuation,
/// word count, "javascript".
pub fn line_filter(line: &str) -> Result<(), LineDrop> {
    if !ends_terminal(line) {
        return Err(LineDrop::NoTerminalPunctuation);
    }
    if line.split_whitespace().count() < 3 {
        return Err(LineDrop::TooFewWords);
    }
    if word_tokens(line).iter().any(|w| w == "javascript") {
        return Err(LineDrop::Javascript);
    }
    Ok(())
}

/// Sentences of `text`: a sentence ends at terminal punctuation (plus any
/// closing quotes) followed by whitespace or the end of the text. Returned
/// as trimmed byte ranges.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        if TERMINAL.contains(&chars[i].1) {
            let mut j = i + 1;
            while j < chars.len() && (TERMINAL.contains(&chars[j].1) || CLOSING_QUOTES.contains(&chars[j].1)) {
                j += 1;
            }
            if j == chars.len() || chars[j].1.is_whitespace() {
                let end = chars.get(j).map_or(text.len(), |c| c.0);
                push_trimmed(text, start, end, &mut out);
                start = end;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(text, start, text.len(), &mut out);
    out
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trail = piece.len() - piece.trim_end().len();
    if lead + trail < piece.len() {
        out.push((start + lead, end - trail));
    }
}

pub fn sentences(text: &str) -> Vec<&str> {
    sentence_spans(text).into_iter().map(|(a, b)| &text[a..b]).collect()
}

/// Blocked words and phrases, matched on whole lowercase word tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BadWords {
    words: HashSet<String>,
    phrases: Vec<Vec<String>>,
}

impl BadWords {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut b = BadWords::default();
        for e in entries {
            let toks = word_tokens(e.as_ref());
            match toks.len() {
                0 => {}
                1 => {
                    b.words.insert(toks.into_iter().next().expect("one token"));
                }
                _ => b.phrases.push(toks),
            }
        }
        b
    }

    /// One entry per line; blank lines and `#` comments skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read word list {}: {e}", path.display())))?;
        Ok(BadWords::new(
            text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')),
        ))
    }

    pub fn len(&self) -> usize {
        self.words.len() + self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, text: &str) -> bool {
        if self.is_empty() {
            return false;
        }
        let toks = word_tokens(text);
        toks.iter().any(|t| self.words.contains(t))
            || self
                .phrases
                .iter()
                .any(|p| toks.windows(p.len()).any(|w| w == p.as_slice()))
    }
}

/// First rule a line-filtered page fails, in the order sentence count, bad
/// words, "lorem ipsum", curly bracket. Bad phrases match within a sentence.
pub fn page_filter(text: &str, bad_words: &BadWords) -> Result<(), PageDrop> {
    let sents = sentences(text);
    if sents.len() < 5 {
        return Err(PageDrop::TooFewSentences);
    }
    if sents.iter().any(|s| bad_words.matches(s)) {
        return Err(PageDrop::BadWord);
    }
    if text.to_lowercase().contains("lorem ipsum") {
        return Err(PageDrop::LoremIpsum);
    }
    if text.contains('{') {
        return Err(PageDrop::CurlyBracket);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_rules() {
        assert!(ends_terminal("He said \"stop.\""));
        assert!(ends_terminal("Really?!"));
        assert!(!ends_terminal("A quote\""));
        assert!(!ends_terminal("Home | About"));
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(sentences("One. Two!  Three? 3.5 is \"fine.\" End"), ["One.", "Two!", "Three?", "3.5 is \"fine.\"", "End"]);
        assert!(sentences("   ").is_empty());
    }

    #[test]
    fn phrases_match_on_token_boundaries() {
        let b = BadWords::new(["darn", "heck no"]);
        assert!(b.matches("Oh, DARN it."));
        assert!(!b.matches("darned thing"));
        assert!(b.matches("heck, no way"));
        assert!(!b.matches("heck yes no"));
    }
}
