//! Web-page cleaning: language identification, line and page heuristics,
//! domain allowlists and three-sentence span deduplication.

mod dedup;
mod domain;
mod filters;
mod io;
mod langid;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dedup::{DedupMode, DedupStats, Deduplicator, MIN_SENTENCES, SPAN_SENTENCES};
pub use domain::{normalize_url, registered_domain, DomainFilter};
pub use filters::{ends_terminal, line_filter, page_filter, sentence_spans, sentences, word_tokens, BadWords, LineDrop, PageDrop};
pub use io::{read_pages, write_pages, PageFormat};
pub use langid::{LanguageClassifier, TrigramClassifier};

use crate::{Error, Result};

pub const DEFAULT_LANGUAGE_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub url: String,
    pub text: String,
}

impl Page {
    pub fn new(url: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let url = url.into();
        if url.is_empty() {
            return Err(Error::Data("page has an empty url".into()));
        }
        Ok(Page { url, text: text.into() })
    }
}

#[derive(Debug, Clone)]
pub struct CleanConfig {
    /// Minimum English probability; 0 disables the language filter.
    pub language_threshold: f64,
    pub bad_words: BadWords,
    pub domain: DomainFilter,
    pub dedup: DedupMode,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            language_threshold: DEFAULT_LANGUAGE_THRESHOLD,
            bad_words: BadWords::default(),
            domain: DomainFilter::None,
            dedup: DedupMode::Spans,
        }
    }
}

/// Counters for one cleaning run. Every input page is either kept or
/// counted under exactly one drop reason; likewise for lines that reach the
/// line filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanReport {
    pub pages_in: u64,
    pub pages_kept: u64,
    pub pages_dropped: BTreeMap<PageDrop, u64>,
    pub lines_in: u64,
    pub lines_kept: u64,
    pub lines_dropped: BTreeMap<LineDrop, u64>,
    pub spans_removed: u64,
    pub sentences_removed: u64,
    pub dedup_lines_dropped: u64,
}

impl Default for CleanReport {
    fn default() -> Self {
        CleanReport {
            pages_in: 0,
            pages_kept: 0,
            pages_dropped: PageDrop::ALL.iter().map(|d| (*d, 0)).collect(),
            lines_in: 0,
            lines_kept: 0,
            lines_dropped: LineDrop::ALL.iter().map(|d| (*d, 0)).collect(),
            spans_removed: 0,
            sentences_removed: 0,
            dedup_lines_dropped: 0,
        }
    }
}

impl CleanReport {
    pub fn dropped(&self, reason: PageDrop) -> u64 {
        self.pages_dropped[&reason]
    }

    pub fn lines_dropped_for(&self, reason: LineDrop) -> u64 {
        self.lines_dropped[&reason]
    }

    pub fn is_conserved(&self) -> bool {
        self.pages_in == self.pages_kept + self.pages_dropped.values().sum::<u64>()
            && self.lines_in == self.lines_kept + self.lines_dropped.values().sum::<u64>()
    }

    /// `key=value` lines with fixed names, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: u64| writeln!(s, "{k}={v}").expect("string write");
        put("pages_in", self.pages_in);
        put("pages_kept", self.pages_kept);
        for d in PageDrop::ALL {
            put(&format!("pages_dropped.{}", d.name()), self.dropped(d));
        }
        put("lines_in", self.lines_in);
        put("lines_kept", self.lines_kept);
        for d in LineDrop::ALL {
            put(&format!("lines_dropped.{}", d.name()), self.lines_dropped_for(d));
        }
        put("spans_removed", self.spans_removed);
        put("sentences_removed", self.sentences_removed);
        put("dedup_lines_dropped", self.dedup_lines_dropped);
        s
    }
}

/// Result of the stateless stages for one page.
struct Screened {
    url: String,
    lines: std::result::Result<Vec<String>, PageDrop>,
    line_drops: Vec<LineDrop>,
    lines_in: u64,
}

fn screen(page: Page, cfg: &CleanConfig, classifier: &dyn LanguageClassifier) -> Screened {
    let mut s = Screened {
        url: page.url,
        lines: Err(PageDrop::Language),
        line_drops: Vec::new(),
        lines_in: 0,
    };
    if cfg.language_threshold > 0.0 && classifier.english_probability(&page.text) < cfg.language_threshold {
        return s;
    }
    let mut kept = Vec::new();
    for line in page.text.lines() {
        s.lines_in += 1;
        match line_filter(line) {
            Ok(()) => kept.push(line.to_string()),
            Err(d) => s.line_drops.push(d),
        }
    }
    s.lines = page_filter(&kept.join("\n"), &cfg.bad_words).map(|()| kept);
    s
}

/// Streaming cleaner. Pages go in one at a time, in stream order.
pub struct Cleaner {
    cfg: CleanConfig,
    classifier: Box<dyn LanguageClassifier>,
    dedup: Deduplicator,
    report: CleanReport,
}

impl Cleaner {
    /// Uses the bundled trigram language classifier.
    pub fn new(cfg: CleanConfig) -> Self {
        Cleaner::with_classifier(cfg, Box::new(TrigramClassifier::bundled()))
    }

    pub fn with_classifier(cfg: CleanConfig, classifier: Box<dyn LanguageClassifier>) -> Self {
        let dedup = Deduplicator::new(cfg.dedup);
        Cleaner {
            cfg,
            classifier,
            dedup,
            report: CleanReport::default(),
        }
    }

    pub fn report(&self) -> &CleanReport {
        &self.report
    }

    pub fn into_report(self) -> CleanReport {
        self.report
    }

    pub fn process(&mut self, page: Page) -> Option<Page> {
        let s = screen(page, &self.cfg, self.classifier.as_ref());
        self.admit(s)
    }

    /// Cleans a batch, running the stateless stages in parallel. Output order
    /// follows input order.
    pub fn process_all(&mut self, pages: Vec<Page>) -> Vec<Page> {
        let (cfg, classifier) = (&self.cfg, self.classifier.as_ref());
        let screened: Vec<Screened> = pages.into_par_iter().map(|p| screen(p, cfg, classifier)).collect();
        screened.into_iter().filter_map(|s| self.admit(s)).collect()
    }

    fn admit(&mut self, s: Screened) -> Option<Page> {
        let r = &mut self.report;
        r.pages_in += 1;
        r.lines_in += s.lines_in;
        r.lines_kept += s.lines_in - s.line_drops.len() as u64;
        for d in &s.line_drops {
            *r.lines_dropped.get_mut(d).expect("all reasons present") += 1;
        }
        let result = s.lines.and_then(|lines| {
            if !self.cfg.domain.keeps(&s.url) {
                return Err(PageDrop::Domain);
            }
            let (out, stats) = self.dedup.process(lines);
            r.spans_removed += stats.spans_removed;
            r.sentences_removed += stats.sentences_removed;
            r.dedup_lines_dropped += stats.lines_dropped;
            out.ok_or(PageDrop::Duplicate)
        });
        match result {
            Ok(lines) => {
                r.pages_kept += 1;
                Some(Page {
                    url: s.url,
                    text: lines.join("\n"),
                })
            }
            Err(d) => {
                *r.pages_dropped.get_mut(&d).expect("all reasons present") += 1;
                None
            }
        }
    }
}

/// Cleans `pages` with a fresh [`Cleaner`].
pub fn clean(pages: Vec<Page>, cfg: CleanConfig) -> (Vec<Page>, CleanReport) {
    let mut c = Cleaner::new(cfg);
    let out = c.process_all(pages);
    (out, c.into_report())
}

/// Like [`clean`] with a caller-supplied language classifier.
pub fn clean_with(
    pages: Vec<Page>,
    cfg: CleanConfig,
    classifier: Box<dyn LanguageClassifier>,
) -> (Vec<Page>, CleanReport) {
    let mut c = Cleaner::with_classifier(cfg, classifier);
    let out = c.process_all(pages);
    (out, c.into_report())
}
