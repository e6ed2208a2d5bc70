use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use super::check_lengths;
use crate::{Error, Result};

const MAX_ORDER: usize = 4;

static NONDIGIT_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\P{N})(\p{P})").expect("valid regex"));
static PUNCT_NONDIGIT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\p{P})(\P{N})").expect("valid regex"));
static SYMBOL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\p{S})").expect("valid regex"));

/// International tokenization: punctuation is split off unless it sits
/// between digits, and every symbol becomes its own token.
pub fn intl_tokenize(text: &str) -> Vec<String> {
    let s = NONDIGIT_PUNCT.replace_all(text, "$1 $2 ");
    let s = PUNCT_NONDIGIT.replace_all(&s, " $1 $2");
    let s = SYMBOL.replace_all(&s, " $1 ");
    s.split_whitespace().map(String::from).collect()
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Sufficient statistics of corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub hyp_len: usize,
    pub ref_len: usize,
    pub correct: [usize; MAX_ORDER],
    pub total: [usize; MAX_ORDER],
}

impl BleuStats {
    pub fn add(&mut self, hyp: &str, reference: &str) {
        let h = intl_tokenize(hyp);
        let r = intl_tokenize(reference);
        self.hyp_len += h.len();
        self.ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngrams(&r, n);
            for (g, c) in ngrams(&h, n) {
                self.correct[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            self.total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }

    /// Modified precisions in percent. An order with no matches gets
    /// `100 / (2^k * total)` for the k-th such order; orders with no
    /// hypothesis n-grams, and all orders after them, stay 0.
    pub fn precisions(&self) -> [f64; MAX_ORDER] {
        let mut p = [0.0; MAX_ORDER];
        let mut smooth = 1.0;
        for n in 0..MAX_ORDER {
            if self.total[n] == 0 {
                break;
            }
            p[n] = if self.correct[n] == 0 {
                smooth *= 2.0;
                100.0 / (smooth * self.total[n] as f64)
            } else {
                100.0 * self.correct[n] as f64 / self.total[n] as f64
            };
        }
        p
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len >= self.ref_len {
            1.0
        } else if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    pub fn score(&self) -> f64 {
        let p = self.precisions();
        if p.iter().any(|x| *x <= 0.0) {
            return 0.0;
        }
        let log_mean = p.iter().map(|x| x.ln()).sum::<f64>() / MAX_ORDER as f64;
        self.brevity_penalty() * log_mean.exp()
    }
}

pub fn bleu_stats(hyps: &[&str], refs: &[&str]) -> Result<BleuStats> {
    check_lengths(hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Err(Error::Data("cannot score an empty corpus".into()));
    }
    let mut s = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        s.add(h, r);
    }
    Ok(s)
}

/// Corpus 4-gram BLEU in [0, 100] with exponential smoothing, one
/// reference per hypothesis.
pub fn bleu(hyps: &[&str], refs: &[&str]) -> Result<f64> {
    Ok(bleu_stats(hyps, refs)?.score())
}
