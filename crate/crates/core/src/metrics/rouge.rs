use std::collections::HashMap;

use super::check_lengths;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    /// n-gram overlap.
    N(usize),
    /// Longest common subsequence.
    L,
}

/// Lowercased alphanumeric runs.
pub fn rouge_tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

fn f_measure(overlap: usize, hyp: usize, reference: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

fn ngram_overlap(h: &[String], r: &[String], n: usize) -> (usize, usize, usize) {
    let count = |t: &[String]| {
        let mut m: HashMap<Vec<String>, usize> = HashMap::new();
        for w in t.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
        m
    };
    let (hc, rc) = (count(h), count(r));
    let overlap = hc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum();
    (overlap, h.len().saturating_sub(n - 1), r.len().saturating_sub(n - 1))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_one(hyp: &str, reference: &str, variant: RougeVariant) -> f64 {
    let h = rouge_tokenize(hyp);
    let r = rouge_tokenize(reference);
    match variant {
        RougeVariant::N(n) => {
            let (o, hn, rn) = ngram_overlap(&h, &r, n.max(1));
            f_measure(o, hn, rn)
        }
        RougeVariant::L => f_measure(lcs_len(&h, &r), h.len(), r.len()),
    }
}

/// Mean per-example ROUGE F-measure in [0, 1].
pub fn rouge(hyps: &[&str], refs: &[&str], variant: RougeVariant) -> Result<f64> {
    check_lengths(hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Err(Error::Data("cannot score an empty corpus".into()));
    }
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| rouge_one(h, r, variant)).sum();
    Ok(total / hyps.len() as f64)
}
