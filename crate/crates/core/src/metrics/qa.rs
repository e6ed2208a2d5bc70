use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use super::check_lengths;
use crate::{Error, Result};

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"));

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn em_one(pred: &str, gold: &str) -> f64 {
    f64::from(normalize_answer(pred) == normalize_answer(gold))
}

fn f1_one(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return f64::from(pt == gt);
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut same = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn mean(preds: &[&str], golds: &[&str], f: fn(&str, &str) -> f64) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Err(Error::Data("cannot score an empty corpus".into()));
    }
    Ok(preds.iter().zip(golds).map(|(p, g)| f(p, g)).sum::<f64>() / preds.len() as f64)
}

/// Fraction of predictions equal to their reference after
/// [`normalize_answer`].
pub fn exact_match(preds: &[&str], golds: &[&str]) -> Result<f64> {
    mean(preds, golds, em_one)
}

/// Mean bag-of-tokens F1 after [`normalize_answer`]. Two empty answers
/// score 1.
pub fn token_f1(preds: &[&str], golds: &[&str]) -> Result<f64> {
    mean(preds, golds, f1_one)
}

/// (exact match, F1), each taking the best of several references per
/// example.
pub fn qa_scores(preds: &[&str], references: &[Vec<String>]) -> Result<(f64, f64)> {
    check_lengths(preds.len(), references.len())?;
    if preds.is_empty() || references.iter().any(|r| r.is_empty()) {
        return Err(Error::Data("every example needs at least one reference".into()));
    }
    let best = |f: fn(&str, &str) -> f64| {
        preds
            .iter()
            .zip(references)
            .map(|(p, refs)| refs.iter().map(|r| f(p, r)).fold(0.0, f64::max))
            .sum::<f64>()
            / preds.len() as f64
    };
    Ok((best(em_one), best(f1_one)))
}
