//! Evaluation metrics and per-task scoring.

mod bleu;
mod qa;
mod rouge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tasks::{parse_prediction, wsc_eval, OutputKind, Prediction, TaskSchema};
use crate::{Error, Result};

pub use bleu::{bleu, bleu_stats, intl_tokenize, BleuStats};
pub use qa::{exact_match, normalize_answer, qa_scores, token_f1};
pub use rouge::{lcs_len, rouge, rouge_tokenize, RougeVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    /// Fractions in [0, 1], correlations in [-1, 1], BLEU in [0, 100].
    pub value: f64,
    pub count: usize,
}

impl MetricResult {
    fn new(name: &str, value: f64, count: usize) -> Self {
        MetricResult {
            name: name.to_string(),
            value,
            count,
        }
    }
}

pub(crate) fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Data(format!("{a} predictions for {b} references")));
    }
    Ok(())
}

fn check_nonempty(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Data("cannot score an empty corpus".into()));
    }
    Ok(())
}

/// Fraction of positions where `preds` equals `golds`.
pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    check_nonempty(preds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn binary(labels: &[usize]) -> Result<()> {
    match labels.iter().find(|l| **l > 1) {
        Some(l) => Err(Error::Data(format!("label {l} is not binary"))),
        None => Ok(()),
    }
}

/// (tp, fp, fn, tn) with label 1 as positive.
pub fn confusion(preds: &[usize], golds: &[usize]) -> Result<(u64, u64, u64, u64)> {
    check_lengths(preds.len(), golds.len())?;
    binary(preds)?;
    binary(golds)?;
    let mut c = (0, 0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        match (p, g) {
            (1, 1) => c.0 += 1,
            (1, 0) => c.1 += 1,
            (0, 1) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    Ok(c)
}

/// Matthews correlation of binary labels; 0 when any marginal is empty.
pub fn matthews_corr(preds: &[usize], golds: &[usize]) -> Result<f64> {
    let (tp, fp, fn_, tn) = confusion(preds, golds)?;
    let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom)
}

fn f1_from(tp: f64, fp: f64, fn_: f64) -> f64 {
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// F1 of `positive` against all other labels.
pub fn class_f1(preds: &[usize], golds: &[usize], positive: usize) -> Result<f64> {
    check_lengths(preds.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        match (*p == positive, *g == positive) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    Ok(f1_from(tp, fp, fn_))
}

/// Unweighted mean of per-class F1 over `num_classes` classes.
pub fn macro_f1(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    check_nonempty(num_classes)?;
    let mut total = 0.0;
    for c in 0..num_classes {
        total += class_f1(preds, golds, c)?;
    }
    Ok(total / num_classes as f64)
}

/// A correlation, flagged when either input is constant (value is then 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_lengths(x.len(), y.len())?;
    check_nonempty(x.len())?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// 1-based ranks, ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_lengths(x.len(), y.len())?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Metrics reported for a task, in reporting order.
pub fn task_metric_names(schema: &TaskSchema) -> &'static [&'static str] {
    match schema.name {
        "cola" => &["mcc"],
        "mrpc" | "qqp" => &["f1", "accuracy"],
        "stsb" => &["pearson", "spearman"],
        "cb" => &["macro_f1", "accuracy"],
        "multirc" => &["f1", "accuracy"],
        "squad" => &["exact_match", "f1"],
        "cnn_dailymail" => &["rouge1", "rouge2", "rougeL"],
        "wmt_en_de" | "wmt_en_fr" | "wmt_en_ro" => &["bleu"],
        _ => &["accuracy"],
    }
}

/// Scores model outputs against target texts for one task. Outputs that do
/// not parse as a valid label count as wrong; invalid regression outputs are
/// scored at the bottom of the range.
pub fn evaluate_task(schema: &TaskSchema, outputs: &[String], targets: &[String]) -> Result<Vec<MetricResult>> {
    check_lengths(outputs.len(), targets.len())?;
    check_nonempty(outputs.len())?;
    let n = outputs.len();
    let names = task_metric_names(schema);
    let mut out = Vec::new();
    match &schema.output {
        OutputKind::Labels(labels) => {
            let wrong = labels.len();
            let index = |s: &String| match parse_prediction(schema, s) {
                Prediction::Label(i) => i,
                _ => wrong,
            };
            let preds: Vec<usize> = outputs.iter().map(index).collect();
            let golds: Vec<usize> = targets.iter().map(index).collect();
            if let Some(i) = golds.iter().position(|g| *g == wrong) {
                return Err(Error::Data(format!("target '{}' is not a {} label", targets[i], schema.name)));
            }
            for name in names {
                let v = match *name {
                    "mcc" => {
                        // an unparseable output is the opposite of the gold label
                        let p: Vec<usize> = preds.iter().zip(&golds).map(|(p, g)| if *p == wrong { 1 - g } else { *p }).collect();
                        matthews_corr(&p, &golds)?
                    }
                    "f1" => class_f1(&preds, &golds, 1)?,
                    "macro_f1" => macro_f1(&preds, &golds, labels.len())?,
                    _ => accuracy(&preds, &golds)?,
                };
                out.push(MetricResult::new(name, v, n));
            }
        }
        OutputKind::Regression { min, .. } => {
            let value = |s: &String| match parse_prediction(schema, s) {
                Prediction::Number(v) => v,
                _ => *min,
            };
            let preds: Vec<f64> = outputs.iter().map(value).collect();
            let golds: Vec<f64> = targets
                .iter()
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Data(format!("target '{t}' is not a number"))))
                .collect::<Result<_>>()?;
            out.push(MetricResult::new("pearson", pearson(&preds, &golds)?.value, n));
            out.push(MetricResult::new("spearman", spearman(&preds, &golds)?.value, n));
        }
        OutputKind::Text => {
            let preds: Vec<&str> = outputs.iter().map(String::as_str).collect();
            let golds: Vec<&str> = targets.iter().map(String::as_str).collect();
            for name in names {
                let v = match *name {
                    "exact_match" => exact_match(&preds, &golds)?,
                    "f1" => token_f1(&preds, &golds)?,
                    "rouge1" => rouge(&preds, &golds, RougeVariant::N(1))?,
                    "rouge2" => rouge(&preds, &golds, RougeVariant::N(2))?,
                    "rougeL" => rouge(&preds, &golds, RougeVariant::L)?,
                    "bleu" => bleu(&preds, &golds)?,
                    _ if schema.prefix == "wsc:" => {
                        preds.iter().zip(&golds).filter(|(p, g)| wsc_eval(p, g)).count() as f64 / n as f64
                    }
                    _ => accuracy(&preds, &golds)?,
                };
                out.push(MetricResult::new(name, v, n));
            }
        }
    }
    Ok(out)
}

pub const GLUE_TASKS: [&str; 9] = ["cola", "sst2", "mrpc", "stsb", "qqp", "mnli", "qnli", "rte", "wnli"];
pub const SUPERGLUE_TASKS: [&str; 8] = ["boolq", "cb", "copa", "multirc", "rte", "wic", "wsc", "dpr"];

/// Tasks left out of benchmark averages.
pub const EXCLUDED_FROM_AVERAGE: [&str; 1] = ["wnli"];

/// Mean over `tasks` of each task's mean metric, skipping excluded tasks.
/// `scores` maps task name to its metric values.
pub fn benchmark_average(tasks: &[&str], scores: &BTreeMap<String, Vec<f64>>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for task in tasks.iter().filter(|t| !EXCLUDED_FROM_AVERAGE.contains(t)) {
        let s = scores
            .get(*task)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Data(format!("no score for task '{task}'")))?;
        total += s.iter().sum::<f64>() / s.len() as f64;
        count += 1;
    }
    check_nonempty(count)?;
    Ok(total / count as f64)
}
