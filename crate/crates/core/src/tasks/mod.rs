//! Casting downstream tasks to text in, text out.
//!
//! A [`TaskSchema`] fixes the task prefix, the order and labels of the input
//! fields, and how targets are rendered and parsed back.

mod loader;
mod winograd;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use loader::{load_tsv, parse_tsv};
pub use winograd::{
    convert_wnli_all, normalize_words, wnli_convert, wsc_eval, wsc_example, wsc_format,
    wsc_training_filter, ConversionFailure, ReferentExample, WnliExample, WscExample, PRONOUNS,
};

/// One raw example: named input fields plus the target as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task_name: String,
    pub fields: BTreeMap<String, String>,
    pub target: String,
}

impl TaskExample {
    pub fn new<'a>(
        task_name: &str,
        fields: impl IntoIterator<Item = (&'a str, &'a str)>,
        target: &str,
    ) -> Self {
        TaskExample {
            task_name: task_name.to_string(),
            fields: fields
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            target: target.to_string(),
        }
    }
}

/// What the target of a task looks like.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputKind {
    Labels(Vec<&'static str>),
    /// Scores rounded onto a grid, as STS-B.
    Regression { min: f64, max: f64 },
    Text,
}

/// An input field and whether its name is written before the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field {
    pub name: &'static str,
    pub labeled: bool,
}

const fn labeled(name: &'static str) -> Field {
    Field {
        name,
        labeled: true,
    }
}

const fn bare(name: &'static str) -> Field {
    Field {
        name,
        labeled: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSchema {
    pub name: &'static str,
    /// Written first; empty for tasks whose input starts with a field label.
    pub prefix: &'static str,
    pub fields: Vec<Field>,
    pub output: OutputKind,
}

/// Parsed model output.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Label(usize),
    Number(f64),
    Text(String),
    Invalid,
}

impl Prediction {
    pub fn is_valid(&self) -> bool {
        !matches!(self, Prediction::Invalid)
    }
}

pub const TASK_NAMES: [&str; 21] = [
    "cola",
    "sst2",
    "mrpc",
    "stsb",
    "qqp",
    "mnli",
    "qnli",
    "rte",
    "wnli",
    "boolq",
    "cb",
    "copa",
    "multirc",
    "wic",
    "wsc",
    "dpr",
    "squad",
    "cnn_dailymail",
    "wmt_en_de",
    "wmt_en_fr",
    "wmt_en_ro",
];

const BINARY: [&str; 2] = ["False", "True"];

/// Schema for a named task.
pub fn schema(name: &str) -> Result<TaskSchema> {
    let labels = |l: &[&'static str]| OutputKind::Labels(l.to_vec());
    let (prefix, fields, output) = match name {
        "cola" => (
            "cola",
            vec![labeled("sentence")],
            labels(&["unacceptable", "acceptable"]),
        ),
        "sst2" => (
            "sst2",
            vec![labeled("sentence")],
            labels(&["negative", "positive"]),
        ),
        "mrpc" => (
            "mrpc",
            vec![labeled("sentence1"), labeled("sentence2")],
            labels(&["not_equivalent", "equivalent"]),
        ),
        "stsb" => (
            "stsb",
            vec![labeled("sentence1"), labeled("sentence2")],
            OutputKind::Regression { min: 1.0, max: 5.0 },
        ),
        "qqp" => (
            "qqp",
            vec![labeled("question1"), labeled("question2")],
            labels(&["not_duplicate", "duplicate"]),
        ),
        "mnli" => (
            "mnli",
            vec![labeled("hypothesis"), labeled("premise")],
            labels(&["entailment", "neutral", "contradiction"]),
        ),
        "qnli" => (
            "qnli",
            vec![labeled("question"), labeled("sentence")],
            labels(&["entailment", "not_entailment"]),
        ),
        "rte" => (
            "rte",
            vec![labeled("sentence1"), labeled("sentence2")],
            labels(&["entailment", "not_entailment"]),
        ),
        "wnli" => (
            "wnli",
            vec![labeled("sentence1"), labeled("sentence2")],
            labels(&["not_entailment", "entailment"]),
        ),
        "boolq" => (
            "boolq",
            vec![labeled("question"), labeled("passage")],
            labels(&BINARY),
        ),
        "cb" => (
            "cb",
            vec![labeled("hypothesis"), labeled("premise")],
            labels(&["entailment", "contradiction", "neutral"]),
        ),
        "copa" => (
            "copa",
            vec![
                labeled("choice1"),
                labeled("choice2"),
                labeled("premise"),
                labeled("question"),
            ],
            labels(&BINARY),
        ),
        "multirc" => (
            "multirc",
            vec![
                labeled("question"),
                labeled("answer"),
                labeled("paragraph"),
            ],
            labels(&BINARY),
        ),
        "wic" => (
            "wic",
            vec![
                labeled("pos"),
                labeled("sentence1"),
                labeled("sentence2"),
                labeled("word"),
            ],
            labels(&BINARY),
        ),
        "wsc" | "dpr" => ("wsc:", vec![bare("text")], OutputKind::Text),
        "squad" => (
            "",
            vec![labeled("question"), labeled("context")],
            OutputKind::Text,
        ),
        "cnn_dailymail" => ("summarize:", vec![bare("article")], OutputKind::Text),
        "wmt_en_de" => (
            "translate English to German:",
            vec![bare("source")],
            OutputKind::Text,
        ),
        "wmt_en_fr" => (
            "translate English to French:",
            vec![bare("source")],
            OutputKind::Text,
        ),
        "wmt_en_ro" => (
            "translate English to Romanian:",
            vec![bare("source")],
            OutputKind::Text,
        ),
        other => return Err(Error::Parameter(format!("unknown task '{other}'"))),
    };
    Ok(TaskSchema {
        name: TASK_NAMES.iter().find(|n| **n == name).copied().unwrap_or_default(),
        prefix,
        fields,
        output,
    })
}

impl TaskSchema {
    /// Label strings, empty for regression and free-form tasks.
    pub fn labels(&self) -> &[&'static str] {
        match &self.output {
            OutputKind::Labels(l) => l,
            _ => &[],
        }
    }

    /// Renders the input text from the named fields.
    pub fn format_input(&self, fields: &BTreeMap<String, String>) -> Result<String> {
        let mut parts: Vec<String> = Vec::with_capacity(self.fields.len() + 1);
        if !self.prefix.is_empty() {
            parts.push(self.prefix.to_string());
        }
        for f in &self.fields {
            let value = fields.get(f.name).ok_or_else(|| {
                Error::Data(format!("{} example is missing field '{}'", self.name, f.name))
            })?;
            if f.labeled {
                parts.push(format!("{}: {value}", f.name));
            } else {
                parts.push(value.clone());
            }
        }
        Ok(parts.join(" "))
    }

    /// Maps a raw target to its text form. Classification targets may be a
    /// label index or the label string itself; regression targets are rounded.
    pub fn target_text(&self, raw: &str) -> Result<String> {
        match &self.output {
            OutputKind::Labels(labels) => {
                if labels.contains(&raw) {
                    return Ok(raw.to_string());
                }
                let i: usize = raw.trim().parse().map_err(|_| {
                    Error::Data(format!("{}: unknown label '{raw}'", self.name))
                })?;
                labels.get(i).map(|l| l.to_string()).ok_or_else(|| {
                    Error::Data(format!("{}: label index {i} out of range", self.name))
                })
            }
            OutputKind::Regression { .. } => {
                let v: f64 = raw.trim().parse().map_err(|_| {
                    Error::Data(format!("{}: target '{raw}' is not a number", self.name))
                })?;
                stsb_round(v)
            }
            OutputKind::Text => Ok(raw.to_string()),
        }
    }

    pub fn parse_prediction(&self, output: &str) -> Prediction {
        parse_prediction(self, output)
    }
}

/// Formats an example as (input text, target text).
pub fn format_example(schema: &TaskSchema, example: &TaskExample) -> Result<(String, String)> {
    Ok((
        schema.format_input(&example.fields)?,
        schema.target_text(&example.target)?,
    ))
}

/// Rounds a similarity score to the nearest 0.2, halves upward.
pub fn stsb_round(score: f64) -> Result<String> {
    if !(1.0..=5.0).contains(&score) {
        return Err(Error::Data(format!("score {score} outside [1, 5]")));
    }
    // work in tenths so 2.5 is exactly halfway between 2.4 and 2.6
    let tenths = (score * 10.0 * 1e9).round() / 1e9;
    let steps = (tenths / 2.0 + 0.5).floor();
    let rounded = (steps * 2.0) / 10.0;
    Ok(format!("{rounded:.1}"))
}

/// Every string [`stsb_round`] can produce.
pub fn stsb_classes() -> Vec<String> {
    (0..=20)
        .map(|i| format!("{:.1}", 1.0 + 0.2 * i as f64))
        .collect()
}

pub fn parse_prediction(schema: &TaskSchema, output: &str) -> Prediction {
    match &schema.output {
        OutputKind::Labels(labels) => labels
            .iter()
            .position(|l| *l == output)
            .map_or(Prediction::Invalid, Prediction::Label),
        OutputKind::Regression { min, max } => match output.trim().parse::<f64>() {
            Ok(v) if v.is_finite() && (*min..=*max).contains(&v) => Prediction::Number(v),
            _ => Prediction::Invalid,
        },
        OutputKind::Text => Prediction::Text(output.to_string()),
    }
}
