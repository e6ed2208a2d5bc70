use std::path::Path;

use super::{TaskExample, TaskSchema};
use crate::{Error, Result};

/// Parses tab-separated examples: one per line, the schema's fields in
/// order followed by the raw target. Blank lines and lines starting with `#`
/// are skipped. `\t`, `\n` and `\\` escapes are decoded inside values.
pub fn parse_tsv(schema: &TaskSchema, text: &str) -> Result<Vec<TaskExample>> {
    let want = schema.fields.len() + 1;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != want {
            return Err(Error::Data(format!(
                "{} line {}: expected {want} columns, found {}",
                schema.name,
                lineno + 1,
                cols.len()
            )));
        }
        let values: Vec<String> = cols.iter().map(|c| unescape(c)).collect();
        out.push(TaskExample {
            task_name: schema.name.to_string(),
            fields: schema
                .fields
                .iter()
                .zip(&values)
                .map(|(f, v)| (f.name.to_string(), v.clone()))
                .collect(),
            target: values[want - 1].clone(),
        });
    }
    Ok(out)
}

pub fn load_tsv(schema: &TaskSchema, path: impl AsRef<Path>) -> Result<Vec<TaskExample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(schema, &text)
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}
