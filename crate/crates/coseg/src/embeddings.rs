//! Word-embedding table: UTF-8 text, one record per line,
//! `<label> <v1> ... <vE>` whitespace-separated, with a constant dimension
//! across lines. Labels are case-sensitive single tokens. Lookups of
//! unknown labels fail loudly; a silent zero-vector fallback would
//! corrupt any embedding-vs-baseline comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use coseg_core::CoreError;

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    by_label: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut dim = 0usize;
        let mut by_label = BTreeMap::new();
        for (label, vector) in entries {
            if dim == 0 {
                dim = vector.len();
            }
            if vector.is_empty() || vector.len() != dim {
                return Err(Error::Core(CoreError::Data(format!(
                    "embedding for {label:?} has {} values, expected {dim}",
                    vector.len()
                ))));
            }
            if by_label.insert(label.clone(), vector).is_some() {
                return Err(Error::Core(CoreError::Data(format!(
                    "duplicate embedding label {label:?}"
                ))));
            }
        }
        if by_label.is_empty() {
            return Err(Error::Core(CoreError::Data(
                "embedding table is empty".into(),
            )));
        }
        Ok(Self { dim, by_label })
    }

    /// Dimension `E`, constant across the table.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.by_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_label.is_empty()
    }

    /// Embedding vector of a label; unknown labels are an error.
    pub fn lookup(&self, label: &str) -> Result<&[f64]> {
        self.by_label.get(label).map(Vec::as_slice).ok_or_else(|| {
            Error::Core(CoreError::Data(format!(
                "label {label:?} is not in the embedding table"
            )))
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = &String> {
        self.by_label.keys()
    }
}

pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label = parts
            .next()
            .expect("non-empty line has a first token")
            .to_string();
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values =
            values.map_err(|e| Error::parse_line(path, lineno, format!("bad component: {e}")))?;
        if values.is_empty() {
            return Err(Error::parse_line(path, lineno, "label without components"));
        }
        if dim == 0 {
            dim = values.len();
        } else if values.len() != dim {
            return Err(Error::parse_line(
                path,
                lineno,
                format!("{} components, expected {dim}", values.len()),
            ));
        }
        entries.push((label, values));
    }
    if entries.is_empty() {
        return Err(Error::parse_line(path, 1, "embedding table has no records"));
    }
    EmbeddingTable::new(entries)
}

pub fn write_embedding_table(path: &Path, entries: &[(String, Vec<f64>)]) -> Result<()> {
    // `{}` on f64 prints the shortest form that parses back exactly.
    let mut text = String::new();
    for (label, vector) in entries {
        text.push_str(label);
        for v in vector {
            text.push(' ');
            text.push_str(&format!("{v}"));
        }
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}
