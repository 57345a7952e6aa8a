//! Dataset manifest (JSON-lines) and fold files.
//!
//! The manifest holds one JSON object per line:
//! `{"class": ..., "path": ..., "mask_path": ..., "sequence"?: ..., "frame"?: ...}`.
//! Paths are relative to the manifest's directory. Video frames of a
//! multi-label sequence appear as one record per (class, frame), each with
//! its own class-filtered mask.
//!
//! `folds.json` records a fold split:
//! `{"scheme": ..., "class_order": [...], "folds": [{"fold_id", "test_classes", "train_classes"}]}`.

use std::fs;
use std::path::Path;

use coseg_core::episodes::{DatasetIndex, FoldSpec, ItemRecord, Scheme};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    class: String,
    /// Accepts the long-form key name as an alias.
    #[serde(alias = "image_or_feature_path")]
    path: String,
    mask_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sequence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<u32>,
}

/// Parses a JSON-lines manifest into a validated index. An empty file is
/// a valid empty index.
pub fn load_manifest(path: &Path) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestLine = serde_json::from_str(line)
            .map_err(|e| Error::parse_line(path, lineno, e.to_string()))?;
        items.push(ItemRecord {
            class: record.class,
            path: record.path,
            mask_path: record.mask_path,
            sequence: record.sequence,
            frame: record.frame,
        });
    }
    DatasetIndex::new(items).map_err(Error::Core)
}

/// Serializes an index back to JSON-lines (one record per item, in item
/// order) and writes it atomically.
pub fn write_manifest(path: &Path, index: &DatasetIndex) -> Result<()> {
    let mut text = String::new();
    for item in index.items() {
        let line = ManifestLine {
            class: item.class.clone(),
            path: item.path.clone(),
            mask_path: item.mask_path.clone(),
            sequence: item.sequence.clone(),
            frame: item.frame,
        };
        text.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldsFile {
    scheme: String,
    class_order: Vec<String>,
    folds: Vec<FoldEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldEntry {
    fold_id: usize,
    test_classes: Vec<String>,
    train_classes: Vec<String>,
}

pub fn write_folds(
    path: &Path,
    scheme: Scheme,
    class_order: &[String],
    folds: &[FoldSpec],
) -> Result<()> {
    let file = FoldsFile {
        scheme: scheme.name().to_string(),
        class_order: class_order.to_vec(),
        folds: folds
            .iter()
            .map(|f| FoldEntry {
                fold_id: f.fold_id,
                test_classes: f.test_classes.clone(),
                train_classes: f.train_classes.clone(),
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&file).expect("folds serialize");
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

/// One class label per line; blank lines and `#` comments are ignored.
pub fn load_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let classes: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if classes.is_empty() {
        return Err(Error::parse_line(path, 1, "class list is empty"));
    }
    Ok(classes)
}

pub fn write_class_list(path: &Path, classes: &[String]) -> Result<()> {
    let mut text = String::new();
    for c in classes {
        text.push_str(c);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}
