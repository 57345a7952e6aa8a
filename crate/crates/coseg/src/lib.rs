//! IO, file formats, and the command-line driver for the co-attention
//! few-shot segmentation workbench. The numeric and protocol core lives in
//! `coseg-core`; this crate adds everything that touches the filesystem:
//!
//! * [`ften`]: binary tensor files (feature maps, checkpoint weights)
//! * [`pgm`]: binary PGM masks and rendered overlays
//! * [`embeddings`]: the word-embedding text table
//! * [`manifest`]: JSON-lines dataset manifests, class lists, folds.json
//! * [`dataset`]: dataset directories and the synthetic benchmark writer
//! * [`checkpoint`]: model checkpoints with a config echo
//! * [`runner`]: train / eval orchestration and report files
//! * [`render`]: qualitative three-panel episode overlays
//! * [`cli`]: the `coseg` binary's argument handling and dispatch

#![forbid(unsafe_code)]

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod ften;
pub mod io_util;
pub mod manifest;
pub mod pgm;
pub mod render;
pub mod runner;

pub use error::{Error, Result};
