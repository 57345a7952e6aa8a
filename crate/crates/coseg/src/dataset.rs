//! On-disk dataset layout, preloading, and the synthetic dataset writer.
//!
//! A dataset directory contains:
//!
//! ```text
//! classes.txt        # class order (fold construction follows this)
//! embeddings.txt     # word-embedding table
//! manifest.jsonl     # one item record per line
//! features/*.ften    # feature files (or images/*.pgm for the toy encoder)
//! masks/*.pgm        # ground-truth masks
//! ```
//!
//! All items are loaded up front; episodic sampling then never touches the
//! filesystem.

use std::path::{Path, PathBuf};

use coseg_core::episodes::{DatasetIndex, Episode};
use coseg_core::model::{EncoderInput, EpisodeData, FeatureMap};
use coseg_core::synth::SynthDataset;
use coseg_core::tensor::Mask;
use coseg_core::CoreError;

use crate::embeddings::{load_embedding_table, write_embedding_table, EmbeddingTable};
use crate::error::{Error, Result};
use crate::ften::{read_ften, write_ften};
use crate::io_util::write_dir_atomic;
use crate::manifest::{load_class_list, load_manifest, write_class_list, write_manifest};
use crate::pgm::{read_mask, read_pgm, write_mask};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CLASSES_FILE: &str = "classes.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

/// A dataset directory with every item preloaded.
#[derive(Debug)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub index: DatasetIndex,
    pub classes: Vec<String>,
    pub table: EmbeddingTable,
    inputs: Vec<EncoderInput>,
    masks: Vec<Mask>,
}

impl LoadedDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let index = load_manifest(&dir.join(MANIFEST_FILE))?;
        let classes = load_class_list(&dir.join(CLASSES_FILE))?;
        let table = load_embedding_table(&dir.join(EMBEDDINGS_FILE))?;

        let mut inputs = Vec::with_capacity(index.len());
        let mut masks = Vec::with_capacity(index.len());
        for item in index.items() {
            inputs.push(load_input(&dir.join(&item.path))?);
            masks.push(read_mask(&dir.join(&item.mask_path))?);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
            classes,
            table,
            inputs,
            masks,
        })
    }

    pub fn input(&self, item: usize) -> &EncoderInput {
        &self.inputs[item]
    }

    pub fn mask(&self, item: usize) -> &Mask {
        &self.masks[item]
    }

    /// Materializes a sampled episode. The embedding lookup only happens
    /// when the model consumes embeddings, so the baseline never depends
    /// on the table's contents.
    pub fn episode_data(&self, ep: &Episode, needs_embedding: bool) -> Result<EpisodeData> {
        let embedding = if needs_embedding {
            self.table.lookup(&ep.class_label)?.to_vec()
        } else {
            Vec::new()
        };
        Ok(EpisodeData {
            support: ep
                .support
                .iter()
                .map(|(idx, _)| self.inputs[*idx].clone())
                .collect(),
            query: self.inputs[ep.query].clone(),
            embedding,
            gt_mask: self.masks[ep.query].clone(),
            class_label: ep.class_label.clone(),
        })
    }
}

/// Feature files load as feature maps; PGM images load as single-channel
/// image grids for the toy encoder (pixel values scaled to [0, 1]).
fn load_input(path: &Path) -> Result<EncoderInput> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ften") => {
            let tensor = read_ften(path)?;
            let shape = tensor.shape().to_vec();
            if shape.len() != 3 {
                return Err(Error::Core(CoreError::Data(format!(
                    "feature file {} has rank {}, expected 3 (channels x width x height)",
                    path.display(),
                    shape.len()
                ))));
            }
            // Stored as channels x width x height (row-major, so the
            // innermost axis is y); the in-memory column order is y*W + x.
            let (c, w, h) = (shape[0], shape[1], shape[2]);
            let src = tensor.data();
            let mut data = vec![0.0; c * w * h];
            for ch in 0..c {
                for x in 0..w {
                    for y in 0..h {
                        data[ch * w * h + y * w + x] = src[(ch * w + x) * h + y];
                    }
                }
            }
            let features = FeatureMap::new(c, w, h, data).map_err(Error::Core)?;
            Ok(EncoderInput::Features(features))
        }
        Some("pgm") => {
            let img = read_pgm(path)?;
            let data: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
            Ok(EncoderInput::Image {
                channels: 1,
                width: img.width,
                height: img.height,
                data,
            })
        }
        _ => Err(Error::Core(CoreError::Data(format!(
            "unsupported item file type: {}",
            path.display()
        )))),
    }
}

/// Writes a generated synthetic dataset to `out` (features, masks,
/// embedding table, class list, manifest). The directory appears
/// atomically and must not already exist.
pub fn write_synth_dataset(out: &Path, ds: &SynthDataset) -> Result<()> {
    write_dir_atomic(out, |staging| {
        std::fs::create_dir(staging.join("features")).map_err(|e| Error::io(staging, e))?;
        std::fs::create_dir(staging.join("masks")).map_err(|e| Error::io(staging, e))?;

        let mut records = Vec::with_capacity(ds.items.len());
        for (i, item) in ds.items.iter().enumerate() {
            let label = ds.label(item.class_idx);
            let feature_rel = format!("features/{label}_{i:04}.ften");
            let mask_rel = format!("masks/{label}_{i:04}.pgm");

            let f = &item.features;
            // Disk layout is channels x width x height.
            let mut raster = vec![0.0; f.channels * f.width * f.height];
            for ch in 0..f.channels {
                for x in 0..f.width {
                    for y in 0..f.height {
                        raster[(ch * f.width + x) * f.height + y] =
                            f.values.data()[ch * f.width * f.height + y * f.width + x];
                    }
                }
            }
            let tensor = coseg_core::Tensor::new(vec![f.channels, f.width, f.height], raster)
                .map_err(Error::Core)?;
            write_ften(&staging.join(&feature_rel), &tensor)?;
            write_mask(&staging.join(&mask_rel), &item.mask)?;

            records.push(coseg_core::episodes::ItemRecord {
                class: label.to_string(),
                path: feature_rel,
                mask_path: mask_rel,
                sequence: None,
                frame: None,
            });
        }

        let index = DatasetIndex::new(records).map_err(Error::Core)?;
        write_manifest(&staging.join(MANIFEST_FILE), &index)?;
        write_class_list(&staging.join(CLASSES_FILE), &ds.class_labels)?;
        let entries: Vec<(String, Vec<f64>)> = ds
            .class_labels
            .iter()
            .cloned()
            .zip(ds.embeddings.iter().cloned())
            .collect();
        write_embedding_table(&staging.join(EMBEDDINGS_FILE), &entries)?;
        Ok(())
    })
}
