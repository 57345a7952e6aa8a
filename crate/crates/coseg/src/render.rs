//! Qualitative rendering: one PGM with the support mask, the query
//! ground truth and the predicted probabilities side by side.

use std::path::Path;

use coseg_core::episodes::Episode;
use coseg_core::model::{SegModel, SegPrediction};
use coseg_core::tensor::{Mask, ParamSet};
use coseg_core::CoreError;

use crate::dataset::LoadedDataset;
use crate::error::{Error, Result};
use crate::pgm::{write_pgm, GrayImage};

/// Divider column value between panels.
const DIVIDER: u8 = 128;

/// Resolves the render episode: the 1-based manifest line is the query
/// item; the support item is the first other manifest entry of the same
/// class (in manifest order).
pub fn episode_for_line(data: &LoadedDataset, line: usize) -> Result<Episode> {
    if line == 0 || line > data.index.len() {
        return Err(Error::Usage(format!(
            "episode line {line} out of range; manifest has {} items",
            data.index.len()
        )));
    }
    let query = line - 1;
    let class = data.index.item(query).class.clone();
    let support = data
        .index
        .items_of_class(&class)
        .iter()
        .copied()
        .find(|&i| i != query)
        .ok_or_else(|| {
            Error::Core(CoreError::Sampling(format!(
                "class {class:?} has fewer than 2 usable items"
            )))
        })?;
    Ok(Episode {
        support: vec![(support, class.clone())],
        query,
        class_label: class,
        fold_id: 0,
        sequence: data.index.item(query).sequence.clone(),
        support_frame: data.index.item(support).frame,
        query_frame: data.index.item(query).frame,
    })
}

/// Runs the model on the episode and writes the three-panel overlay.
pub fn render_episode(
    data: &LoadedDataset,
    model: &SegModel,
    set: &ParamSet,
    episode: &Episode,
    out: &Path,
) -> Result<()> {
    let ep_data = data.episode_data(episode, model.cfg.use_word_embeddings)?;
    let pred = model.predict(set, &ep_data).map_err(Error::Core)?;
    let support_mask = data.mask(episode.support[0].0);
    let overlay = compose_panels(support_mask, &ep_data.gt_mask, &pred)?;
    write_pgm(out, &overlay)
}

fn compose_panels(support: &Mask, gt: &Mask, pred: &SegPrediction) -> Result<GrayImage> {
    let h = support.height.max(gt.height).max(pred.height);
    let widths = [support.width, gt.width, pred.width];
    let total_w: usize = widths.iter().sum::<usize>() + 2; // two divider columns
    let mut pixels = vec![DIVIDER; total_w * h];

    let mut x0 = 0usize;
    for (panel, which) in [(0usize, 0u8), (1, 1), (2, 2)] {
        let w = widths[panel];
        for y in 0..h {
            for x in 0..w {
                let value = match which {
                    0 => mask_pixel(support, x, y),
                    1 => mask_pixel(gt, x, y),
                    _ => prob_pixel(pred, x, y),
                };
                pixels[y * total_w + x0 + x] = value;
            }
        }
        x0 += w + 1;
    }
    Ok(GrayImage::new(total_w, h, pixels))
}

fn mask_pixel(mask: &Mask, x: usize, y: usize) -> u8 {
    if x < mask.width && y < mask.height && mask.get(x, y) {
        255
    } else {
        0
    }
}

fn prob_pixel(pred: &SegPrediction, x: usize, y: usize) -> u8 {
    if x < pred.width && y < pred.height {
        (pred.probabilities()[y * pred.width + x] * 255.0).round() as u8
    } else {
        0
    }
}
