//! Synthetic episodic benchmark: a desk-scale stand-in for the real
//! datasets, built so the protocol and the ablation are exercised end to
//! end.
//!
//! Every class gets a feature signature `s_k = a*u0 + b*r_k`, where `u0`
//! is a direction shared by all classes (so "some object is here" is easy
//! to learn and transfers to novel classes) and the `r_k` are mutually
//! orthogonal class-distinctive directions. The class word embedding is a
//! fixed orthonormal lift of `r_k` into embedding space, so the visual
//! signature is linearly recoverable from the embedding, including for
//! held-out classes.
//!
//! Items are feature grids (what a 4x-reducing encoder would produce from
//! the nominal image size) with one blob of the item's class; two-object
//! mode adds a distractor blob of the class's fixed partner (`k XOR 1`). Partner pairing makes support and query share *two* common
//! classes, so attention commonality alone cannot tell which blob is the
//! target; only the class word disambiguates. Masks cover the primary blob
//! only, at the nominal image resolution.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::CoreError;
use crate::model::FeatureMap;
use crate::rng::{self, streams};
use crate::tensor::Mask;

/// Generator configuration.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub items_per_class: usize,
    /// Nominal (mask) image side; the feature grid is `image_size / 4`.
    pub image_size: usize,
    /// Feature channels.
    pub channels: usize,
    /// Embedding-table dimension `E`.
    pub embed_dim: usize,
    /// Add a distractor blob of the partner class to every item.
    pub two_object: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            items_per_class: 20,
            image_size: 16,
            channels: 12,
            embed_dim: 16,
            two_object: false,
            seed: 0,
        }
    }
}

/// One generated item: features, exact mask, and blob bookkeeping.
#[derive(Debug, Clone)]
pub struct SynthItem {
    pub class_idx: usize,
    pub features: FeatureMap,
    pub mask: Mask,
    /// Primary blob in feature-grid cells: (x, y, w, h).
    pub blob: (usize, usize, usize, usize),
    /// Distractor blob and its class, in two-object mode.
    pub distractor: Option<(usize, usize, usize, usize, usize)>,
}

/// A full in-memory synthetic dataset.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub cfg: SynthConfig,
    pub class_labels: Vec<String>,
    /// Per-class word embeddings, `E` values each.
    pub embeddings: Vec<Vec<f64>>,
    /// Per-class feature signatures, `channels` values each.
    pub signatures: Vec<Vec<f64>>,
    /// Items grouped class-major: item `k * items_per_class + i`.
    pub items: Vec<SynthItem>,
}

/// Shared-direction weight in every signature.
const SHARED_WEIGHT: f64 = 0.4;
/// Class-distinctive weight in every signature.
const DISTINCT_WEIGHT: f64 = 1.2;
/// Feature noise on blob cells.
const BLOB_NOISE: f64 = 0.10;
/// Feature noise on background cells.
const BACKGROUND_NOISE: f64 = 0.15;
/// Noise added to the lifted embeddings.
const EMBED_NOISE: f64 = 0.01;
/// Dimension of the latent class codes (clamped to the configured dims).
const SEMANTIC_RANK: usize = 4;
/// Rejection bound on pairwise latent-code cosine similarity.
const MAX_CODE_COSINE: f64 = 0.7;
/// Tighter bound between a class and its two-object partner, so the
/// distinction the distractor forces the model to make is well
/// conditioned.
const MAX_PARTNER_COSINE: f64 = 0.2;

pub fn generate_synthetic_dataset(cfg: SynthConfig) -> Result<SynthDataset, CoreError> {
    if cfg.n_classes < 2 {
        return Err(CoreError::Config(format!(
            "synthetic dataset needs at least 2 classes, got {}",
            cfg.n_classes
        )));
    }
    if cfg.two_object && !cfg.n_classes.is_multiple_of(2) {
        return Err(CoreError::Config(format!(
            "two-object mode pairs classes and needs an even class count, got {}",
            cfg.n_classes
        )));
    }
    if cfg.image_size < 8 || !cfg.image_size.is_multiple_of(4) {
        return Err(CoreError::Config(format!(
            "image size must be a multiple of 4 and at least 8, got {}",
            cfg.image_size
        )));
    }
    if cfg.items_per_class < 2 {
        return Err(CoreError::Config(format!(
            "need at least 2 items per class to form episodes, got {}",
            cfg.items_per_class
        )));
    }
    if cfg.channels < 2 || cfg.embed_dim < 1 {
        return Err(CoreError::Config(format!(
            "need channels >= 2 and embed_dim >= 1, got {} and {}",
            cfg.channels, cfg.embed_dim
        )));
    }

    let mut rng = rng::stream(cfg.seed, streams::SYNTH);
    let grid = cfg.image_size / 4;

    // Every class gets a low-rank latent code; both the word embedding and
    // the visual direction are fixed linear images of it. Held-out
    // classes therefore stay inside the subspace a model can identify
    // from the training classes; like real word embeddings, novel labels
    // share the structure of seen ones.
    let rank = SEMANTIC_RANK
        .min(cfg.embed_dim)
        .min(cfg.channels - 1)
        .max(1);
    let codes = latent_codes(&mut rng, cfg.n_classes, rank, cfg.two_object);

    // Visual lift of the codes, then the shared direction orthogonal to
    // its span so "some object here" and "which object" are independent.
    let visual_lift = orthonormal_columns(&mut rng, cfg.channels, rank);
    let visual_cols: Vec<Vec<f64>> = (0..rank)
        .map(|c| (0..cfg.channels).map(|r| visual_lift[r][c]).collect())
        .collect();
    let against: Vec<&[f64]> = visual_cols.iter().map(|v| v.as_slice()).collect();
    let u0 = unit_vector(&mut rng, cfg.channels, &against);

    let class_dirs: Vec<Vec<f64>> = codes
        .iter()
        .map(|code| {
            let mut dir: Vec<f64> = (0..cfg.channels)
                .map(|r| (0..rank).map(|c| visual_lift[r][c] * code[c]).sum())
                .collect();
            let norm = libm::sqrt(dir.iter().map(|x| x * x).sum());
            dir.iter_mut().for_each(|x| *x /= norm);
            dir
        })
        .collect();
    let signatures: Vec<Vec<f64>> = class_dirs
        .iter()
        .map(|r| {
            u0.iter()
                .zip(r)
                .map(|(u, rk)| SHARED_WEIGHT * u + DISTINCT_WEIGHT * rk)
                .collect()
        })
        .collect();

    // Embedding lift of the same codes.
    let embed_lift = orthonormal_columns(&mut rng, cfg.embed_dim, rank);
    let noise = Normal::new(0.0, EMBED_NOISE).expect("finite std");
    let embeddings: Vec<Vec<f64>> = codes
        .iter()
        .map(|code| {
            (0..cfg.embed_dim)
                .map(|e| {
                    let lifted: f64 = (0..rank).map(|c| embed_lift[e][c] * code[c]).sum();
                    lifted + noise.sample(&mut rng)
                })
                .collect()
        })
        .collect();

    let width = label_width(cfg.n_classes);
    let class_labels: Vec<String> = (0..cfg.n_classes)
        .map(|k| format!("class{k:0width$}"))
        .collect();

    let blob_noise = Normal::new(0.0, BLOB_NOISE).expect("finite std");
    let bg_noise = Normal::new(0.0, BACKGROUND_NOISE).expect("finite std");

    let mut items = Vec::with_capacity(cfg.n_classes * cfg.items_per_class);
    for class_idx in 0..cfg.n_classes {
        for _ in 0..cfg.items_per_class {
            let blob = random_rect(&mut rng, grid, &BLOB_SIZES);
            let distractor = if cfg.two_object {
                let partner = class_idx ^ 1;
                Some(place_disjoint(&mut rng, grid, blob, partner))
            } else {
                None
            };

            // Background noise everywhere, signatures on blob cells.
            let mut data = vec![0.0; cfg.channels * grid * grid];
            for v in data.iter_mut() {
                *v = bg_noise.sample(&mut rng);
            }
            stamp(
                &mut data,
                cfg.channels,
                grid,
                blob,
                &signatures[class_idx],
                &blob_noise,
                &mut rng,
            );
            if let Some((x, y, w, h, partner)) = distractor {
                stamp(
                    &mut data,
                    cfg.channels,
                    grid,
                    (x, y, w, h),
                    &signatures[partner],
                    &blob_noise,
                    &mut rng,
                );
            }

            let mask = cell_mask(cfg.image_size, grid, blob);
            items.push(SynthItem {
                class_idx,
                features: FeatureMap::new(cfg.channels, grid, grid, data)?,
                mask,
                blob,
                distractor,
            });
        }
    }

    Ok(SynthDataset {
        cfg,
        class_labels,
        embeddings,
        signatures,
        items,
    })
}

impl SynthDataset {
    pub fn label(&self, class_idx: usize) -> &str {
        &self.class_labels[class_idx]
    }
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb: f64 = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn label_width(n: usize) -> usize {
    let mut width = 2;
    let mut cap = 100;
    while n > cap {
        width += 1;
        cap *= 10;
    }
    width
}

/// Latent unit codes with bounded pairwise cosine similarity. Rejection
/// sampling; the bound relaxes after repeated misses so large class
/// counts in low rank still terminate (packing more vectors than the
/// sphere admits at the target bound).
fn latent_codes(rng: &mut impl Rng, n: usize, rank: usize, paired: bool) -> Vec<Vec<f64>> {
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut bound = MAX_CODE_COSINE;
    let mut partner_bound = MAX_PARTNER_COSINE;
    let mut misses = 0usize;
    while codes.len() < n {
        let candidate = unit_vector(rng, rank, &[]);
        let ok = codes.iter().enumerate().all(|(i, c)| {
            let dot: f64 = c.iter().zip(&candidate).map(|(a, b)| a * b).sum();
            let limit = if paired && i == (codes.len() ^ 1) {
                partner_bound
            } else {
                bound
            };
            dot.abs() <= limit
        });
        if ok {
            codes.push(candidate);
            misses = 0;
        } else {
            misses += 1;
            if misses >= 200 {
                bound = (bound + 0.02).min(0.999);
                partner_bound = (partner_bound + 0.02).min(0.999);
                misses = 0;
            }
        }
    }
    codes
}

/// Random unit vector, Gram-Schmidt-orthogonalized against `against`
/// where dimensionality allows.
fn unit_vector(rng: &mut impl Rng, dim: usize, against: &[&[f64]]) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("finite std");
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        if against.len() < dim {
            for other in against {
                let dot: f64 = v.iter().zip(*other).map(|(a, b)| a * b).sum();
                for (vi, oi) in v.iter_mut().zip(*other) {
                    *vi -= dot * oi;
                }
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

/// `rows x cols` matrix with orthonormal columns (rows >= cols assumed
/// best-effort; columns are orthogonalized as far as the dimension
/// allows). Indexed `[row][col]`.
fn orthonormal_columns(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for _ in 0..cols {
        let against: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        columns.push(unit_vector(rng, rows, &against));
    }
    // Transpose to row-major [row][col].
    (0..rows)
        .map(|r| (0..cols).map(|c| columns[c][r]).collect())
        .collect()
}

/// Primary and distractor blobs share one size distribution, so apparent
/// size never separates them; only the class word does.
const BLOB_SIZES: [(usize, usize); 3] = [(1, 2), (2, 1), (2, 2)];

fn random_rect(
    rng: &mut impl Rng,
    grid: usize,
    sizes: &[(usize, usize)],
) -> (usize, usize, usize, usize) {
    let (w, h) = sizes[rng.random_range(0..sizes.len())];
    let (w, h) = (w.min(grid), h.min(grid));
    let x = rng.random_range(0..=grid - w);
    let y = rng.random_range(0..=grid - h);
    (x, y, w, h)
}

fn rects_overlap(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    let (ax, ay, aw, ah) = a;
    let (bx, by, bw, bh) = b;
    ax < bx + bw && bx < ax + aw && ay < by + bh && by < ay + ah
}

/// Distractor placement disjoint from the primary blob; falls back to the
/// first free single cell, which always exists on a 4x4-or-larger grid.
fn place_disjoint(
    rng: &mut impl Rng,
    grid: usize,
    primary: (usize, usize, usize, usize),
    partner: usize,
) -> (usize, usize, usize, usize, usize) {
    for _ in 0..100 {
        let r = random_rect(rng, grid, &BLOB_SIZES);
        if !rects_overlap(primary, r) {
            return (r.0, r.1, r.2, r.3, partner);
        }
    }
    for y in 0..grid {
        for x in 0..grid {
            if !rects_overlap(primary, (x, y, 1, 1)) {
                return (x, y, 1, 1, partner);
            }
        }
    }
    unreachable!("a blob of at most 2x2 cannot cover a grid of at least 4x4");
}

fn stamp(
    data: &mut [f64],
    channels: usize,
    grid: usize,
    rect: (usize, usize, usize, usize),
    signature: &[f64],
    noise: &Normal<f64>,
    rng: &mut impl Rng,
) {
    let (bx, by, bw, bh) = rect;
    for y in by..by + bh {
        for x in bx..bx + bw {
            let cell = y * grid + x;
            for c in 0..channels {
                data[c * grid * grid + cell] = signature[c] + noise.sample(rng);
            }
        }
    }
}

/// Mask covering the blob's cells scaled up to the nominal image size.
fn cell_mask(image_size: usize, grid: usize, rect: (usize, usize, usize, usize)) -> Mask {
    let scale = image_size / grid;
    let mut mask = Mask::filled(image_size, image_size, false);
    let (bx, by, bw, bh) = rect;
    for y in by * scale..(by + bh) * scale {
        for x in bx * scale..(bx + bw) * scale {
            mask.set(x, y, true);
        }
    }
    mask
}
