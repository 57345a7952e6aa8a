//! Fold construction and episodic sampling.
//!
//! Folds partition a class list into held-out novel classes (`test`) and
//! meta-training classes (`train`), contiguously over the caller-provided
//! ordering. Episodes are 1-way: a support item with its class word plus a
//! query item of the same class. The video flavor always uses the first
//! frame of a sequence as support and a random later frame as query.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::CoreError;

/// Benchmark fold scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// 20 classes, 4 folds, 5 novel classes each.
    Pascal,
    /// 65 classes, 5 folds, 13 novel classes each.
    Vos,
    /// Synthetic benchmark: 4 folds, a quarter of the classes each.
    Synth,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self, CoreError> {
        match s {
            "pascal" => Ok(Scheme::Pascal),
            "vos" => Ok(Scheme::Vos),
            "synth" => Ok(Scheme::Synth),
            other => Err(CoreError::Config(format!(
                "unknown scheme {other:?}; expected pascal, vos or synth"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Pascal => "pascal",
            Scheme::Vos => "vos",
            Scheme::Synth => "synth",
        }
    }
}

/// One fold: the held-out novel classes and the complementary training
/// classes, both in the original class order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub fold_id: usize,
    pub test_classes: Vec<String>,
    pub train_classes: Vec<String>,
}

impl FoldSpec {
    pub fn classes_for(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_classes,
            Split::Test => &self.test_classes,
        }
    }
}

/// Which side of a fold episodes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Splits `classes` into folds: fold `i` tests the `i`-th contiguous chunk
/// of the input ordering and trains on the rest.
pub fn make_folds(classes: &[String], scheme: Scheme) -> Result<Vec<FoldSpec>, CoreError> {
    let distinct: BTreeSet<&String> = classes.iter().collect();
    if distinct.len() != classes.len() {
        return Err(CoreError::Config("class list contains duplicates".into()));
    }
    let (expected, per_fold) = match scheme {
        Scheme::Pascal => (Some(20), 5),
        Scheme::Vos => (Some(65), 13),
        Scheme::Synth => {
            if classes.len() < 4 || !classes.len().is_multiple_of(4) {
                return Err(CoreError::Config(format!(
                    "synth scheme needs a class count divisible by 4, got {}",
                    classes.len()
                )));
            }
            (None, classes.len() / 4)
        }
    };
    if let Some(expected) = expected {
        if classes.len() != expected {
            return Err(CoreError::Config(format!(
                "{} scheme expects exactly {expected} classes, got {}",
                scheme.name(),
                classes.len()
            )));
        }
    }
    let n_folds = classes.len() / per_fold;
    let folds = (0..n_folds)
        .map(|fold_id| {
            let lo = fold_id * per_fold;
            let hi = lo + per_fold;
            FoldSpec {
                fold_id,
                test_classes: classes[lo..hi].to_vec(),
                train_classes: classes[..lo]
                    .iter()
                    .chain(&classes[hi..])
                    .cloned()
                    .collect(),
            }
        })
        .collect();
    Ok(folds)
}

/// One dataset item as listed in the manifest. `sequence`/`frame` are set
/// for video items only; frames are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRecord {
    pub class: String,
    /// Path (or other reference) to the feature file or image.
    pub path: String,
    pub mask_path: String,
    pub sequence: Option<String>,
    pub frame: Option<u32>,
}

/// Per-sequence view of the video items, for protocol checks.
#[derive(Debug, Clone)]
pub struct VosSequence {
    pub sequence_id: String,
    /// Sorted distinct frame indices present (1-based).
    pub frames: Vec<u32>,
    /// Category labels appearing anywhere in the sequence.
    pub classes: Vec<String>,
}

/// Immutable, validated dataset index.
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    items: Vec<ItemRecord>,
    by_class: BTreeMap<String, Vec<usize>>,
    /// class -> sequence -> sorted (frame, item) pairs.
    vos: BTreeMap<String, BTreeMap<String, Vec<(u32, usize)>>>,
}

impl DatasetIndex {
    pub fn new(items: Vec<ItemRecord>) -> Result<Self, CoreError> {
        let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut vos: BTreeMap<String, BTreeMap<String, Vec<(u32, usize)>>> = BTreeMap::new();
        for (idx, item) in items.iter().enumerate() {
            by_class.entry(item.class.clone()).or_default().push(idx);
            match (&item.sequence, item.frame) {
                (Some(seq), Some(frame)) => {
                    if frame == 0 {
                        return Err(CoreError::Data(format!(
                            "sequence {seq:?} has a frame index 0; frames are 1-based"
                        )));
                    }
                    let frames = vos
                        .entry(item.class.clone())
                        .or_default()
                        .entry(seq.clone())
                        .or_default();
                    if frames.iter().any(|&(f, _)| f == frame) {
                        return Err(CoreError::Data(format!(
                            "duplicate frame {frame} for class {:?} in sequence {seq:?}",
                            item.class
                        )));
                    }
                    frames.push((frame, idx));
                }
                (None, None) => {}
                _ => {
                    return Err(CoreError::Data(format!(
                        "item {idx}: sequence and frame must be present together"
                    )));
                }
            }
        }
        for seqs in vos.values_mut() {
            for frames in seqs.values_mut() {
                frames.sort_unstable();
            }
        }
        Ok(Self {
            items,
            by_class,
            vos,
        })
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn item(&self, idx: usize) -> &ItemRecord {
        &self.items[idx]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = &String> {
        self.by_class.keys()
    }

    pub fn items_of_class(&self, class: &str) -> &[usize] {
        self.by_class.get(class).map_or(&[], |v| v.as_slice())
    }

    /// Sequence views of all video items (grouped across classes).
    pub fn vos_sequences(&self) -> Vec<VosSequence> {
        let mut by_seq: BTreeMap<&String, (BTreeSet<u32>, BTreeSet<&String>)> = BTreeMap::new();
        for (class, seqs) in &self.vos {
            for (seq, frames) in seqs {
                let entry = by_seq.entry(seq).or_default();
                entry.0.extend(frames.iter().map(|&(f, _)| f));
                entry.1.insert(class);
            }
        }
        by_seq
            .into_iter()
            .map(|(seq, (frames, classes))| VosSequence {
                sequence_id: seq.clone(),
                frames: frames.into_iter().collect(),
                classes: classes.into_iter().cloned().collect(),
            })
            .collect()
    }
}

/// Flavor of episode construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeKind {
    /// Support and query are two distinct items of the class.
    Static,
    /// Support is the class's first frame of a sequence; the query is a
    /// random later frame of the same sequence.
    Vos,
}

/// One sampled 1-way episode, referring into the [`DatasetIndex`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Support item indices, each paired with its class word.
    pub support: Vec<(usize, String)>,
    pub query: usize,
    pub class_label: String,
    pub fold_id: usize,
    pub sequence: Option<String>,
    pub support_frame: Option<u32>,
    pub query_frame: Option<u32>,
}

/// Draws one episode from the given fold split. Class choice is uniform
/// over the split's classes that appear in the index; an unusable sampled
/// class is an error naming it, never a silent resample.
pub fn sample_episode(
    index: &DatasetIndex,
    fold: &FoldSpec,
    split: Split,
    kind: EpisodeKind,
    rng: &mut impl Rng,
) -> Result<Episode, CoreError> {
    let candidates: Vec<&String> = fold
        .classes_for(split)
        .iter()
        .filter(|c| match kind {
            EpisodeKind::Static => !index.items_of_class(c).is_empty(),
            EpisodeKind::Vos => index.vos.contains_key(*c),
        })
        .collect();
    if candidates.is_empty() {
        return Err(CoreError::Sampling(format!(
            "no {:?}-split class of fold {} is present in the dataset index",
            split, fold.fold_id
        )));
    }
    let class = candidates[rng.random_range(0..candidates.len())].clone();

    match kind {
        EpisodeKind::Static => {
            let items = index.items_of_class(&class);
            if items.len() < 2 {
                return Err(CoreError::Sampling(format!(
                    "class {class:?} has fewer than 2 usable items"
                )));
            }
            let support = items[rng.random_range(0..items.len())];
            let query = loop {
                let q = items[rng.random_range(0..items.len())];
                if q != support {
                    break q;
                }
            };
            Ok(Episode {
                support: alloc::vec![(support, class.clone())],
                query,
                class_label: class,
                fold_id: fold.fold_id,
                sequence: None,
                support_frame: None,
                query_frame: None,
            })
        }
        EpisodeKind::Vos => {
            let seqs = index.vos.get(&class).expect("filtered above");
            // Usable: has the class on frame 1 and on some later frame.
            let usable: Vec<(&String, &Vec<(u32, usize)>)> = seqs
                .iter()
                .filter(|(_, frames)| {
                    frames.first().is_some_and(|&(f, _)| f == 1)
                        && frames.iter().any(|&(f, _)| f >= 2)
                })
                .collect();
            if usable.is_empty() {
                return Err(CoreError::Sampling(format!(
                    "class {class:?} has fewer than 2 usable items (no sequence with a labelled \
                     first frame and a later frame)"
                )));
            }
            let (seq, frames) = usable[rng.random_range(0..usable.len())];
            let support_item = frames[0].1;
            let later: Vec<&(u32, usize)> = frames.iter().filter(|&&(f, _)| f >= 2).collect();
            let &(query_frame, query_item) = later[rng.random_range(0..later.len())];
            Ok(Episode {
                support: alloc::vec![(support_item, class.clone())],
                query: query_item,
                class_label: class,
                fold_id: fold.fold_id,
                sequence: Some(seq.to_string()),
                support_frame: Some(1),
                query_frame: Some(query_frame),
            })
        }
    }
}
