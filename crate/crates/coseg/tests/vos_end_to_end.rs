//! Video-flavored episodes through the whole stack: a hand-built dataset
//! of sequences (feature file + class-filtered mask per (class, frame)),
//! trained and evaluated via the runners. Confirms the first-frame support
//! law survives the IO layer and that multi-label frames work as one
//! record per class.

use std::fs;
use std::path::Path;

use coseg::checkpoint::ConfigFile;
use coseg::dataset::LoadedDataset;
use coseg::ften::write_ften;
use coseg::manifest::{write_class_list, write_manifest};
use coseg::pgm::write_mask;
use coseg::runner::{episode_kind, eval_runs, train_in_memory};
use coseg_core::episodes::{DatasetIndex, EpisodeKind, ItemRecord, Scheme};
use coseg_core::tensor::Mask;
use coseg_core::{rng, Tensor};
use rand::Rng;

const CHANNELS: usize = 6;
const GRID: usize = 4;
const IMAGE: usize = 16;

/// Writes a tiny video dataset: 4 classes x 3 sequences x 4 frames. Half
/// the sequences carry a second class on every frame (multi-label), giving
/// two records per frame with separate masks.
fn build_vos_dataset(dir: &Path) {
    fs::create_dir_all(dir.join("features")).unwrap();
    fs::create_dir_all(dir.join("masks")).unwrap();
    let classes: Vec<String> = (0..4).map(|k| format!("vclass{k}")).collect();
    let mut r = rng::stream(77, 42);

    let mut records = Vec::new();
    for (k, class) in classes.iter().enumerate() {
        for seq in 0..3 {
            let seq_id = format!("{class}-s{seq}");
            // A second class rides along in every other sequence.
            let other = (seq % 2 == 0).then(|| (k + 1) % 4);
            for frame in 1..=4u32 {
                let mut data = vec![0.0f64; CHANNELS * GRID * GRID];
                for v in data.iter_mut() {
                    *v = r.random_range(-0.2..0.2);
                }
                // Primary blob drifts one cell per frame.
                let x = (frame as usize - 1) % (GRID - 1);
                stamp_cell(&mut data, x, 1, 1.0 + k as f64 * 0.1);
                let mut primary_mask = Mask::filled(IMAGE, IMAGE, false);
                mask_cell(&mut primary_mask, x, 1);

                let feat_rel = format!("features/{seq_id}-f{frame}.ften");
                // Disk order is channels x width x height (innermost y).
                let mut raster = vec![0.0; CHANNELS * GRID * GRID];
                for c in 0..CHANNELS {
                    for x in 0..GRID {
                        for y in 0..GRID {
                            raster[(c * GRID + x) * GRID + y] =
                                data[c * GRID * GRID + y * GRID + x];
                        }
                    }
                }
                let tensor = Tensor::new(vec![CHANNELS, GRID, GRID], raster).unwrap();
                write_ften(&dir.join(&feat_rel), &tensor).unwrap();

                let mask_rel = format!("masks/{seq_id}-f{frame}-{class}.pgm");
                write_mask(&dir.join(&mask_rel), &primary_mask).unwrap();
                records.push(ItemRecord {
                    class: class.clone(),
                    path: feat_rel.clone(),
                    mask_path: mask_rel,
                    sequence: Some(seq_id.clone()),
                    frame: Some(frame),
                });

                if let Some(other_k) = other {
                    let other_class = &classes[other_k];
                    let mut other_mask = Mask::filled(IMAGE, IMAGE, false);
                    mask_cell(&mut other_mask, x, 3);
                    let mask_rel = format!("masks/{seq_id}-f{frame}-{other_class}.pgm");
                    write_mask(&dir.join(&mask_rel), &other_mask).unwrap();
                    records.push(ItemRecord {
                        class: other_class.clone(),
                        path: feat_rel.clone(),
                        mask_path: mask_rel,
                        sequence: Some(seq_id.clone()),
                        frame: Some(frame),
                    });
                }
            }
        }
    }
    let index = DatasetIndex::new(records).unwrap();
    write_manifest(&dir.join("manifest.jsonl"), &index).unwrap();
    write_class_list(&dir.join("classes.txt"), &classes).unwrap();

    let table: String = classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let e: Vec<String> = (0..6)
                .map(|i| format!("{}", ((k + i) % 4) as f64 * 0.5 - 0.75))
                .collect();
            format!("{c} {}\n", e.join(" "))
        })
        .collect();
    fs::write(dir.join("embeddings.txt"), table).unwrap();
}

fn stamp_cell(data: &mut [f64], x: usize, y: usize, value: f64) {
    for c in 0..CHANNELS {
        data[c * GRID * GRID + y * GRID + x] = value;
    }
}

fn mask_cell(mask: &mut Mask, cx: usize, cy: usize) {
    let scale = IMAGE / GRID;
    for y in cy * scale..(cy + 1) * scale {
        for x in cx * scale..(cx + 1) * scale {
            mask.set(x, y, true);
        }
    }
}

#[test]
fn vos_dataset_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    build_vos_dataset(dir.path());
    let data = LoadedDataset::open(dir.path()).unwrap();

    // Sequence metadata makes the episodes video-flavored.
    assert_eq!(episode_kind(&data.index), EpisodeKind::Vos);
    let sequences = data.index.vos_sequences();
    assert_eq!(sequences.len(), 12);
    assert!(sequences.iter().all(|s| s.frames == vec![1, 2, 3, 4]));
    // Multi-label sequences list both categories.
    assert!(sequences.iter().any(|s| s.classes.len() == 2));

    let config = ConfigFile {
        channels: CHANNELS,
        embed_dim: 8,
        depth: 2,
        encoder: "file".into(),
        upsample: 4,
        learning_rate: 0.05,
        momentum: 0.9,
        iterations: 40,
        seed: 1,
        use_word_embeddings: true,
        tie_blocks: false,
        eval_episodes: 30,
        ..ConfigFile::default()
    };
    let (model, set, outcome) = train_in_memory(&data, Scheme::Synth, 0, &config).unwrap();
    assert_eq!(outcome.loss_trace.len(), 40);
    assert!(outcome.loss_trace.iter().all(|l| l.is_finite()));

    let report = eval_runs(&data, Scheme::Synth, 0, &model, &set, 2, 3, 30).unwrap();
    assert_eq!(report.runs.len(), 2);
    for run in &report.runs {
        assert_eq!(run.n_episodes, 30);
        assert!((0.0..=1.0).contains(&run.mean_iou));
        assert!((0.0..=1.0).contains(&run.binary_iou));
        // Synth fold 0 tests the first class only.
        for class in run.per_class_iou.keys() {
            assert_eq!(class, "vclass0");
        }
    }
}
