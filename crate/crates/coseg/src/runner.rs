//! Train and eval orchestration over an on-disk dataset, shared by the
//! CLI and the acceptance suite.
//!
//! All randomness of a run flows from one seed through named sub-streams:
//! initialization, the training sampler, and one sampler per evaluation
//! run (run `r` re-seeds with `seed + r`). Reports are plain data with a
//! deterministic JSON form, so identical invocations produce byte-equal
//! report files.

use std::collections::BTreeMap;
use std::path::Path;

use coseg_core::episodes::{
    sample_episode, DatasetIndex, Episode, EpisodeKind, FoldSpec, Scheme, Split,
};
use coseg_core::metrics::{self, EpisodeCounts, PerClassAggregation};
use coseg_core::model::{EpisodeData, SegModel};
use coseg_core::rng::{self, ChaCha8Rng};
use coseg_core::tensor::ParamSet;
use coseg_core::train::{train, EpisodeStream, TrainOutcome};
use coseg_core::CoreError;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, ConfigFile};
use crate::dataset::LoadedDataset;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// Builds the folds for a dataset's class order and picks one.
pub fn fold_for(classes: &[String], scheme: Scheme, fold_id: usize) -> Result<FoldSpec> {
    let folds = coseg_core::episodes::make_folds(classes, scheme).map_err(Error::Core)?;
    let n = folds.len();
    folds
        .into_iter()
        .find(|f| f.fold_id == fold_id)
        .ok_or_else(|| {
            Error::Core(CoreError::Config(format!(
                "fold {fold_id} out of range; the {} scheme has {n} folds",
                scheme.name()
            )))
        })
}

/// Episodes are video-flavored when any item carries sequence metadata.
pub fn episode_kind(index: &DatasetIndex) -> EpisodeKind {
    if index.items().iter().any(|i| i.sequence.is_some()) {
        EpisodeKind::Vos
    } else {
        EpisodeKind::Static
    }
}

/// Training stream: samples train-split episodes and materializes them
/// from the preloaded dataset.
struct DiskStream<'a> {
    data: &'a LoadedDataset,
    fold: &'a FoldSpec,
    kind: EpisodeKind,
    needs_embedding: bool,
    rng: ChaCha8Rng,
}

impl EpisodeStream for DiskStream<'_> {
    fn next_episode(&mut self) -> std::result::Result<EpisodeData, CoreError> {
        let ep = sample_episode(
            &self.data.index,
            self.fold,
            Split::Train,
            self.kind,
            &mut self.rng,
        )?;
        self.data
            .episode_data(&ep, self.needs_embedding)
            .map_err(|e| CoreError::Data(e.to_string()))
    }
}

/// Trains on the fold's train split per the config and writes the
/// checkpoint (plus the loss trace) to `out_dir`.
pub fn train_run(
    data: &LoadedDataset,
    scheme: Scheme,
    fold_id: usize,
    config: &ConfigFile,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let (model, set, outcome) = train_in_memory(data, scheme, fold_id, config)?;
    save_checkpoint(out_dir, config, &model, &set)?;
    let trace = serde_json::json!({ "loss_trace": outcome.loss_trace });
    let mut json = serde_json::to_string_pretty(&trace).expect("trace serializes");
    json.push('\n');
    write_atomic(&out_dir.join("training_log.json"), json.as_bytes())?;
    Ok(outcome)
}

/// Training without touching the filesystem for outputs; also used by the
/// acceptance suite. Returns the model, trained parameters, and the trace.
pub fn train_in_memory(
    data: &LoadedDataset,
    scheme: Scheme,
    fold_id: usize,
    config: &ConfigFile,
) -> Result<(SegModel, ParamSet, TrainOutcome)> {
    let cfg = config.to_model_config()?;
    let fold = fold_for(&data.classes, scheme, fold_id)?;
    let embed_input_dim = if cfg.use_word_embeddings {
        data.table.dim()
    } else {
        0
    };

    let mut set = ParamSet::new();
    let mut init_rng = rng::stream(cfg.seed, rng::streams::INIT);
    let needs_embedding = cfg.use_word_embeddings;
    let seed = cfg.seed;
    let model =
        SegModel::init(cfg, embed_input_dim, &mut set, &mut init_rng).map_err(Error::Core)?;

    let mut stream = DiskStream {
        data,
        fold: &fold,
        kind: episode_kind(&data.index),
        needs_embedding,
        rng: rng::stream(seed, rng::streams::SAMPLER),
    };
    let outcome = train(&model, &mut set, &mut stream).map_err(Error::Core)?;
    Ok((model, set, outcome))
}

/// One evaluation run's metrics, as serialized into the report file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub scheme: String,
    pub fold_id: usize,
    pub run_seed: u64,
    pub per_class_iou: BTreeMap<String, f64>,
    pub mean_iou: f64,
    pub binary_iou: f64,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalSummary {
    pub runs: usize,
    pub expected_runs: usize,
    pub mean_iou: MetricSummary,
    pub binary_iou: MetricSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Full evaluation report: per-run entries plus the aggregate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub scheme: String,
    pub fold_id: usize,
    pub episodes_per_run: usize,
    pub runs: Vec<RunReport>,
    pub summary: EvalSummary,
}

/// Evaluates a trained model over `runs` seeded runs on the fold's test
/// split. Run `r` draws its episodes from seed `seed + r`.
#[allow(clippy::too_many_arguments)]
pub fn eval_runs(
    data: &LoadedDataset,
    scheme: Scheme,
    fold_id: usize,
    model: &SegModel,
    set: &ParamSet,
    runs: usize,
    seed: u64,
    episodes_per_run: usize,
) -> Result<EvalReport> {
    eval_runs_with(
        data,
        scheme,
        fold_id,
        model,
        set,
        runs,
        seed,
        episodes_per_run,
        PerClassAggregation::Dataset,
    )
}

/// [`eval_runs`] with an explicit per-class aggregation mode (the
/// per-episode mode exists for sensitivity analysis).
#[allow(clippy::too_many_arguments)]
pub fn eval_runs_with(
    data: &LoadedDataset,
    scheme: Scheme,
    fold_id: usize,
    model: &SegModel,
    set: &ParamSet,
    runs: usize,
    seed: u64,
    episodes_per_run: usize,
    aggregation: PerClassAggregation,
) -> Result<EvalReport> {
    if runs == 0 || episodes_per_run == 0 {
        return Err(Error::Core(CoreError::Contract(
            "evaluation needs at least one run and one episode per run".into(),
        )));
    }
    let fold = fold_for(&data.classes, scheme, fold_id)?;
    let kind = episode_kind(&data.index);
    let needs_embedding = model.cfg.use_word_embeddings;

    let mut reports = Vec::with_capacity(runs);
    for r in 0..runs {
        let run_seed = seed + r as u64;
        let mut rng = rng::stream(run_seed, rng::streams::EVAL_BASE);
        let mut counts = Vec::with_capacity(episodes_per_run);
        for _ in 0..episodes_per_run {
            let episode = sample_episode(&data.index, &fold, Split::Test, kind, &mut rng)
                .map_err(Error::Core)?;
            counts.push(evaluate_episode(
                data,
                model,
                set,
                &episode,
                needs_embedding,
            )?);
        }
        let report = metrics::build_report(&counts, &fold.test_classes, aggregation, run_seed)
            .map_err(Error::Core)?;
        reports.push(report);
    }

    let summary = metrics::aggregate_runs(&reports, runs).map_err(Error::Core)?;
    Ok(EvalReport {
        scheme: scheme.name().to_string(),
        fold_id,
        episodes_per_run,
        runs: reports
            .into_iter()
            .map(|r| RunReport {
                scheme: scheme.name().to_string(),
                fold_id,
                run_seed: r.run_seed,
                per_class_iou: r.per_class_iou.into_iter().collect(),
                mean_iou: r.mean_iou,
                binary_iou: r.binary_iou,
                n_episodes: r.n_episodes,
            })
            .collect(),
        summary: EvalSummary {
            runs: summary.runs,
            expected_runs: summary.expected_runs,
            mean_iou: MetricSummary {
                mean: summary.mean_iou.mean,
                stddev: summary.mean_iou.stddev,
            },
            binary_iou: MetricSummary {
                mean: summary.binary_iou.mean,
                stddev: summary.binary_iou.stddev,
            },
            warning: summary.warning,
        },
    })
}

fn evaluate_episode(
    data: &LoadedDataset,
    model: &SegModel,
    set: &ParamSet,
    episode: &Episode,
    needs_embedding: bool,
) -> Result<EpisodeCounts> {
    let ep_data = data.episode_data(episode, needs_embedding)?;
    let pred = model.predict(set, &ep_data).map_err(Error::Core)?;
    EpisodeCounts::from_masks(&episode.class_label, &pred.binarized(), &ep_data.gt_mask)
        .map_err(Error::Core)
}

/// Serializes a report with a trailing newline, stable field order and
/// sorted per-class maps.
pub fn report_to_json(report: &EvalReport) -> String {
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    json
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_atomic(path, report_to_json(report).as_bytes())
}
