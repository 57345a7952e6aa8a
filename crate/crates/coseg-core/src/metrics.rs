//! Segmentation evaluation: per-class IoU, mean-IoU with the background
//! excluded, class-agnostic binary-IoU, and multi-run aggregation.
//!
//! Everything reduces to integer pixel counts, so results are exact and
//! order-independent; merging parallel partial results is just summing
//! count pairs.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::Mask;

/// Pixel counts of one evaluated episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeCounts {
    pub class_label: String,
    /// `|pred AND gt|` over foreground.
    pub intersection: u64,
    /// `|pred OR gt|` over foreground.
    pub union: u64,
    /// Total pixels in the grid (for the background complement).
    pub pixels: u64,
}

impl EpisodeCounts {
    /// Counts from a prediction/ground-truth pair; shapes must agree.
    pub fn from_masks(class_label: &str, pred: &Mask, gt: &Mask) -> Result<Self, CoreError> {
        check_shapes(pred, gt)?;
        let mut intersection = 0u64;
        let mut union = 0u64;
        for (p, g) in pred.pixels().iter().zip(gt.pixels()) {
            intersection += u64::from(*p && *g);
            union += u64::from(*p || *g);
        }
        Ok(Self {
            class_label: class_label.into(),
            intersection,
            union,
            pixels: pred.len() as u64,
        })
    }
}

fn check_shapes(pred: &Mask, gt: &Mask) -> Result<(), CoreError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(CoreError::Dimension(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Ok(())
}

/// Intersection-over-union of two masks; `None` when the union is empty
/// (both masks all-background), which callers must treat as undefined
/// rather than 0 or 1.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<Option<f64>, CoreError> {
    let counts = EpisodeCounts::from_masks("", pred, gt)?;
    Ok(ratio(counts.intersection, counts.union))
}

fn ratio(intersection: u64, union: u64) -> Option<f64> {
    (union > 0).then(|| intersection as f64 / union as f64)
}

/// How per-class IoU aggregates across a class's episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerClassAggregation {
    /// Sum intersections and unions over the class's episodes, then divide
    /// (dataset-level IoU; the default).
    Dataset,
    /// Mean of per-episode IoUs (undefined episodes excluded).
    PerEpisode,
}

/// Per-class IoU over a fold's test classes plus their mean; classes whose
/// union is zero across all episodes are excluded from the mean.
pub fn mean_iou(
    results: &[EpisodeCounts],
    fold_test_classes: &[String],
    mode: PerClassAggregation,
) -> Result<(BTreeMap<String, f64>, f64), CoreError> {
    if results.is_empty() {
        return Err(CoreError::Contract("mean_iou: empty result set".into()));
    }
    for r in results {
        if !fold_test_classes.contains(&r.class_label) {
            return Err(CoreError::Contract(format!(
                "episode class {:?} is not among the fold's test classes",
                r.class_label
            )));
        }
    }
    let mut per_class = BTreeMap::new();
    for class in fold_test_classes {
        let of_class: Vec<&EpisodeCounts> =
            results.iter().filter(|r| &r.class_label == class).collect();
        if of_class.is_empty() {
            continue;
        }
        let value = match mode {
            PerClassAggregation::Dataset => {
                let i: u64 = of_class.iter().map(|r| r.intersection).sum();
                let u: u64 = of_class.iter().map(|r| r.union).sum();
                ratio(i, u)
            }
            PerClassAggregation::PerEpisode => {
                let defined: Vec<f64> = of_class
                    .iter()
                    .filter_map(|r| ratio(r.intersection, r.union))
                    .collect();
                (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
            }
        };
        if let Some(v) = value {
            per_class.insert(class.clone(), v);
        }
    }
    if per_class.is_empty() {
        return Err(CoreError::Contract(
            "mean_iou: every class had an empty union (undefined IoU)".into(),
        ));
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, mean))
}

/// Class-agnostic binary IoU: pools all episodes, computes the foreground
/// IoU and the background IoU (over complement masks), and returns their
/// mean.
pub fn binary_iou(results: &[EpisodeCounts]) -> Result<f64, CoreError> {
    if results.is_empty() {
        return Err(CoreError::Contract("binary_iou: empty result set".into()));
    }
    let fg_i: u64 = results.iter().map(|r| r.intersection).sum();
    let fg_u: u64 = results.iter().map(|r| r.union).sum();
    let total: u64 = results.iter().map(|r| r.pixels).sum();
    // Complement identities: |!p AND !g| = total - |p OR g|,
    // |!p OR !g| = total - |p AND g|.
    let bg_i = total - fg_u;
    let bg_u = total - fg_i;
    let parts: Vec<f64> = [ratio(fg_i, fg_u), ratio(bg_i, bg_u)]
        .into_iter()
        .flatten()
        .collect();
    if parts.is_empty() {
        return Err(CoreError::Contract(
            "binary_iou: no pixels to evaluate".into(),
        ));
    }
    Ok(parts.iter().sum::<f64>() / parts.len() as f64)
}

/// Metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class_iou: BTreeMap<String, f64>,
    pub mean_iou: f64,
    pub binary_iou: f64,
    pub n_episodes: usize,
    pub run_seed: u64,
}

/// Builds one run's report from its episode counts.
pub fn build_report(
    results: &[EpisodeCounts],
    fold_test_classes: &[String],
    mode: PerClassAggregation,
    run_seed: u64,
) -> Result<MetricReport, CoreError> {
    let (per_class_iou, mean) = mean_iou(results, fold_test_classes, mode)?;
    let binary = binary_iou(results)?;
    Ok(MetricReport {
        per_class_iou,
        mean_iou: mean,
        binary_iou: binary,
        n_episodes: results.len(),
        run_seed,
    })
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub stddev: f64,
}

fn stats(values: &[f64]) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() < 2 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        libm::sqrt(ss / (n - 1.0))
    };
    MetricStats { mean, stddev }
}

/// Cross-run aggregate. A run count differing from the expected count is
/// reported as a warning, not an error.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub runs: usize,
    pub expected_runs: usize,
    pub mean_iou: MetricStats,
    pub binary_iou: MetricStats,
    pub warning: Option<String>,
}

pub fn aggregate_runs(reports: &[MetricReport], expected: usize) -> Result<RunSummary, CoreError> {
    if reports.is_empty() {
        return Err(CoreError::Contract("aggregate_runs: no reports".into()));
    }
    let mean_vals: Vec<f64> = reports.iter().map(|r| r.mean_iou).collect();
    let bin_vals: Vec<f64> = reports.iter().map(|r| r.binary_iou).collect();
    let warning = (reports.len() != expected)
        .then(|| format!("expected {expected} runs, aggregating {}", reports.len()));
    Ok(RunSummary {
        runs: reports.len(),
        expected_runs: expected,
        mean_iou: stats(&mean_vals),
        binary_iou: stats(&bin_vals),
        warning,
    })
}
