//! Central finite-difference verification of the analytic gradients, over
//! every registered parameter of a model.
//!
//! The numeric side only ever runs forward passes, so it stays independent
//! of the hand-derived backward implementations it is checking. The same
//! routine backs the `gradcheck` command and the acceptance gate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::CoreError;
use crate::graph::Graph;
use crate::model::{EncoderBackend, EncoderInput, EpisodeData, ModelConfig, SegModel};
use crate::rng::{self, streams};
use crate::tensor::{Mask, ParamSet};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Acceptance threshold on the max relative error.
pub const REL_TOL: f64 = 1e-4;
/// Floor for the relative-error denominator; gradients below
/// finite-difference resolution would otherwise dominate the ratio.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Name of the parameter holding the worst element.
    pub worst_param: String,
    /// Number of scalar weights checked.
    pub n_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= REL_TOL
    }
}

/// Relative error with a floored denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradients currently stored in `set` (the analytic side)
/// against central finite differences of `forward` at step `FD_STEP`.
///
/// `forward` must be a pure function of the parameter values.
pub fn max_rel_error<F>(set: &mut ParamSet, forward: F) -> Result<GradCheckReport, CoreError>
where
    F: Fn(&ParamSet) -> Result<f64, CoreError>,
{
    let mut worst = 0.0f64;
    let mut worst_param = String::new();
    let mut checked = 0usize;

    for idx in 0..set.len() {
        let pid = crate::tensor::ParamId(idx);
        let n = set.get(pid).tensor.len();
        for e in 0..n {
            let analytic = set.get(pid).tensor.grad().map_or(0.0, |g| g[e]);
            let orig = set.get(pid).tensor.data()[e];

            set.get_mut(pid).tensor.data_mut()[e] = orig + FD_STEP;
            let plus = forward(set)?;
            set.get_mut(pid).tensor.data_mut()[e] = orig - FD_STEP;
            let minus = forward(set)?;
            set.get_mut(pid).tensor.data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_err(analytic, numeric);
            if err > worst {
                worst = err;
                worst_param = set.get(pid).name().into();
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: worst,
        worst_param,
        n_checked: checked,
    })
}

/// Dimensions of the standard full-model check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckDims {
    /// Feature channels `C`.
    pub channels: usize,
    /// Feature locations `W*H`; must be a perfect square.
    pub locations: usize,
    /// Projected semantic dimension `d`.
    pub embed_dim: usize,
}

impl Default for GradCheckDims {
    fn default() -> Self {
        Self {
            channels: 8,
            locations: 16,
            embed_dim: 6,
        }
    }
}

/// Raw word-embedding width used by the synthetic check input.
pub const CHECK_EMBED_INPUT_DIM: usize = 8;

/// Builds a fresh toy-encoder model and one random episode from `seed`,
/// computes analytic gradients of the episode loss with respect to every
/// parameter, and verifies them against central finite differences.
pub fn full_model_check(dims: GradCheckDims, seed: u64) -> Result<GradCheckReport, CoreError> {
    let side = int_sqrt(dims.locations).ok_or_else(|| {
        CoreError::Config(format!(
            "locations {} is not a perfect square",
            dims.locations
        ))
    })?;
    let image_side = side * 4;

    let cfg = ModelConfig {
        channels: dims.channels,
        embed_dim: dims.embed_dim,
        depth: 2,
        encoder: EncoderBackend::Toy,
        toy_in_channels: 3,
        toy_mid_channels: dims.channels,
        upsample: 4,
        seed,
        ..ModelConfig::default()
    };

    let mut init_rng = rng::stream(seed, streams::INIT);
    let mut set = ParamSet::new();
    let model = SegModel::init(cfg, CHECK_EMBED_INPUT_DIM, &mut set, &mut init_rng)?;

    let mut data_rng = rng::stream(seed, streams::GRADCHECK);
    let episode = random_episode(&mut data_rng, image_side)?;

    // Analytic gradients.
    set.zero_grads();
    let mut g = Graph::new();
    let loss = model.episode_loss(&mut g, &set, &episode)?;
    g.backward(loss, &mut set)?;

    max_rel_error(&mut set, |s| {
        let mut g = Graph::new();
        let loss = model.episode_loss(&mut g, s, &episode)?;
        g.scalar_value(loss)
    })
}

fn random_episode(rng: &mut impl Rng, image_side: usize) -> Result<EpisodeData, CoreError> {
    let image = |rng: &mut dyn rand::RngCore| EncoderInput::Image {
        channels: 3,
        width: image_side,
        height: image_side,
        data: (0..3 * image_side * image_side)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    };
    let support = image(rng);
    let query = image(rng);
    let embedding: Vec<f64> = (0..CHECK_EMBED_INPUT_DIM)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let bits: Vec<bool> = (0..image_side * image_side)
        .map(|_| rng.random_bool(0.3))
        .collect();
    Ok(EpisodeData {
        support: vec![support],
        query,
        embedding,
        gt_mask: Mask::new(image_side, image_side, bits)?,
        class_label: "check".into(),
    })
}

fn int_sqrt(n: usize) -> Option<usize> {
    let mut i = 0;
    while i * i < n {
        i += 1;
    }
    (i * i == n).then_some(i)
}
