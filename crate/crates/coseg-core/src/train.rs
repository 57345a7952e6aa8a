//! Episodic gradient-descent training (fixed iteration budget, optional
//! momentum). One episode per step; all randomness comes from the episode
//! stream, so a run is fully reproducible from its seed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::graph::Graph;
use crate::model::{EpisodeData, SegModel};
use crate::tensor::ParamSet;

/// Deterministic source of training episodes.
pub trait EpisodeStream {
    fn next_episode(&mut self) -> Result<EpisodeData, CoreError>;
}

/// Per-iteration losses of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub loss_trace: Vec<f64>,
}

/// Runs exactly `model.cfg.iterations` descent steps. Parameters update in
/// place; gradients are reset at every step. A non-finite loss aborts with
/// a diagnostic naming the iteration.
pub fn train(
    model: &SegModel,
    set: &mut ParamSet,
    stream: &mut dyn EpisodeStream,
) -> Result<TrainOutcome, CoreError> {
    let lr = model.cfg.learning_rate;
    let momentum = model.cfg.momentum;
    let mut velocity: Vec<Vec<f64>> = set.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
    let mut loss_trace = Vec::with_capacity(model.cfg.iterations);

    for iteration in 0..model.cfg.iterations {
        let ep = stream.next_episode()?;
        set.zero_grads();

        let mut g = Graph::new();
        let loss = model.episode_loss(&mut g, set, &ep)?;
        let value = g.scalar_value(loss)?;
        if !value.is_finite() {
            return Err(CoreError::Contract(format!(
                "training diverged: loss is not finite at iteration {iteration}"
            )));
        }
        g.backward(loss, set)?;

        for (idx, vel) in velocity.iter_mut().enumerate() {
            let param = set.get_mut(crate::tensor::ParamId(idx));
            let Some(grad) = param.tensor.grad() else {
                continue;
            };
            let grad: Vec<f64> = grad.to_vec();
            let data = param.tensor.data_mut();
            for e in 0..data.len() {
                vel[e] = momentum * vel[e] + grad[e];
                data[e] -= lr * vel[e];
            }
        }
        loss_trace.push(value);
    }
    Ok(TrainOutcome { loss_trace })
}
