//! Numeric and protocol core for few-shot segmentation with
//! word-embedding-guided co-attention.
//!
//! The crate is `no_std` (with `alloc`) and has no IO: file formats, dataset
//! loading and the command-line interface live in the companion `coseg`
//! crate. What lives here:
//!
//! * [`tensor`] / [`graph`]: a dense `f64` tensor and a small reverse-mode
//!   differentiation graph covering exactly the operations the model needs.
//! * [`coattention`]: affinity, directional softmax normalization,
//!   attention summaries, gating and stacked blocks, conditioned on a
//!   projected word embedding.
//! * [`model`]: encoder / co-attention / decoder pipeline over one episode,
//!   pixelwise BCE loss, and [`train`] for seeded gradient-descent training.
//! * [`episodes`]: fold construction and episodic sampling for the static
//!   and video benchmarks, plus the synthetic benchmark generator plan.
//! * [`metrics`]: per-class IoU, mean-IoU (background excluded),
//!   class-agnostic binary-IoU, and multi-run aggregation.
//! * [`gradcheck`]: central finite differences over every registered
//!   parameter, the standing check that the hand-derived backward passes
//!   are right.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod coattention;
pub mod episodes;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::CoreError;
pub use graph::{Graph, NodeId};
pub use tensor::{Mask, ParamId, ParamSet, Parameter, Tensor};
