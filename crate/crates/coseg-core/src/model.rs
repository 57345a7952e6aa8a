//! End-to-end episodic segmentation model: encoder, stacked co-attention,
//! decoder head, pixelwise loss.
//!
//! The encoder is pluggable: the `file` backend passes through
//! pre-extracted feature maps, the `toy` backend is a small learned
//! two-stage strided network that reduces spatial size 4x. The decoder is
//! a learned 1x1 channel mixing to one logit per location, bilinear
//! upsampling (align-corners=false) to the target grid, and a sigmoid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::coattention::{
    self, CoAttentionConfig, CoAttentionParams, FeatureMapNode, SemanticVector,
};
use crate::error::CoreError;
use crate::graph::{Graph, NodeId};
use crate::rng::normal_tensor;
use crate::tensor::{Mask, ParamId, ParamSet, Tensor};

/// Which encoder produces feature maps from episode inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderBackend {
    /// Inputs are pre-extracted `C x W x H` feature maps (loaded from
    /// feature files); the encoder is the identity.
    File,
    /// Inputs are raw image grids; a learned bias-free two-stage network
    /// (2x2 space-to-channel + 1x1 mixing + tanh, twice) reduces the
    /// spatial size by 4 in each dimension.
    Toy,
}

/// Model hyperparameters. `embed_dim` is the projected semantic dimension
/// `d`; the raw embedding width is read from the embedding table, not
/// configured here.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub encoder: EncoderBackend,
    /// Image channels consumed by the toy encoder.
    pub toy_in_channels: usize,
    /// Channel count between the two toy encoder stages.
    pub toy_mid_channels: usize,
    /// Decoder upsampling factor from feature grid to prediction grid.
    pub upsample: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub seed: u64,
    /// When false the model is the no-embedding baseline: `z` is fixed at
    /// zero and no projection parameters exist.
    pub use_word_embeddings: bool,
    pub tie_blocks: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 12,
            embed_dim: 256,
            depth: 2,
            encoder: EncoderBackend::File,
            toy_in_channels: 3,
            toy_mid_channels: 8,
            upsample: 4,
            learning_rate: 0.1,
            momentum: 0.9,
            iterations: 500,
            seed: 0,
            use_word_embeddings: true,
            tie_blocks: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.channels == 0 || self.embed_dim == 0 || self.depth == 0 || self.upsample == 0 {
            return Err(CoreError::Config(format!(
                "all extents must be positive: channels={} embed_dim={} depth={} upsample={}",
                self.channels, self.embed_dim, self.depth, self.upsample
            )));
        }
        Ok(())
    }
}

/// In-memory feature map value: `channels x (width*height)` row-major,
/// column index `y * width + x`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub values: Tensor,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
    ) -> Result<Self, CoreError> {
        let values = Tensor::matrix(channels, width * height, data)?;
        Ok(Self {
            channels,
            width,
            height,
            values,
        })
    }
}

/// One episode input: either a pre-extracted feature map or a raw image.
#[derive(Debug, Clone)]
pub enum EncoderInput {
    Features(FeatureMap),
    /// `channels x height x width` image grid, row-major per channel.
    Image {
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
    },
}

/// Fully materialized episode, ready for a forward pass.
#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub support: Vec<EncoderInput>,
    pub query: EncoderInput,
    /// Raw word embedding of the class label. Ignored by the baseline.
    pub embedding: Vec<f64>,
    pub gt_mask: Mask,
    pub class_label: String,
}

/// Pixelwise foreground probabilities with the thresholded mask view.
#[derive(Debug, Clone)]
pub struct SegPrediction {
    pub width: usize,
    pub height: usize,
    probabilities: Vec<f64>,
}

impl SegPrediction {
    pub fn new(width: usize, height: usize, probabilities: Vec<f64>) -> Result<Self, CoreError> {
        if probabilities.len() != width * height {
            return Err(CoreError::Dimension(format!(
                "prediction {width}x{height} needs {} values, got {}",
                width * height,
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(CoreError::Data(
                "prediction probability outside [0,1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            probabilities,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Boolean mask at the 0.5 threshold (`p >= 0.5` is foreground).
    pub fn binarized(&self) -> Mask {
        let bits: Vec<bool> = self.probabilities.iter().map(|&p| p >= 0.5).collect();
        Mask::new(self.width, self.height, bits).expect("consistent dims")
    }
}

/// Toy encoder parameters (bias-free channel mixings).
#[derive(Debug, Clone)]
struct ToyEncoderParams {
    stage1_w: ParamId,
    stage2_w: ParamId,
}

/// Decoder head parameters.
#[derive(Debug, Clone)]
struct HeadParams {
    w: ParamId,
    b: ParamId,
}

/// The segmentation model: structure plus parameter handles. Parameter
/// values live in the companion [`ParamSet`].
#[derive(Debug, Clone)]
pub struct SegModel {
    pub cfg: ModelConfig,
    /// Raw word-embedding width `E` the projection was built for
    /// (0 for the baseline).
    pub embed_input_dim: usize,
    pub coatt: CoAttentionParams,
    toy: Option<ToyEncoderParams>,
    head: HeadParams,
}

impl SegModel {
    /// Registers all model parameters into `set` with seeded random
    /// initial values.
    pub fn init(
        cfg: ModelConfig,
        embed_input_dim: usize,
        set: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self, CoreError> {
        cfg.validate()?;
        if cfg.use_word_embeddings && embed_input_dim == 0 {
            return Err(CoreError::Config(
                "word-embedding model needs a positive embedding dimension".into(),
            ));
        }
        let coatt = CoAttentionParams::init(
            set,
            CoAttentionConfig {
                channels: cfg.channels,
                embed_dim: cfg.embed_dim,
                embed_input_dim: if cfg.use_word_embeddings {
                    embed_input_dim
                } else {
                    0
                },
                depth: cfg.depth,
                tie_blocks: cfg.tie_blocks,
            },
            rng,
        )?;
        let toy = match cfg.encoder {
            EncoderBackend::File => None,
            EncoderBackend::Toy => {
                let in1 = 4 * cfg.toy_in_channels;
                let in2 = 4 * cfg.toy_mid_channels;
                Some(ToyEncoderParams {
                    stage1_w: set.register(
                        "enc.stage1.w",
                        normal_tensor(rng, cfg.toy_mid_channels, in1, libm::sqrt(2.0 / in1 as f64)),
                    )?,
                    stage2_w: set.register(
                        "enc.stage2.w",
                        normal_tensor(rng, cfg.channels, in2, libm::sqrt(2.0 / in2 as f64)),
                    )?,
                })
            }
        };
        let head = HeadParams {
            w: set.register(
                "head.w",
                normal_tensor(rng, 1, cfg.channels, libm::sqrt(2.0 / cfg.channels as f64)),
            )?,
            b: set.register("head.b", Tensor::zeros(alloc::vec![1, 1]))?,
        };
        Ok(Self {
            cfg,
            embed_input_dim: if cfg_uses_embeddings(&coatt) {
                embed_input_dim
            } else {
                0
            },
            coatt,
            toy,
            head,
        })
    }

    /// Encodes one input into a graph-resident feature map.
    pub fn encode(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        input: &EncoderInput,
    ) -> Result<FeatureMapNode, CoreError> {
        match (self.cfg.encoder, input) {
            (EncoderBackend::File, EncoderInput::Features(f)) => {
                if f.channels != self.cfg.channels {
                    return Err(CoreError::Config(format!(
                        "feature file has {} channels, model expects {}",
                        f.channels, self.cfg.channels
                    )));
                }
                let id = g.constant(&f.values);
                Ok(FeatureMapNode {
                    id,
                    channels: f.channels,
                    width: f.width,
                    height: f.height,
                })
            }
            (
                EncoderBackend::Toy,
                EncoderInput::Image {
                    channels,
                    width,
                    height,
                    data,
                },
            ) => {
                let toy = self.toy.as_ref().expect("toy params exist for toy backend");
                if *channels != self.cfg.toy_in_channels {
                    return Err(CoreError::Config(format!(
                        "image has {} channels, toy encoder expects {}",
                        channels, self.cfg.toy_in_channels
                    )));
                }
                if width % 4 != 0 || height % 4 != 0 {
                    return Err(CoreError::Config(format!(
                        "toy encoder needs image sides divisible by 4, got {width}x{height}"
                    )));
                }
                let img = Tensor::matrix(*channels, width * height, data.clone())?;
                let x0 = g.constant(&img);
                // Stage 1: 2x2 space-to-channel, 1x1 mix, tanh.
                let s1 = g.space_to_channel(x0, *width, *height)?;
                let w1 = g.param(set, toy.stage1_w);
                let m1 = g.matmul(w1, s1)?;
                let a1 = g.tanh(m1);
                // Stage 2 on the halved grid.
                let (w2d, h2d) = (width / 2, height / 2);
                let s2 = g.space_to_channel(a1, w2d, h2d)?;
                let w2 = g.param(set, toy.stage2_w);
                let m2 = g.matmul(w2, s2)?;
                let a2 = g.tanh(m2);
                Ok(FeatureMapNode {
                    id: a2,
                    channels: self.cfg.channels,
                    width: width / 4,
                    height: height / 4,
                })
            }
            (EncoderBackend::File, EncoderInput::Image { .. }) => Err(CoreError::Config(
                "file backend expects pre-extracted features, got a raw image".into(),
            )),
            (EncoderBackend::Toy, EncoderInput::Features(_)) => Err(CoreError::Config(
                "toy backend expects raw images, got pre-extracted features".into(),
            )),
        }
    }

    /// Decoder: 1x1 head to one logit per location, bilinear upsample to
    /// `target`, sigmoid. The feature grid times the upsample factor must
    /// equal the target grid.
    pub fn decode(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        features: FeatureMapNode,
        target: (usize, usize),
    ) -> Result<NodeId, CoreError> {
        let (tw, th) = target;
        if features.width * self.cfg.upsample != tw || features.height * self.cfg.upsample != th {
            return Err(CoreError::Config(format!(
                "feature grid {}x{} with upsample {} does not reach target {}x{}",
                features.width, features.height, self.cfg.upsample, tw, th
            )));
        }
        let w = g.param(set, self.head.w);
        let b = g.param(set, self.head.b);
        let logits = g.matmul(w, features.id)?;
        let biased = g.add_col_broadcast(logits, b)?;
        let up = g.upsample_bilinear(biased, features.width, features.height, self.cfg.upsample)?;
        Ok(g.sigmoid(up))
    }

    /// Whole-episode forward pass: encode supports (averaged for k-shot),
    /// encode the query, project the class embedding (or use zero for the
    /// baseline), run stacked co-attention, decode the query branch.
    /// Returns the probability node laid out on the ground-truth grid.
    pub fn forward_episode(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        ep: &EpisodeData,
    ) -> Result<NodeId, CoreError> {
        if ep.support.is_empty() {
            return Err(CoreError::Contract("episode has no support items".into()));
        }
        let z = self.semantic_vector(g, set, &ep.embedding)?;

        let mut encoded = Vec::with_capacity(ep.support.len());
        for item in &ep.support {
            encoded.push(self.encode(g, set, item)?);
        }
        let support = average_feature_maps(g, &encoded)?;
        let query = self.encode(g, set, &ep.query)?;

        let (f_q, _f_s, _traces) =
            coattention::stacked_coattention(g, set, &self.coatt, support, query, &z)?;
        self.decode(g, set, f_q, (ep.gt_mask.width, ep.gt_mask.height))
    }

    /// Episode forward plus mean BCE against the ground-truth mask.
    pub fn episode_loss(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        ep: &EpisodeData,
    ) -> Result<NodeId, CoreError> {
        let probs = self.forward_episode(g, set, ep)?;
        let target: Vec<f64> = ep
            .gt_mask
            .pixels()
            .iter()
            .map(|&b| f64::from(u8::from(b)))
            .collect();
        g.bce_mean(probs, &target, BCE_CLAMP)
    }

    /// Inference: runs one episode and extracts the prediction.
    pub fn predict(&self, set: &ParamSet, ep: &EpisodeData) -> Result<SegPrediction, CoreError> {
        let mut g = Graph::new();
        let probs = self.forward_episode(&mut g, set, ep)?;
        SegPrediction::new(ep.gt_mask.width, ep.gt_mask.height, g.data(probs).to_vec())
    }

    fn semantic_vector(
        &self,
        g: &mut Graph,
        set: &ParamSet,
        embedding: &[f64],
    ) -> Result<SemanticVector, CoreError> {
        if self.cfg.use_word_embeddings {
            coattention::project_embedding(g, set, &self.coatt, embedding)
        } else {
            Ok(coattention::zero_semantic_vector(g, self.cfg.embed_dim))
        }
    }
}

fn cfg_uses_embeddings(coatt: &CoAttentionParams) -> bool {
    coatt.projection.is_some()
}

/// Probability clamp used by the BCE loss, keeping it finite everywhere.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean of k feature maps (identity for k = 1); shapes must agree.
fn average_feature_maps(
    g: &mut Graph,
    maps: &[FeatureMapNode],
) -> Result<FeatureMapNode, CoreError> {
    let first = maps[0];
    if maps.len() == 1 {
        return Ok(first);
    }
    let mut acc = first.id;
    for m in &maps[1..] {
        if (m.channels, m.width, m.height) != (first.channels, first.width, first.height) {
            return Err(CoreError::Dimension(format!(
                "support feature maps disagree: {}x{}x{} vs {}x{}x{}",
                first.channels, first.width, first.height, m.channels, m.width, m.height
            )));
        }
        acc = g.add(acc, m.id)?;
    }
    let mean = g.scale(acc, 1.0 / maps.len() as f64);
    Ok(FeatureMapNode { id: mean, ..first })
}
