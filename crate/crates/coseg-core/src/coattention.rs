//! Word-embedding-conditioned co-attention between support and query
//! feature maps.
//!
//! One block runs, on the augmented (visual + tiled semantic) features:
//!
//! * affinity `S = Vs~^T * W_co * Vq~` relating every support location to
//!   every query location,
//! * column / row softmax normalization (`S^c`, `S^r`),
//! * attention summaries `U_q = Vs~ * S^c` and `U_s = Vq~ * S^r`,
//! * a per-location sigmoid gate scaling each summary,
//! * concatenation with the original visual features and a learned 1x1
//!   reprojection back to the visual channel count, so blocks compose.
//!
//! Stacking feeds block k-1's outputs to block k with the same semantic
//! vector; blocks are untied by default (`tie_blocks` shares them).

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::CoreError;
use crate::graph::{Graph, NodeId};
use crate::rng::{identity_plus_noise, normal_tensor, zeros_tensor};
use crate::tensor::{ParamId, ParamSet};

/// Graph-resident feature map: `channels x (width*height)` with spatial
/// bookkeeping (column index is `y * width + x`).
#[derive(Debug, Clone, Copy)]
pub struct FeatureMapNode {
    pub id: NodeId,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl FeatureMapNode {
    pub fn locations(&self) -> usize {
        self.width * self.height
    }
}

/// Projected semantic conditioning vector `z` (a `dim x 1` node).
#[derive(Debug, Clone, Copy)]
pub struct SemanticVector {
    pub id: NodeId,
    pub dim: usize,
}

/// Feature map with the semantic vector tiled onto every location:
/// `(channels + dim) x (width*height)`; the trailing `dim` rows are
/// spatially constant.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedFeatureMap {
    pub id: NodeId,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl AugmentedFeatureMap {
    pub fn locations(&self) -> usize {
        self.width * self.height
    }
}

/// Raw and normalized affinities between support and query locations.
/// `raw[i][j]` pairs support location `i` with query location `j`;
/// `normalized_c` is column-stochastic over support locations,
/// `normalized_r` column-stochastic over query locations.
#[derive(Debug, Clone, Copy)]
pub struct AffinityMatrix {
    pub raw: NodeId,
    pub normalized_c: NodeId,
    pub normalized_r: NodeId,
    pub support_locations: usize,
    pub query_locations: usize,
}

/// Direction of affinity normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeDirection {
    /// Each query location's relevance over all support locations.
    Column,
    /// Each support location's relevance over all query locations.
    Row,
}

/// Attention summary `U`: one augmented-channel column per location of the
/// opposite map.
#[derive(Debug, Clone, Copy)]
pub struct AttentionSummary {
    pub id: NodeId,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

/// Gate output alongside the gated summary, for inspection.
#[derive(Debug, Clone, Copy)]
pub struct GatedSummary {
    pub output: AttentionSummary,
    /// `1 x locations` node of sigmoid gate values.
    pub gate: NodeId,
}

/// Parameter handles for one co-attention block.
#[derive(Debug, Clone)]
pub struct BlockParams {
    /// `(C+d) x (C+d)` channel-correlation matrix of the affinity.
    pub w_co: ParamId,
    /// `(C+d) x 1` gate weight vector.
    pub w_g: ParamId,
    /// `1 x 1` gate bias.
    pub b_g: ParamId,
    /// `C x (2C+d)` reprojection of `[gated summary; visual]` back to `C`.
    pub reproj_w: ParamId,
    /// `C x 1` reprojection bias.
    pub reproj_b: ParamId,
}

/// Parameter handles for the embedding projection layer.
#[derive(Debug, Clone)]
pub struct ProjectionParams {
    /// `E x d` projection of the raw word embedding.
    pub w: ParamId,
    /// `d x 1` projection bias.
    pub b: ParamId,
}

/// Full co-attention stack configuration.
#[derive(Debug, Clone)]
pub struct CoAttentionConfig {
    /// Visual channel count `C`.
    pub channels: usize,
    /// Semantic dimension `d` after projection.
    pub embed_dim: usize,
    /// Raw word-embedding dimension `E`; 0 disables the projection layer
    /// (the baseline model, which ties `z` to zero).
    pub embed_input_dim: usize,
    /// Number of stacked blocks.
    pub depth: usize,
    /// Share one block's parameters across the stack.
    pub tie_blocks: bool,
}

/// All learned parameters of a co-attention stack.
///
/// `blocks` has one entry per stacked block (a single shared entry when
/// tied); `projection` is absent for the baseline.
#[derive(Debug, Clone)]
pub struct CoAttentionParams {
    pub cfg: CoAttentionConfig,
    pub projection: Option<ProjectionParams>,
    pub blocks: Vec<BlockParams>,
}

impl CoAttentionParams {
    /// Registers all parameters for `cfg` into `set` with fresh random
    /// values drawn from `rng`.
    pub fn init(
        set: &mut ParamSet,
        cfg: CoAttentionConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, CoreError> {
        if cfg.depth == 0 {
            return Err(CoreError::Contract(
                "co-attention depth must be >= 1".into(),
            ));
        }
        if cfg.channels == 0 || cfg.embed_dim == 0 {
            return Err(CoreError::Config(format!(
                "co-attention needs positive channels and embed_dim, got C={} d={}",
                cfg.channels, cfg.embed_dim
            )));
        }
        let aug = cfg.channels + cfg.embed_dim;
        let projection = if cfg.embed_input_dim > 0 {
            let w = set.register(
                "proj.w",
                normal_tensor(
                    rng,
                    cfg.embed_input_dim,
                    cfg.embed_dim,
                    1.0 / libm::sqrt(cfg.embed_input_dim as f64),
                ),
            )?;
            let b = set.register("proj.b", zeros_tensor(cfg.embed_dim, 1))?;
            Some(ProjectionParams { w, b })
        } else {
            None
        };

        let n_distinct = if cfg.tie_blocks { 1 } else { cfg.depth };
        let mut blocks = Vec::with_capacity(n_distinct);
        for b in 0..n_distinct {
            let prefix = format!("block{b}");
            let reproj_in = 2 * cfg.channels + cfg.embed_dim;
            blocks.push(BlockParams {
                w_co: set.register(
                    &format!("{prefix}.w_co"),
                    identity_plus_noise(rng, aug, 0.1),
                )?,
                w_g: set.register(
                    &format!("{prefix}.w_g"),
                    normal_tensor(rng, aug, 1, 1.0 / libm::sqrt(aug as f64)),
                )?,
                b_g: set.register(&format!("{prefix}.b_g"), zeros_tensor(1, 1))?,
                reproj_w: set.register(
                    &format!("{prefix}.reproj.w"),
                    normal_tensor(
                        rng,
                        cfg.channels,
                        reproj_in,
                        libm::sqrt(2.0 / (reproj_in + cfg.channels) as f64),
                    ),
                )?,
                reproj_b: set
                    .register(&format!("{prefix}.reproj.b"), zeros_tensor(cfg.channels, 1))?,
            });
        }
        Ok(Self {
            cfg,
            projection,
            blocks,
        })
    }

    /// Block parameters for stacked block `k` (shared when tied).
    pub fn block(&self, k: usize) -> &BlockParams {
        if self.cfg.tie_blocks {
            &self.blocks[0]
        } else {
            &self.blocks[k]
        }
    }
}

/// Projects a raw word embedding to the semantic vector
/// `z = proj.w^T * e + proj.b`.
pub fn project_embedding(
    g: &mut Graph,
    set: &ParamSet,
    params: &CoAttentionParams,
    embedding: &[f64],
) -> Result<SemanticVector, CoreError> {
    let proj = params.projection.as_ref().ok_or_else(|| {
        CoreError::Config("projection layer absent (baseline model has no embeddings)".into())
    })?;
    let e_dim = set.get(proj.w).tensor.rows();
    if embedding.len() != e_dim {
        return Err(CoreError::Config(format!(
            "embedding dimension {} does not match the loaded projection ({})",
            embedding.len(),
            e_dim
        )));
    }
    let e = crate::tensor::Tensor::column(embedding.to_vec());
    let en = g.constant(&e);
    let wn = g.param(set, proj.w);
    let bn = g.param(set, proj.b);
    let wt = g.transpose(wn);
    let we = g.matmul(wt, en)?;
    let z = g.add(we, bn)?;
    Ok(SemanticVector {
        id: z,
        dim: params.cfg.embed_dim,
    })
}

/// Semantic vector fixed at zero (the baseline's `z`).
pub fn zero_semantic_vector(g: &mut Graph, dim: usize) -> SemanticVector {
    let z = g.constant(&zeros_tensor(dim, 1));
    SemanticVector { id: z, dim }
}

/// Tiles `z` across every spatial location and stacks it under the visual
/// features: output is `(C+d) x (W*H)` with rows `C..` spatially constant.
pub fn tile_concat(
    g: &mut Graph,
    v: FeatureMapNode,
    z: &SemanticVector,
) -> Result<AugmentedFeatureMap, CoreError> {
    let tiled = g.tile_cols(z.id, v.locations())?;
    let cat = g.concat_rows(v.id, tiled)?;
    Ok(AugmentedFeatureMap {
        id: cat,
        channels: v.channels + z.dim,
        width: v.width,
        height: v.height,
    })
}

/// Raw affinity `S = Vs~^T * W_co * Vq~` of shape
/// `support_locations x query_locations`.
pub fn affinity(
    g: &mut Graph,
    w_co: NodeId,
    support: &AugmentedFeatureMap,
    query: &AugmentedFeatureMap,
) -> Result<NodeId, CoreError> {
    if support.channels != query.channels {
        return Err(CoreError::Dimension(format!(
            "affinity: augmented channel counts differ: support {} vs query {}",
            support.channels, query.channels
        )));
    }
    let st = g.transpose(support.id);
    let sw = g.matmul(st, w_co)?;
    g.matmul(sw, query.id)
}

/// Softmax-normalizes a raw affinity. `Column` returns `S^c`
/// (each column sums to 1 over support locations); `Row` returns
/// `S^r = softmax_columns(S^T)` (each column sums to 1 over query
/// locations).
pub fn normalize_affinity(
    g: &mut Graph,
    raw: NodeId,
    direction: NormalizeDirection,
) -> Result<NodeId, CoreError> {
    match direction {
        NormalizeDirection::Column => g.softmax_columns(raw),
        NormalizeDirection::Row => {
            let t = g.transpose(raw);
            g.softmax_columns(t)
        }
    }
}

/// Computes both normalizations of the raw affinity.
pub fn affinity_matrix(
    g: &mut Graph,
    w_co: NodeId,
    support: &AugmentedFeatureMap,
    query: &AugmentedFeatureMap,
) -> Result<AffinityMatrix, CoreError> {
    let raw = affinity(g, w_co, support, query)?;
    let normalized_c = normalize_affinity(g, raw, NormalizeDirection::Column)?;
    let normalized_r = normalize_affinity(g, raw, NormalizeDirection::Row)?;
    Ok(AffinityMatrix {
        raw,
        normalized_c,
        normalized_r,
        support_locations: support.locations(),
        query_locations: query.locations(),
    })
}

/// Attention summary `U = features * stochastic`: every output column is a
/// convex combination of the feature columns. The `spatial` pair names the
/// grid of the opposite map the summary is laid out on.
pub fn attention_summary(
    g: &mut Graph,
    features: &AugmentedFeatureMap,
    stochastic: NodeId,
    spatial: (usize, usize),
) -> Result<AttentionSummary, CoreError> {
    let id = g.matmul(features.id, stochastic)?;
    Ok(AttentionSummary {
        id,
        channels: features.channels,
        width: spatial.0,
        height: spatial.1,
    })
}

/// Gates a summary: `gate = sigmoid(w_g^T * U + b_g)` (one scalar per
/// location) and `output = U (hadamard) gate` broadcast down the channels.
pub fn gate(
    g: &mut Graph,
    set: &ParamSet,
    block: &BlockParams,
    u: &AttentionSummary,
) -> Result<GatedSummary, CoreError> {
    let wg = g.param(set, block.w_g);
    let bg = g.param(set, block.b_g);
    let wgt = g.transpose(wg);
    let lin = g.matmul(wgt, u.id)?;
    let biased = g.add_col_broadcast(lin, bg)?;
    let gate = g.sigmoid(biased);
    let output = g.hadamard(u.id, gate)?;
    Ok(GatedSummary {
        output: AttentionSummary { id: output, ..*u },
        gate,
    })
}

/// Intermediate values of one block, exposed for invariant checks.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    pub affinity: AffinityMatrix,
    pub gate_q: NodeId,
    pub gate_s: NodeId,
    pub summary_q: AttentionSummary,
    pub summary_s: AttentionSummary,
}

/// One co-attention block. Returns the reprojected query and support
/// feature maps (same spatial sizes as the inputs, `C` channels) plus the
/// intermediate trace.
pub fn coattention_block(
    g: &mut Graph,
    set: &ParamSet,
    block: &BlockParams,
    support: FeatureMapNode,
    query: FeatureMapNode,
    z: &SemanticVector,
) -> Result<(FeatureMapNode, FeatureMapNode, BlockTrace), CoreError> {
    if support.channels != query.channels {
        return Err(CoreError::Dimension(format!(
            "coattention_block: channel counts differ: support {} vs query {}",
            support.channels, query.channels
        )));
    }
    let vs = tile_concat(g, support, z)?;
    let vq = tile_concat(g, query, z)?;

    let w_co = g.param(set, block.w_co);
    let aff = affinity_matrix(g, w_co, &vs, &vq)?;

    let u_q = attention_summary(g, &vs, aff.normalized_c, (query.width, query.height))?;
    let u_s = attention_summary(g, &vq, aff.normalized_r, (support.width, support.height))?;

    let gated_q = gate(g, set, block, &u_q)?;
    let gated_s = gate(g, set, block, &u_s)?;

    let f_q = reproject(g, set, block, &gated_q.output, query)?;
    let f_s = reproject(g, set, block, &gated_s.output, support)?;

    let trace = BlockTrace {
        affinity: aff,
        gate_q: gated_q.gate,
        gate_s: gated_s.gate,
        summary_q: u_q,
        summary_s: u_s,
    };
    Ok((f_q, f_s, trace))
}

/// Learned 1x1 channel mixing of `[gated summary; visual]` back down to
/// the visual channel count.
fn reproject(
    g: &mut Graph,
    set: &ParamSet,
    block: &BlockParams,
    summary: &AttentionSummary,
    visual: FeatureMapNode,
) -> Result<FeatureMapNode, CoreError> {
    let cat = g.concat_rows(summary.id, visual.id)?;
    let w = g.param(set, block.reproj_w);
    let b = g.param(set, block.reproj_b);
    let mixed = g.matmul(w, cat)?;
    let biased = g.add_col_broadcast(mixed, b)?;
    Ok(FeatureMapNode {
        id: biased,
        channels: visual.channels,
        width: visual.width,
        height: visual.height,
    })
}

/// Runs `depth` stacked blocks: block 1 consumes `(support, query, z)`,
/// block k consumes block k-1's outputs with the same `z`. Returns the
/// final `(F_q, F_s)` and the per-block traces.
pub fn stacked_coattention(
    g: &mut Graph,
    set: &ParamSet,
    params: &CoAttentionParams,
    support: FeatureMapNode,
    query: FeatureMapNode,
    z: &SemanticVector,
) -> Result<(FeatureMapNode, FeatureMapNode, Vec<BlockTrace>), CoreError> {
    let depth = params.cfg.depth;
    if depth == 0 {
        return Err(CoreError::Contract(
            "stacked_coattention: depth must be >= 1".into(),
        ));
    }
    let mut cur_support = support;
    let mut cur_query = query;
    let mut traces = Vec::with_capacity(depth);
    for k in 0..depth {
        let (f_q, f_s, trace) =
            coattention_block(g, set, params.block(k), cur_support, cur_query, z)?;
        traces.push(trace);
        cur_support = f_s;
        cur_query = f_q;
    }
    Ok((cur_query, cur_support, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn feat(g: &mut Graph, c: usize, w: usize, h: usize, data: &[f64]) -> FeatureMapNode {
        let t = Tensor::matrix(c, w * h, data.to_vec()).unwrap();
        let id = g.leaf(&t);
        FeatureMapNode {
            id,
            channels: c,
            width: w,
            height: h,
        }
    }

    fn aug(f: FeatureMapNode) -> AugmentedFeatureMap {
        AugmentedFeatureMap {
            id: f.id,
            channels: f.channels,
            width: f.width,
            height: f.height,
        }
    }

    fn eye(g: &mut Graph, n: usize) -> NodeId {
        g.constant(&identity_matrix(n))
    }

    fn identity_matrix(n: usize) -> Tensor {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn tile_concat_places_constant_rows() {
        let mut g = Graph::new();
        let v = feat(&mut g, 2, 3, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let zn = g.constant(&Tensor::column(vec![7.0]));
        let z = SemanticVector { id: zn, dim: 1 };
        let out = tile_concat(&mut g, v, &z).unwrap();
        assert_eq!(out.channels, 3);
        assert_eq!(&g.data(out.id)[6..], &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn tile_concat_zero_vector_gives_zero_rows() {
        let mut g = Graph::new();
        let v = feat(&mut g, 1, 2, 1, &[1.0, 2.0]);
        let z = zero_semantic_vector(&mut g, 2);
        let out = tile_concat(&mut g, v, &z).unwrap();
        assert_eq!(&g.data(out.id)[2..], &[0.0; 4]);
    }

    #[test]
    fn affinity_identity_columns() {
        let mut g = Graph::new();
        let vs = feat(&mut g, 2, 2, 1, &[1.0, 0.0, 0.0, 1.0]);
        let w = eye(&mut g, 2);
        let s = affinity(&mut g, w, &aug(vs), &aug(vs)).unwrap();
        assert_eq!(g.data(s), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn affinity_zero_query_gives_zero() {
        let mut g = Graph::new();
        let vs = feat(&mut g, 2, 2, 1, &[1.0, 0.5, -0.5, 1.0]);
        let vq = feat(&mut g, 2, 2, 1, &[0.0; 4]);
        let w = eye(&mut g, 2);
        let s = affinity(&mut g, w, &aug(vs), &aug(vq)).unwrap();
        assert_eq!(g.data(s), &[0.0; 4]);
    }

    #[test]
    fn affinity_matches_triple_loop_oracle() {
        // Vs~=[[1,0],[0,2]], Vq~=[[1,1],[1,0]], W_co=I => S=[[1,1],[2,0]].
        let mut g = Graph::new();
        let vs = feat(&mut g, 2, 2, 1, &[1.0, 0.0, 0.0, 2.0]);
        let vq = feat(&mut g, 2, 2, 1, &[1.0, 1.0, 1.0, 0.0]);
        let w = eye(&mut g, 2);
        let s = affinity(&mut g, w, &aug(vs), &aug(vq)).unwrap();
        assert_eq!(g.data(s), &[1.0, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn affinity_channel_mismatch_rejected() {
        let mut g = Graph::new();
        let a = feat(&mut g, 2, 1, 1, &[1.0, 2.0]);
        let b = feat(&mut g, 3, 1, 1, &[1.0, 2.0, 3.0]);
        let w = eye(&mut g, 2);
        assert!(matches!(
            affinity(&mut g, w, &aug(a), &aug(b)),
            Err(CoreError::Dimension(_))
        ));
    }

    #[test]
    fn normalize_zero_affinity_is_uniform() {
        let mut g = Graph::new();
        let s = g.leaf(&Tensor::zeros(vec![2, 2]));
        let sc = normalize_affinity(&mut g, s, NormalizeDirection::Column).unwrap();
        assert_eq!(g.data(sc), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn row_normalization_is_column_normalization_of_transpose() {
        let mut g = Graph::new();
        let t = Tensor::matrix(2, 3, vec![1.0, -0.5, 2.0, 0.3, 0.9, -1.2]).unwrap();
        let s = g.leaf(&t);
        let sr = normalize_affinity(&mut g, s, NormalizeDirection::Row).unwrap();
        let st = g.transpose(s);
        let sct = g.softmax_columns(st).unwrap();
        assert_eq!(g.data(sr), g.data(sct));
    }

    #[test]
    fn summary_one_hot_selects_support_column() {
        let mut g = Graph::new();
        let vs = feat(&mut g, 2, 2, 1, &[1.0, 3.0, 2.0, 4.0]);
        let sc = g.constant(&Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap());
        let u = attention_summary(&mut g, &aug(vs), sc, (1, 1)).unwrap();
        assert_eq!(g.data(u.id), &[3.0, 4.0]);
    }

    #[test]
    fn summary_uniform_averages_support() {
        let mut g = Graph::new();
        let vs = feat(&mut g, 1, 2, 1, &[2.0, 6.0]);
        let sc = g.constant(&Tensor::matrix(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap());
        let u = attention_summary(&mut g, &aug(vs), sc, (2, 1)).unwrap();
        assert_eq!(g.data(u.id), &[4.0, 4.0]);
    }

    #[test]
    fn summary_matches_triple_loop_oracle() {
        // Vs~=[[1,0],[0,2]], S^c=[[0.25,1],[0.75,0]] => U_q=[[0.25,1],[1.5,0]].
        let mut g = Graph::new();
        let vs = feat(&mut g, 2, 2, 1, &[1.0, 0.0, 0.0, 2.0]);
        let sc = g.constant(&Tensor::matrix(2, 2, vec![0.25, 1.0, 0.75, 0.0]).unwrap());
        let u = attention_summary(&mut g, &aug(vs), sc, (2, 1)).unwrap();
        assert_eq!(g.data(u.id), &[0.25, 1.0, 1.5, 0.0]);
    }

    fn block_with(
        set: &mut ParamSet,
        w_g: Vec<f64>,
        b_g: f64,
        aug: usize,
        c: usize,
    ) -> BlockParams {
        BlockParams {
            w_co: set.register("t.w_co", identity_matrix(aug)).unwrap(),
            w_g: set.register("t.w_g", Tensor::column(w_g)).unwrap(),
            b_g: set.register("t.b_g", Tensor::scalar(b_g)).unwrap(),
            reproj_w: set
                .register("t.rw", Tensor::zeros(vec![c, aug + c]))
                .unwrap(),
            reproj_b: set.register("t.rb", Tensor::zeros(vec![c, 1])).unwrap(),
        }
    }

    #[test]
    fn gate_zero_weights_halve_the_summary() {
        let mut set = ParamSet::new();
        let block = block_with(&mut set, vec![0.0, 0.0], 0.0, 2, 1);
        let mut g = Graph::new();
        let u = AttentionSummary {
            id: g.leaf(&Tensor::matrix(2, 2, vec![2.0, 4.0, 6.0, 8.0]).unwrap()),
            channels: 2,
            width: 2,
            height: 1,
        };
        let gated = gate(&mut g, &set, &block, &u).unwrap();
        assert_eq!(g.data(gated.gate), &[0.5, 0.5]);
        assert_eq!(g.data(gated.output.id), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn gate_saturates_to_identity() {
        let mut set = ParamSet::new();
        let block = block_with(&mut set, vec![0.0, 0.0], 100.0, 2, 1);
        let mut g = Graph::new();
        let u = AttentionSummary {
            id: g.leaf(&Tensor::matrix(2, 1, vec![3.0, -5.0]).unwrap()),
            channels: 2,
            width: 1,
            height: 1,
        };
        let gated = gate(&mut g, &set, &block, &u).unwrap();
        for (out, orig) in g.data(gated.output.id).iter().zip([3.0, -5.0]) {
            assert!((out - orig).abs() <= 1e-40 * orig.abs());
        }
    }

    #[test]
    fn gate_matches_direct_formula() {
        // C+d=2, WH=1, U=[[1],[1]], W_g=[1,1], b_g=0 => gate=sigmoid(2).
        let mut set = ParamSet::new();
        let block = block_with(&mut set, vec![1.0, 1.0], 0.0, 2, 1);
        let mut g = Graph::new();
        let u = AttentionSummary {
            id: g.leaf(&Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()),
            channels: 2,
            width: 1,
            height: 1,
        };
        let gated = gate(&mut g, &set, &block, &u).unwrap();
        assert!((g.data(gated.gate)[0] - 0.880797).abs() < 1e-6);
        for v in g.data(gated.output.id) {
            assert!((v - 0.880797).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_maps_default_dims() {
        // A 300-wide embedding table projects to the default 256-dim z.
        let mut set = ParamSet::new();
        let mut rng = crate::rng::stream(0, 1);
        let params = CoAttentionParams::init(
            &mut set,
            CoAttentionConfig {
                channels: 4,
                embed_dim: 256,
                embed_input_dim: 300,
                depth: 2,
                tie_blocks: false,
            },
            &mut rng,
        )
        .unwrap();
        let mut g = Graph::new();
        let e = alloc::vec![0.01; 300];
        let z = project_embedding(&mut g, &set, &params, &e).unwrap();
        assert_eq!(z.dim, 256);
        assert_eq!(g.dims(z.id), (256, 1));
    }

    #[test]
    fn depth_zero_is_a_contract_error() {
        let mut set = ParamSet::new();
        let mut rng = crate::rng::stream(0, 1);
        let err = CoAttentionParams::init(
            &mut set,
            CoAttentionConfig {
                channels: 2,
                embed_dim: 2,
                embed_input_dim: 3,
                depth: 0,
                tie_blocks: false,
            },
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Contract(_)));
    }

    #[test]
    fn projection_spec_examples() {
        let mut set = ParamSet::new();
        let mut rng = crate::rng::stream(0, 1);
        let params = CoAttentionParams::init(
            &mut set,
            CoAttentionConfig {
                channels: 2,
                embed_dim: 2,
                embed_input_dim: 2,
                depth: 1,
                tie_blocks: false,
            },
            &mut rng,
        )
        .unwrap();
        // W=[[1,0],[0,2]], b=[1,1], e=[3,4] => z = W^T e + b = [4,9].
        let proj = params.projection.as_ref().unwrap();
        set.get_mut(proj.w)
            .tensor
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 2.0]);
        set.get_mut(proj.b)
            .tensor
            .data_mut()
            .copy_from_slice(&[1.0, 1.0]);
        let mut g = Graph::new();
        let z = project_embedding(&mut g, &set, &params, &[3.0, 4.0]).unwrap();
        assert_eq!(g.data(z.id), &[4.0, 9.0]);

        // Zero weights and bias give the zero vector.
        set.get_mut(proj.w).tensor.data_mut().fill(0.0);
        set.get_mut(proj.b).tensor.data_mut().fill(0.0);
        let mut g = Graph::new();
        let z = project_embedding(&mut g, &set, &params, &[3.0, 4.0]).unwrap();
        assert!(g.data(z.id).iter().all(|&v| v == 0.0));

        // Wrong embedding dimension is a configuration error.
        let mut g = Graph::new();
        let err = project_embedding(&mut g, &set, &params, &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }
}
