//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is a build-once tape: every operation appends a node holding
//! its forward value, so node indices are already a topological order and
//! [`Graph::backward`] is a single reverse sweep with hand-derived
//! vector-Jacobian products. The op set is exactly what the co-attention
//! model needs: no general broadcasting, no convolutions.
//!
//! All graph values are matrices (`rows x cols`); feature maps travel as
//! `channels x (width*height)` with spatial bookkeeping kept by the caller.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// `A + b` with `b` a column broadcast across all columns of `A`.
    AddColBroadcast(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise product; `same_shape == false` means the right operand is
    /// a `1 x cols` row vector broadcast down the rows of the left.
    Hadamard {
        a: NodeId,
        b: NodeId,
        same_shape: bool,
    },
    ConcatRows {
        top: NodeId,
        bottom: NodeId,
    },
    /// Column vector tiled across `cols` columns.
    TileCols {
        input: NodeId,
        cols: usize,
    },
    SoftmaxColumns(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Sum(NodeId),
    /// Bilinear upsample of each row interpreted as a `height x width`
    /// grid, by an integer factor, align-corners=false convention.
    UpsampleBilinear {
        input: NodeId,
        width: usize,
        height: usize,
        factor: usize,
    },
    /// 2x2 space-to-channel rearrangement: `C x (w*h)` becomes
    /// `4C x (w/2 * h/2)`.
    SpaceToChannel {
        input: NodeId,
        width: usize,
        height: usize,
    },
    /// Mean binary cross-entropy against a constant 0/1 target, with the
    /// probabilities clamped to `[clamp, 1-clamp]`.
    BceMean {
        probs: NodeId,
        target: Vec<f64>,
        clamp: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the given node, if it was
    /// reachable and required gradients.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Build-once computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Bindings from leaf nodes to parameters of the set they came from.
    param_bindings: Vec<(NodeId, ParamId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> NodeId {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// (rows, cols) of a node's value.
    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.node(id).data
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        let n = self.node(id);
        Tensor::matrix(n.rows, n.cols, n.data.clone()).expect("node dims consistent")
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar_value(&self, id: NodeId) -> Result<f64, CoreError> {
        let n = self.node(id);
        if n.data.len() != 1 {
            return Err(CoreError::Contract(alloc::format!(
                "expected scalar node, got {}x{}",
                n.rows,
                n.cols
            )));
        }
        Ok(n.data[0])
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Inserts a tensor value; gradient tracking follows the tensor's flag.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(
            t.rows(),
            t.cols(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// Inserts a value that never tracks gradients.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(t.rows(), t.cols(), t.data().to_vec(), false, Op::Leaf)
    }

    /// Inserts a parameter's current value and records the binding so
    /// [`Graph::backward`] can accumulate into the owning [`ParamSet`].
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> NodeId {
        let t = &set.get(id).tensor;
        let node = self.push(t.rows(), t.cols(), t.data().to_vec(), true, Op::Leaf);
        self.param_bindings.push((node, id));
        node
    }

    // ── Operations ──────────────────────────────────────────────────────

    /// Matrix product `A(m x k) * B(k x n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let (m, ka) = self.dims(a);
        let (kb, n) = self.dims(b);
        if ka != kb {
            return Err(CoreError::Dimension(alloc::format!(
                "matmul: inner extents disagree: {m}x{ka} . {kb}x{n}"
            )));
        }
        let out = matmul_values(self.data(a), self.data(b), m, ka, n);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(m, n, out, rg, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.dims(a);
        let src = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.node(a).requires_grad;
        self.push(c, r, out, rg, Op::Transpose(a))
    }

    /// Elementwise sum of equally shaped matrices.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if (ra, ca) != (rb, cb) {
            return Err(CoreError::Dimension(alloc::format!(
                "add: shapes differ: {ra}x{ca} vs {rb}x{cb}"
            )));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(ra, ca, out, rg, Op::Add(a, b)))
    }

    /// `A(r x c) + b(r x 1)` with the column vector added to every column.
    pub fn add_col_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if rb != ra || cb != 1 {
            return Err(CoreError::Dimension(alloc::format!(
                "add_col_broadcast: {ra}x{ca} needs a {ra}x1 bias, got {rb}x{cb}"
            )));
        }
        let bias = self.data(b).to_vec();
        let src = self.data(a);
        let mut out = vec![0.0; ra * ca];
        for i in 0..ra {
            for j in 0..ca {
                out[i * ca + j] = src[i * ca + j] + bias[i];
            }
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(ra, ca, out, rg, Op::AddColBroadcast(a, b)))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.data(a).iter().map(|x| x * factor).collect();
        let rg = self.node(a).requires_grad;
        self.push(r, c, out, rg, Op::Scale(a, factor))
    }

    /// Elementwise (Hadamard) product. Either both operands share a shape,
    /// or `b` is a `1 x cols` row vector broadcast down `a`'s rows (the
    /// gate broadcast over the channel axis).
    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if (ra, ca) == (rb, cb) {
            let out: Vec<f64> = self
                .data(a)
                .iter()
                .zip(self.data(b))
                .map(|(x, y)| x * y)
                .collect();
            let rg = self.node(a).requires_grad || self.node(b).requires_grad;
            return Ok(self.push(
                ra,
                ca,
                out,
                rg,
                Op::Hadamard {
                    a,
                    b,
                    same_shape: true,
                },
            ));
        }
        if rb == 1 && cb == ca {
            let row = self.data(b).to_vec();
            let src = self.data(a);
            let mut out = vec![0.0; ra * ca];
            for i in 0..ra {
                for j in 0..ca {
                    out[i * ca + j] = src[i * ca + j] * row[j];
                }
            }
            let rg = self.node(a).requires_grad || self.node(b).requires_grad;
            return Ok(self.push(
                ra,
                ca,
                out,
                rg,
                Op::Hadamard {
                    a,
                    b,
                    same_shape: false,
                },
            ));
        }
        Err(CoreError::Dimension(alloc::format!(
            "hadamard: incompatible shapes {ra}x{ca} and {rb}x{cb}"
        )))
    }

    /// Stacks `a` above `b`; column counts must agree.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ca != cb {
            return Err(CoreError::Dimension(alloc::format!(
                "concat_rows: column counts differ: {ra}x{ca} vs {rb}x{cb}"
            )));
        }
        let mut out = Vec::with_capacity((ra + rb) * ca);
        out.extend_from_slice(self.data(a));
        out.extend_from_slice(self.data(b));
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(ra + rb, ca, out, rg, Op::ConcatRows { top: a, bottom: b }))
    }

    /// Tiles a column vector (`d x 1`) across `cols` columns.
    pub fn tile_cols(&mut self, input: NodeId, cols: usize) -> Result<NodeId, CoreError> {
        let (r, c) = self.dims(input);
        if c != 1 {
            return Err(CoreError::Dimension(alloc::format!(
                "tile_cols: expected a column vector, got {r}x{c}"
            )));
        }
        if cols == 0 {
            return Err(CoreError::Dimension(
                "tile_cols: zero target columns".into(),
            ));
        }
        let src = self.data(input);
        let mut out = vec![0.0; r * cols];
        for i in 0..r {
            for j in 0..cols {
                out[i * cols + j] = src[i];
            }
        }
        let rg = self.node(input).requires_grad;
        Ok(self.push(r, cols, out, rg, Op::TileCols { input, cols }))
    }

    /// Numerically stable softmax over each column (max-subtracted).
    pub fn softmax_columns(&mut self, input: NodeId) -> Result<NodeId, CoreError> {
        let (r, c) = self.dims(input);
        if r == 0 || c == 0 {
            return Err(CoreError::Dimension(alloc::format!(
                "softmax_columns: empty matrix {r}x{c}"
            )));
        }
        let src = self.data(input);
        let mut out = vec![0.0; r * c];
        for j in 0..c {
            let mut max = f64::NEG_INFINITY;
            for i in 0..r {
                max = max.max(src[i * c + j]);
            }
            let mut denom = 0.0;
            for i in 0..r {
                let e = libm::exp(src[i * c + j] - max);
                out[i * c + j] = e;
                denom += e;
            }
            for i in 0..r {
                out[i * c + j] /= denom;
            }
        }
        let rg = self.node(input).requires_grad;
        Ok(self.push(r, c, out, rg, Op::SoftmaxColumns(input)))
    }

    /// Elementwise logistic function; saturation-safe on both tails.
    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let (r, c) = self.dims(input);
        let out: Vec<f64> = self
            .data(input)
            .iter()
            .map(|&x| stable_sigmoid(x))
            .collect();
        let rg = self.node(input).requires_grad;
        self.push(r, c, out, rg, Op::Sigmoid(input))
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let (r, c) = self.dims(input);
        let out: Vec<f64> = self.data(input).iter().map(|&x| libm::tanh(x)).collect();
        let rg = self.node(input).requires_grad;
        self.push(r, c, out, rg, Op::Tanh(input))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.data(input).iter().sum();
        let rg = self.node(input).requires_grad;
        self.push(1, 1, vec![total], rg, Op::Sum(input))
    }

    /// Bilinear upsampling by an integer factor, align-corners=false.
    /// Each row of the input is a `height x width` grid (row-major,
    /// spatial index `y * width + x`); the output rows are
    /// `(height*factor) x (width*factor)` grids.
    pub fn upsample_bilinear(
        &mut self,
        input: NodeId,
        width: usize,
        height: usize,
        factor: usize,
    ) -> Result<NodeId, CoreError> {
        let (ch, n) = self.dims(input);
        if n != width * height {
            return Err(CoreError::Dimension(alloc::format!(
                "upsample_bilinear: {ch}x{n} is not channels x ({width}*{height})"
            )));
        }
        if factor == 0 {
            return Err(CoreError::Config("upsample_bilinear: zero factor".into()));
        }
        let (ow, oh) = (width * factor, height * factor);
        let src = self.data(input);
        let mut out = vec![0.0; ch * ow * oh];
        for oy in 0..oh {
            let (y0, y1, dy) = sample_axis(oy, factor, height);
            for ox in 0..ow {
                let (x0, x1, dx) = sample_axis(ox, factor, width);
                for c in 0..ch {
                    let base = c * width * height;
                    let v00 = src[base + y0 * width + x0];
                    let v01 = src[base + y0 * width + x1];
                    let v10 = src[base + y1 * width + x0];
                    let v11 = src[base + y1 * width + x1];
                    let top = v00 * (1.0 - dx) + v01 * dx;
                    let bot = v10 * (1.0 - dx) + v11 * dx;
                    out[c * ow * oh + oy * ow + ox] = top * (1.0 - dy) + bot * dy;
                }
            }
        }
        let rg = self.node(input).requires_grad;
        Ok(self.push(
            ch,
            ow * oh,
            out,
            rg,
            Op::UpsampleBilinear {
                input,
                width,
                height,
                factor,
            },
        ))
    }

    /// 2x2 space-to-channel rearrangement (used by the strided toy
    /// encoder): halves each spatial side, quadruples the channel count.
    pub fn space_to_channel(
        &mut self,
        input: NodeId,
        width: usize,
        height: usize,
    ) -> Result<NodeId, CoreError> {
        let (ch, n) = self.dims(input);
        if n != width * height {
            return Err(CoreError::Dimension(alloc::format!(
                "space_to_channel: {ch}x{n} is not channels x ({width}*{height})"
            )));
        }
        if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(CoreError::Dimension(alloc::format!(
                "space_to_channel: spatial size {width}x{height} not even"
            )));
        }
        let (w2, h2) = (width / 2, height / 2);
        let src = self.data(input);
        let mut out = vec![0.0; ch * 4 * w2 * h2];
        for c in 0..ch {
            for by in 0..h2 {
                for bx in 0..w2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let oc = c * 4 + dy * 2 + dx;
                            let dst = oc * w2 * h2 + by * w2 + bx;
                            let srcpos = c * width * height + (2 * by + dy) * width + (2 * bx + dx);
                            out[dst] = src[srcpos];
                        }
                    }
                }
            }
        }
        let rg = self.node(input).requires_grad;
        Ok(self.push(
            ch * 4,
            w2 * h2,
            out,
            rg,
            Op::SpaceToChannel {
                input,
                width,
                height,
            },
        ))
    }

    /// Mean binary cross-entropy of probabilities against a constant 0/1
    /// target, with probabilities clamped into `[clamp, 1-clamp]`.
    pub fn bce_mean(
        &mut self,
        probs: NodeId,
        target: &[f64],
        clamp: f64,
    ) -> Result<NodeId, CoreError> {
        let (r, c) = self.dims(probs);
        if target.len() != r * c {
            return Err(CoreError::Dimension(alloc::format!(
                "bce_mean: prediction {r}x{c} vs {} target pixels",
                target.len()
            )));
        }
        if target.is_empty() {
            return Err(CoreError::Contract("bce_mean: empty target".into()));
        }
        let n = target.len() as f64;
        let mut total = 0.0;
        for (&p, &y) in self.data(probs).iter().zip(target) {
            let pc = p.clamp(clamp, 1.0 - clamp);
            total -= y * libm::log(pc) + (1.0 - y) * libm::log(1.0 - pc);
        }
        let rg = self.node(probs).requires_grad;
        Ok(self.push(
            1,
            1,
            vec![total / n],
            rg,
            Op::BceMean {
                probs,
                target: target.to_vec(),
                clamp,
            },
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns per-node gradients and
    /// accumulates (additively) into every bound parameter's grad buffer.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<Gradients, CoreError> {
        let grads = self.gradients(loss)?;
        for &(node, pid) in &self.param_bindings {
            if let Some(g) = grads.get(node) {
                params.get_mut(pid).tensor.accumulate_grad(g)?;
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without parameter accumulation; useful for gradients
    /// with respect to plain leaf tensors.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients, CoreError> {
        let ln = self.node(loss);
        if ln.data.len() != 1 {
            return Err(CoreError::Contract(alloc::format!(
                "backward: loss must be scalar, got {}x{}",
                ln.rows,
                ln.cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().expect("checked above");
            self.accumulate_parents(NodeId(idx), &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn ensure_grad<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        id: NodeId,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.node(id).requires_grad {
            return None;
        }
        let len = self.node(id).data.len();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn accumulate_parents(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = self.node(id);
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                // dA = G * B^T
                if self.node(*a).requires_grad {
                    let bdat = self.data(*b);
                    let ga = self.ensure_grad(grads, *a).expect("requires grad");
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bdat[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                // dB = A^T * G
                if self.node(*b).requires_grad {
                    let adat = self.data(*a);
                    let gb = self.ensure_grad(grads, *b).expect("requires grad");
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += adat[i * k + p] * g[i * n + j];
                            }
                            gb[p * n + j] += acc;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims(*a);
                if let Some(ga) = self.ensure_grad(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for operand in [*a, *b] {
                    if let Some(go) = self.ensure_grad(grads, operand) {
                        for (dst, src) in go.iter_mut().zip(g) {
                            *dst += src;
                        }
                    }
                }
            }
            Op::AddColBroadcast(a, b) => {
                if let Some(ga) = self.ensure_grad(grads, *a) {
                    for (dst, src) in ga.iter_mut().zip(g) {
                        *dst += src;
                    }
                }
                let (r, c) = (node.rows, node.cols);
                if let Some(gb) = self.ensure_grad(grads, *b) {
                    for i in 0..r {
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += g[i * c + j];
                        }
                        gb[i] += acc;
                    }
                }
            }
            Op::Scale(a, factor) => {
                if let Some(ga) = self.ensure_grad(grads, *a) {
                    for (dst, src) in ga.iter_mut().zip(g) {
                        *dst += factor * src;
                    }
                }
            }
            Op::Hadamard { a, b, same_shape } => {
                let (r, c) = (node.rows, node.cols);
                if *same_shape {
                    if self.node(*a).requires_grad {
                        let bdat = self.data(*b).to_vec();
                        let ga = self.ensure_grad(grads, *a).expect("requires grad");
                        for i in 0..g.len() {
                            ga[i] += g[i] * bdat[i];
                        }
                    }
                    if self.node(*b).requires_grad {
                        let adat = self.data(*a).to_vec();
                        let gb = self.ensure_grad(grads, *b).expect("requires grad");
                        for i in 0..g.len() {
                            gb[i] += g[i] * adat[i];
                        }
                    }
                } else {
                    if self.node(*a).requires_grad {
                        let row = self.data(*b).to_vec();
                        let ga = self.ensure_grad(grads, *a).expect("requires grad");
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] += g[i * c + j] * row[j];
                            }
                        }
                    }
                    if self.node(*b).requires_grad {
                        let adat = self.data(*a).to_vec();
                        let gb = self.ensure_grad(grads, *b).expect("requires grad");
                        for j in 0..c {
                            let mut acc = 0.0;
                            for i in 0..r {
                                acc += g[i * c + j] * adat[i * c + j];
                            }
                            gb[j] += acc;
                        }
                    }
                }
            }
            Op::ConcatRows { top, bottom } => {
                let split = self.node(*top).data.len();
                if let Some(gt) = self.ensure_grad(grads, *top) {
                    for (dst, src) in gt.iter_mut().zip(&g[..split]) {
                        *dst += src;
                    }
                }
                if let Some(gb) = self.ensure_grad(grads, *bottom) {
                    for (dst, src) in gb.iter_mut().zip(&g[split..]) {
                        *dst += src;
                    }
                }
            }
            Op::TileCols { input, cols } => {
                let (r, _) = self.dims(*input);
                if let Some(gi) = self.ensure_grad(grads, *input) {
                    for i in 0..r {
                        let mut acc = 0.0;
                        for j in 0..*cols {
                            acc += g[i * cols + j];
                        }
                        gi[i] += acc;
                    }
                }
            }
            Op::SoftmaxColumns(input) => {
                let (r, c) = (node.rows, node.cols);
                let s = &node.data;
                if let Some(gi) = self.ensure_grad(grads, *input) {
                    for j in 0..c {
                        let mut dot = 0.0;
                        for i in 0..r {
                            dot += g[i * c + j] * s[i * c + j];
                        }
                        for i in 0..r {
                            gi[i * c + j] += s[i * c + j] * (g[i * c + j] - dot);
                        }
                    }
                }
            }
            Op::Sigmoid(input) => {
                let s = &node.data;
                if let Some(gi) = self.ensure_grad(grads, *input) {
                    for i in 0..g.len() {
                        gi[i] += g[i] * s[i] * (1.0 - s[i]);
                    }
                }
            }
            Op::Tanh(input) => {
                let t = &node.data;
                if let Some(gi) = self.ensure_grad(grads, *input) {
                    for i in 0..g.len() {
                        gi[i] += g[i] * (1.0 - t[i] * t[i]);
                    }
                }
            }
            Op::Sum(input) => {
                if let Some(gi) = self.ensure_grad(grads, *input) {
                    for dst in gi.iter_mut() {
                        *dst += g[0];
                    }
                }
            }
            Op::UpsampleBilinear {
                input,
                width,
                height,
                factor,
            } => {
                let (ch, _) = self.dims(*input);
                let (ow, oh) = (width * factor, height * factor);
                if let Some(gi) = self.ensure_grad(grads, *input) {
                    for oy in 0..oh {
                        let (y0, y1, dy) = sample_axis(oy, *factor, *height);
                        for ox in 0..ow {
                            let (x0, x1, dx) = sample_axis(ox, *factor, *width);
                            for c in 0..ch {
                                let go = g[c * ow * oh + oy * ow + ox];
                                let base = c * width * height;
                                gi[base + y0 * width + x0] += go * (1.0 - dy) * (1.0 - dx);
                                gi[base + y0 * width + x1] += go * (1.0 - dy) * dx;
                                gi[base + y1 * width + x0] += go * dy * (1.0 - dx);
                                gi[base + y1 * width + x1] += go * dy * dx;
                            }
                        }
                    }
                }
            }
            Op::SpaceToChannel {
                input,
                width,
                height,
            } => {
                let (ch, _) = self.dims(*input);
                let (w2, h2) = (width / 2, height / 2);
                if let Some(gi) = self.ensure_grad(grads, *input) {
                    for c in 0..ch {
                        for by in 0..h2 {
                            for bx in 0..w2 {
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let oc = c * 4 + dy * 2 + dx;
                                        let srcpos = c * width * height
                                            + (2 * by + dy) * width
                                            + (2 * bx + dx);
                                        gi[srcpos] += g[oc * w2 * h2 + by * w2 + bx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::BceMean {
                probs,
                target,
                clamp,
            } => {
                let pdat = self.data(*probs).to_vec();
                let n = target.len() as f64;
                if let Some(gp) = self.ensure_grad(grads, *probs) {
                    for i in 0..target.len() {
                        let p = pdat[i];
                        // Zero gradient where the clamp is active.
                        if p < *clamp || p > 1.0 - *clamp {
                            continue;
                        }
                        let y = target[i];
                        gp[i] += g[0] * ((1.0 - y) / (1.0 - p) - y / p) / n;
                    }
                }
            }
        }
    }
}

/// `(x + 0.5)/factor - 0.5` source coordinate with border clamping;
/// returns the two bracketing indices and the fractional weight.
fn sample_axis(out: usize, factor: usize, extent: usize) -> (usize, usize, f64) {
    let src = (out as f64 + 0.5) / factor as f64 - 0.5;
    let floor = libm::floor(src);
    let frac = src - floor;
    let lo = floor.max(0.0) as usize;
    let lo = lo.min(extent - 1);
    let hi = if floor < 0.0 {
        0
    } else {
        (floor as usize + 1).min(extent - 1)
    };
    let frac = if floor < 0.0 { 0.0 } else { frac };
    (lo, hi, frac)
}

fn matmul_values(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// Overflow-free logistic function; strictly inside (0, 1) until `f64`
/// rounding saturates (|x| beyond roughly 36).
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
