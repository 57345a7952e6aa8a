//! Shared test oracles: textbook matmul, central finite differences, and
//! relative-error comparison. These stay independent of the graph's own
//! backward implementation: they only ever call forward passes.
#![allow(dead_code)] // each test binary uses a subset

use coseg_core::graph::{Graph, NodeId};
use coseg_core::tensor::Tensor;
use rand::Rng;

/// Textbook i-j-k matrix product with an explicit running sum.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut sum = 0.0;
            for p in 0..k {
                sum += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = sum;
        }
    }
    out
}

/// Relative error with a floored denominator so near-zero gradients do not
/// blow the ratio up past finite-difference resolution.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks analytic gradients of `build`'s scalar output against central
/// finite differences, for every element of every input tensor.
///
/// `build` must construct the same function every time it is called, from
/// leaf nodes in input order. Returns the max relative error observed.
pub fn fd_check<F>(inputs: &[Tensor], build: F, step: f64) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut tracked: Vec<Tensor> = inputs.to_vec();
    for t in &mut tracked {
        t.set_requires_grad(true);
    }

    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t)).collect();
        let loss = build(&mut g, &ids);
        g.scalar_value(loss).expect("loss must be scalar")
    };

    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = tracked.iter().map(|t| g.leaf(t)).collect();
    let loss = build(&mut g, &ids);
    let grads = g.gradients(loss).expect("backward");

    let mut worst = 0.0f64;
    for (ti, id) in ids.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tracked[ti].len()],
        };
        for (e, &orig) in inputs[ti].data().iter().enumerate() {
            let mut plus = tracked.clone();
            plus[ti].data_mut()[e] = orig + step;
            let mut minus = tracked.clone();
            minus[ti].data_mut()[e] = orig - step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            worst = worst.max(rel_err(analytic[e], numeric));
        }
    }
    worst
}

/// Uniformly random matrix in `[-range, range]`.
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, range: f64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-range..range))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}
