//! Forward values and gradient fidelity for every graph operation.
//!
//! Expected values that are not forced by shape laws were computed with the
//! independent oracles in `common` (textbook matmul, direct exp/sum
//! formulas, central finite differences) and frozen here.

mod common;

use common::{fd_check, naive_matmul, random_matrix, rel_err};
use coseg_core::graph::Graph;
use coseg_core::tensor::{ParamSet, Tensor};
use coseg_core::{rng, CoreError};
use proptest::prelude::*;
use rand::Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

// ── matmul ──────────────────────────────────────────────────────────────

#[test]
fn matmul_identity_passthrough() {
    let mut g = Graph::new();
    let a = g.leaf(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let i = g.leaf(&t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    let c = g.matmul(a, i).unwrap();
    assert_eq!(g.data(c), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_zero_annihilates() {
    let mut g = Graph::new();
    let a = g.leaf(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let z = g.leaf(&Tensor::zeros(vec![2, 2]));
    let c = g.matmul(a, z).unwrap();
    assert_eq!(g.data(c), &[0.0; 4]);
}

#[test]
fn matmul_matches_frozen_product() {
    // [[1,2],[3,4]] * [[5,6],[7,8]] per the textbook oracle.
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [5.0, 6.0, 7.0, 8.0];
    assert_eq!(naive_matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);

    let mut g = Graph::new();
    let an = g.leaf(&t(2, 2, &a));
    let bn = g.leaf(&t(2, 2, &b));
    let c = g.matmul(an, bn).unwrap();
    assert_eq!(g.data(c), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.leaf(&Tensor::zeros(vec![2, 3]));
    let b = g.leaf(&Tensor::zeros(vec![4, 5]));
    match g.matmul(a, b) {
        Err(CoreError::Dimension(msg)) => {
            assert!(
                msg.contains("2x3") && msg.contains("4x5"),
                "message was: {msg}"
            );
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

proptest! {
    /// Exact agreement with the naive triple-loop oracle on random
    /// integer-valued matrices up to 8x8.
    #[test]
    fn matmul_agrees_with_naive_oracle(
        m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in 0u64..1000
    ) {
        let mut r = rng::stream(seed, 99);
        let a: Vec<f64> = (0..m * k).map(|_| r.random_range(-9i32..=9) as f64).collect();
        let b: Vec<f64> = (0..k * n).map(|_| r.random_range(-9i32..=9) as f64).collect();
        let mut g = Graph::new();
        let an = g.leaf(&t(m, k, &a));
        let bn = g.leaf(&t(k, n, &b));
        let c = g.matmul(an, bn).unwrap();
        let expect = naive_matmul(&a, &b, m, k, n);
        prop_assert_eq!(g.data(c), expect.as_slice());
    }
}

// ── softmax_columns ─────────────────────────────────────────────────────

#[test]
fn softmax_equal_inputs_are_uniform() {
    let mut g = Graph::new();
    let x = g.leaf(&t(2, 1, &[0.0, 0.0]));
    let s = g.softmax_columns(x).unwrap();
    assert_eq!(g.data(s), &[0.5, 0.5]);
}

#[test]
fn softmax_matches_direct_formula() {
    // exp/sum oracle: column [1,2] -> [1/(1+e), e/(1+e)].
    let e = 1.0f64.exp();
    let expect = [1.0 / (1.0 + e), e / (1.0 + e)];
    assert!((expect[0] - 0.268941).abs() < 1e-6);
    assert!((expect[1] - 0.731059).abs() < 1e-6);

    let mut g = Graph::new();
    let x = g.leaf(&t(2, 1, &[1.0, 2.0]));
    let s = g.softmax_columns(x).unwrap();
    for (got, want) in g.data(s).iter().zip(expect) {
        assert!((got - want).abs() < 1e-9);
    }
}

#[test]
fn softmax_survives_large_logits() {
    let mut g = Graph::new();
    let x = g.leaf(&t(2, 1, &[1000.0, 1001.0]));
    let s = g.softmax_columns(x).unwrap();
    assert!((g.data(s)[0] - 0.268941).abs() < 1e-6);
    assert!((g.data(s)[1] - 0.731059).abs() < 1e-6);
}

#[test]
fn softmax_rejects_empty() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::zeros(vec![0, 3]));
    assert!(matches!(g.softmax_columns(x), Err(CoreError::Dimension(_))));
}

proptest! {
    /// Columns sum to one, entries lie in (0,1), and adding a constant to a
    /// column leaves the softmax unchanged.
    #[test]
    fn softmax_column_invariants(seed in 0u64..200, rows in 2usize..8, cols in 1usize..8) {
        let mut r = rng::stream(seed, 98);
        let x = random_matrix(&mut r, rows, cols, 10.0);
        let shift: f64 = r.random_range(-5.0..5.0);

        let mut g = Graph::new();
        let xn = g.leaf(&x);
        let s = g.softmax_columns(xn).unwrap();
        let sdat = g.data(s).to_vec();
        for j in 0..cols {
            let col_sum: f64 = (0..rows).map(|i| sdat[i * cols + j]).sum();
            prop_assert!((col_sum - 1.0).abs() <= 1e-9);
        }
        prop_assert!(sdat.iter().all(|&v| v > 0.0 && v < 1.0));

        // Shift one whole column by a constant.
        let mut shifted = x.clone();
        for i in 0..rows {
            shifted.data_mut()[i * cols] += shift;
        }
        let mut g2 = Graph::new();
        let xn2 = g2.leaf(&shifted);
        let s2 = g2.softmax_columns(xn2).unwrap();
        for (a, b) in g2.data(s2).iter().zip(&sdat) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

// ── sigmoid / tanh ──────────────────────────────────────────────────────

#[test]
fn sigmoid_symmetry_point_and_formula() {
    let mut g = Graph::new();
    let x = g.leaf(&t(1, 3, &[0.0, 1.0, 100.0]));
    let s = g.sigmoid(x);
    let d = g.data(s);
    assert_eq!(d[0], 0.5);
    // direct formula oracle: 1/(1+exp(-1))
    assert!((d[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert!((d[1] - 0.731059).abs() < 1e-6);
    // saturation without overflow
    assert!((1.0 - d[2]).abs() < 1e-40);
    assert!(d[2].is_finite());
}

#[test]
fn sigmoid_no_overflow_on_large_negative() {
    let mut g = Graph::new();
    let x = g.leaf(&t(1, 2, &[-100.0, -1000.0]));
    let s = g.sigmoid(x);
    assert!(g
        .data(s)
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0 && *v < 1e-20));
}

// ── hadamard ────────────────────────────────────────────────────────────

#[test]
fn hadamard_identity_and_zero() {
    let mut g = Graph::new();
    let a = g.leaf(&t(2, 2, &[1.0, -2.0, 3.0, 4.0]));
    let ones = g.leaf(&t(2, 2, &[1.0; 4]));
    let zeros = g.leaf(&Tensor::zeros(vec![2, 2]));
    let id = g.hadamard(a, ones).unwrap();
    let zo = g.hadamard(a, zeros).unwrap();
    assert_eq!(g.data(id), &[1.0, -2.0, 3.0, 4.0]);
    assert_eq!(g.data(zo), &[0.0; 4]);
}

#[test]
fn hadamard_elementwise_oracle() {
    let mut g = Graph::new();
    let a = g.leaf(&t(1, 3, &[1.0, 2.0, 3.0]));
    let b = g.leaf(&t(1, 3, &[2.0, 0.5, -1.0]));
    let c = g.hadamard(a, b).unwrap();
    assert_eq!(g.data(c), &[2.0, 1.0, -3.0]);
}

#[test]
fn hadamard_row_broadcast_scales_columns() {
    let mut g = Graph::new();
    let a = g.leaf(&t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let gate = g.leaf(&t(1, 3, &[1.0, 0.0, 2.0]));
    let c = g.hadamard(a, gate).unwrap();
    assert_eq!(g.data(c), &[1.0, 0.0, 6.0, 4.0, 0.0, 12.0]);
}

#[test]
fn hadamard_incompatible_shapes_rejected() {
    let mut g = Graph::new();
    let a = g.leaf(&Tensor::zeros(vec![2, 3]));
    let b = g.leaf(&Tensor::zeros(vec![3, 2]));
    assert!(matches!(g.hadamard(a, b), Err(CoreError::Dimension(_))));
}

// ── concat_rows ─────────────────────────────────────────────────────────

#[test]
fn concat_rows_shape_law() {
    let mut g = Graph::new();
    let a = g.leaf(&t(1, 3, &[1.0, 2.0, 3.0]));
    let b = g.leaf(&t(2, 3, &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
    let c = g.concat_rows(a, b).unwrap();
    assert_eq!(g.dims(c), (3, 3));
    assert_eq!(&g.data(c)[..3], &[1.0, 2.0, 3.0]);
}

#[test]
fn concat_rows_empty_is_neutral() {
    let mut g = Graph::new();
    let a = g.leaf(&t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let empty = g.leaf(&Tensor::zeros(vec![0, 3]));
    let c = g.concat_rows(a, empty).unwrap();
    assert_eq!(g.dims(c), (2, 3));
    assert_eq!(g.data(c), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn concat_rows_column_mismatch_rejected() {
    let mut g = Graph::new();
    let a = g.leaf(&Tensor::zeros(vec![2, 3]));
    let b = g.leaf(&Tensor::zeros(vec![2, 4]));
    assert!(matches!(g.concat_rows(a, b), Err(CoreError::Dimension(_))));
}

#[test]
fn concat_sum_gradient_is_all_ones() {
    // d sum(concat(A,B)) / dA = ones(A), verified against finite differences.
    let mut a = t(2, 3, &[0.3, -0.1, 0.5, 0.2, 0.9, -0.4]);
    let mut b = t(1, 3, &[1.0, 2.0, 3.0]);
    a.set_requires_grad(true);
    b.set_requires_grad(true);

    let mut g = Graph::new();
    let an = g.leaf(&a);
    let bn = g.leaf(&b);
    let c = g.concat_rows(an, bn).unwrap();
    let loss = g.sum(c);
    let grads = g.gradients(loss).unwrap();
    assert_eq!(grads.get(an).unwrap(), &[1.0; 6]);
    assert_eq!(grads.get(bn).unwrap(), &[1.0; 3]);

    let worst = fd_check(
        &[a, b],
        |g, ids| {
            let c = g.concat_rows(ids[0], ids[1]).unwrap();
            g.sum(c)
        },
        FD_STEP,
    );
    assert!(worst <= FD_TOL, "max rel err {worst}");
}

// ── tile_cols ───────────────────────────────────────────────────────────

#[test]
fn tile_cols_replicates_column() {
    let mut g = Graph::new();
    let z = g.leaf(&Tensor::column(vec![7.0]));
    let tiled = g.tile_cols(z, 3).unwrap();
    assert_eq!(g.data(tiled), &[7.0, 7.0, 7.0]);
}

#[test]
fn tile_cols_gradient_is_column_count() {
    let mut z = Tensor::column(vec![0.4, -0.2]);
    z.set_requires_grad(true);
    let mut g = Graph::new();
    let zn = g.leaf(&z);
    let tiled = g.tile_cols(zn, 5).unwrap();
    let loss = g.sum(tiled);
    let grads = g.gradients(loss).unwrap();
    assert_eq!(grads.get(zn).unwrap(), &[5.0, 5.0]);

    let worst = fd_check(
        &[z],
        |g, ids| {
            let tiled = g.tile_cols(ids[0], 5).unwrap();
            g.sum(tiled)
        },
        FD_STEP,
    );
    assert!(worst <= FD_TOL, "max rel err {worst}");
}

// ── backward contract ───────────────────────────────────────────────────

#[test]
fn backward_linear_map_gradient_is_input() {
    // loss = sum(W x): dL/dW[i][j] = x[j].
    let mut set = ParamSet::new();
    let w = set
        .register("w", t(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]))
        .unwrap();
    let x = Tensor::column(vec![2.0, -1.0, 4.0]);

    let mut g = Graph::new();
    let wn = g.param(&set, w);
    let xn = g.constant(&x);
    let wx = g.matmul(wn, xn).unwrap();
    let loss = g.sum(wx);
    g.backward(loss, &mut set).unwrap();

    let grad = set.get(w).tensor.grad().unwrap();
    assert_eq!(grad, &[2.0, -1.0, 4.0, 2.0, -1.0, 4.0]);
}

#[test]
fn backward_constant_loss_leaves_grad_zero() {
    let mut set = ParamSet::new();
    let w = set.register("w", t(2, 2, &[1.0; 4])).unwrap();
    let mut g = Graph::new();
    let _wn = g.param(&set, w);
    let c = g.constant(&Tensor::scalar(3.0));
    let loss = g.sum(c);
    g.backward(loss, &mut set).unwrap();
    assert!(set
        .get(w)
        .tensor
        .grad()
        .is_none_or(|g| g.iter().all(|&v| v == 0.0)));
}

#[test]
fn backward_accumulates_across_calls_until_reset() {
    let mut set = ParamSet::new();
    let w = set.register("w", Tensor::scalar(2.0)).unwrap();
    for _ in 0..2 {
        let mut g = Graph::new();
        let wn = g.param(&set, w);
        let loss = g.scale(wn, 3.0);
        g.backward(loss, &mut set).unwrap();
    }
    assert_eq!(set.get(w).tensor.grad().unwrap(), &[6.0]);
    set.zero_grads();
    assert_eq!(set.get(w).tensor.grad().unwrap(), &[0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut set = ParamSet::new();
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::zeros(vec![2, 2]));
    assert!(matches!(
        g.backward(x, &mut set),
        Err(CoreError::Contract(_))
    ));
}

// ── upsample / space_to_channel / bce ───────────────────────────────────

#[test]
fn upsample_bilinear_matches_interpolation_oracle() {
    // 2x2 logit grid [[0,4],[0,4]] upsampled x2, align-corners=false:
    // interior columns interpolate to 1 and 3.
    let mut g = Graph::new();
    let x = g.leaf(&t(1, 4, &[0.0, 4.0, 0.0, 4.0]));
    let up = g.upsample_bilinear(x, 2, 2, 2).unwrap();
    let s = g.sigmoid(up);
    let d = g.data(s);
    assert_eq!(g.dims(s), (1, 16));
    // Column pattern per row: [edge, sigmoid(1), sigmoid(3), edge].
    for row in 0..4 {
        assert!((d[row * 4 + 1] - 0.731059).abs() < 1e-6);
        assert!((d[row * 4 + 2] - 0.952574).abs() < 1e-6);
        assert_eq!(d[row * 4], 0.5);
        assert!((d[row * 4 + 3] - 0.982014).abs() < 1e-6);
    }
}

#[test]
fn space_to_channel_round_trips_by_indices() {
    let mut g = Graph::new();
    // 1 channel, 4x2 grid (w=4, h=2).
    let x = g.leaf(&t(1, 8, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
    let y = g.space_to_channel(x, 4, 2).unwrap();
    assert_eq!(g.dims(y), (4, 2));
    // Sub-position (dy,dx) channel holds the matching strided samples.
    assert_eq!(g.data(y), &[0.0, 2.0, 1.0, 3.0, 4.0, 6.0, 5.0, 7.0]);
}

#[test]
fn bce_mean_frozen_values() {
    // p == 0.5 everywhere is ln 2 on any target.
    let mut g = Graph::new();
    let p = g.leaf(&t(1, 4, &[0.5; 4]));
    let loss = g.bce_mean(p, &[1.0, 0.0, 1.0, 0.0], 1e-7).unwrap();
    assert!((g.scalar_value(loss).unwrap() - core::f64::consts::LN_2).abs() < 1e-6);

    // direct formula oracle: (-ln 0.9 - ln 0.8) / 2.
    let mut g = Graph::new();
    let p = g.leaf(&t(1, 2, &[0.9, 0.2]));
    let loss = g.bce_mean(p, &[1.0, 0.0], 1e-7).unwrap();
    let expect = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
    assert!((expect - 0.164252).abs() < 1e-6);
    assert!((g.scalar_value(loss).unwrap() - expect).abs() < 1e-9);

    // Perfect prediction after clamping is (almost) zero.
    let mut g = Graph::new();
    let p = g.leaf(&t(1, 2, &[1.0, 0.0]));
    let loss = g.bce_mean(p, &[1.0, 0.0], 1e-7).unwrap();
    assert!(g.scalar_value(loss).unwrap() <= 1e-6);
}

#[test]
fn bce_mean_shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let p = g.leaf(&t(1, 4, &[0.5; 4]));
    assert!(matches!(
        g.bce_mean(p, &[1.0, 0.0], 1e-7),
        Err(CoreError::Dimension(_))
    ));
}

#[test]
fn bce_mean_finite_on_saturated_probabilities() {
    let mut g = Graph::new();
    let p = g.leaf(&t(1, 3, &[0.0, 1.0, 0.5]));
    let loss = g.bce_mean(p, &[1.0, 0.0, 1.0], 1e-7).unwrap();
    assert!(g.scalar_value(loss).unwrap().is_finite());
}

// ── finite differences across every differentiable op, 20+ seeds ───────

#[test]
fn per_op_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng::stream(seed, 97);
        let a = random_matrix(&mut r, 3, 4, 2.0);
        let b = random_matrix(&mut r, 4, 3, 2.0);
        let c = random_matrix(&mut r, 3, 3, 2.0);
        let gate = random_matrix(&mut r, 1, 4, 2.0);
        let col = random_matrix(&mut r, 3, 1, 2.0);
        let grid = random_matrix(&mut r, 2, 16, 2.0);
        let target: Vec<f64> = (0..128).map(|_| f64::from(r.random_range(0..=1))).collect();

        // matmul -> softmax -> hadamard -> sigmoid -> tanh chain.
        worst = worst.max(fd_check(
            &[a.clone(), b.clone(), c.clone()],
            |g, ids| {
                let mm = g.matmul(ids[0], ids[1]).unwrap(); // 3x3
                let sm = g.softmax_columns(mm).unwrap();
                let had = g.hadamard(sm, ids[2]).unwrap();
                let sg = g.sigmoid(had);
                let th = g.tanh(sg);
                g.sum(th)
            },
            FD_STEP,
        ));

        // transpose, scale, tile, add, add_col_broadcast, row-broadcast gate.
        worst = worst.max(fd_check(
            &[a.clone(), gate.clone(), col.clone()],
            |g, ids| {
                let tr = g.transpose(ids[0]); // 4x3
                let back = g.transpose(tr); // 3x4
                let sc = g.scale(back, 0.7);
                let tile = g.tile_cols(ids[2], 4).unwrap(); // 3x4
                let summed = g.add(sc, tile).unwrap();
                let gated = g.hadamard(summed, ids[1]).unwrap(); // 1x4 broadcast
                let biased = g.add_col_broadcast(gated, ids[2]).unwrap();
                g.sum(biased)
            },
            FD_STEP,
        ));

        // upsample + space_to_channel + sigmoid + bce.
        worst = worst.max(fd_check(
            std::slice::from_ref(&grid),
            |g, ids| {
                let up = g.upsample_bilinear(ids[0], 4, 4, 2).unwrap(); // 2 x 64
                let down = g.space_to_channel(up, 8, 8).unwrap(); // 8 x 16
                let probs = g.sigmoid(down);
                g.bce_mean(probs, &target, 1e-7).unwrap()
            },
            FD_STEP,
        ));
    }
    assert!(worst <= FD_TOL, "max rel err {worst}");
}

// ── finiteness under the documented range ───────────────────────────────

proptest! {
    #[test]
    fn ops_stay_finite_within_documented_range(seed in 0u64..100) {
        let mut r = rng::stream(seed, 96);
        let a = random_matrix(&mut r, 4, 4, 1e3);
        let b = random_matrix(&mut r, 4, 4, 1e3);
        let mut g = Graph::new();
        let an = g.leaf(&a);
        let bn = g.leaf(&b);
        let mm = g.matmul(an, bn).unwrap();
        let sm = g.softmax_columns(mm).unwrap();
        let sg = g.sigmoid(mm);
        let th = g.tanh(mm);
        let had = g.hadamard(an, bn).unwrap();
        let cat = g.concat_rows(an, bn).unwrap();
        let up = g.upsample_bilinear(an, 2, 2, 2).unwrap();
        for id in [mm, sm, sg, th, had, cat, up] {
            prop_assert!(g.data(id).iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn rel_err_is_symmetric_floor() {
    assert_eq!(rel_err(0.0, 0.0), 0.0);
    assert!(rel_err(1.0, 1.0 + 1e-5) < 2e-5);
}
