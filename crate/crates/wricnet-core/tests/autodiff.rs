//! Finite-difference validation of every graph operation's backward pass.
//!
//! Each case records one op (or a small composition), backpropagates from a
//! fixed random projection of the output, and compares every input-gradient
//! coordinate against central differences at `f64`.

use wricnet_core::gradcheck::{check_against_fd, GradReport, SamplePlan};
use wricnet_core::graph::{Graph, Padding, Var};
use wricnet_core::rng::rng_from_seed;
use wricnet_core::Tensor;

use rand::Rng;

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data)
}

/// Loss = sum(op_output * fixed_random_coeffs); checks d loss / d inputs.
fn fd_check(tensors: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> GradReport {
    let probe = |g: &mut Graph<f64>, vars: &[Var], trainable: bool| -> Var {
        let out = build(g, vars);
        let coeff = rand_tensor(g.value(out).shape(), 0xC0EFF, -1.0, 1.0);
        let c = g.constant(coeff);
        let prod = g.mul(out, c);
        let _ = trainable;
        g.sum_all(prod)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = probe(&mut g, &vars, true);
    g.backward(loss);
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(tensors)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    check_against_fd(
        tensors,
        &grads,
        |ps| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().map(|t| g.leaf(t.clone(), false)).collect();
            let loss = probe(&mut g, &vars, false);
            g.value(loss).data()[0]
        },
        1e-5,
        SamplePlan::Exhaustive,
    )
}

fn assert_gradcheck(report: GradReport, what: &str) {
    assert!(
        report.passes(1e-4),
        "{what}: max rel err {:.3e} over {} coords, worst {:?}",
        report.max_rel_err,
        report.checked,
        report.worst
    );
}

#[test]
fn conv2d_stride1_same() {
    let x = rand_tensor(&[1, 3, 6, 5], 1, -1.0, 1.0);
    let w = rand_tensor(&[4, 3, 3, 3], 2, -0.5, 0.5);
    let b = rand_tensor(&[4], 3, -0.5, 0.5);
    let r = fd_check(&[x, w, b], |g, v| {
        g.conv2d(v[0], v[1], v[2], 1, Padding::Same)
    });
    assert_gradcheck(r, "conv2d stride 1 same");
}

#[test]
fn conv2d_stride2_same() {
    let x = rand_tensor(&[2, 2, 7, 6], 4, -1.0, 1.0);
    let w = rand_tensor(&[3, 2, 3, 3], 5, -0.5, 0.5);
    let b = rand_tensor(&[3], 6, -0.5, 0.5);
    let r = fd_check(&[x, w, b], |g, v| {
        g.conv2d(v[0], v[1], v[2], 2, Padding::Same)
    });
    assert_gradcheck(r, "conv2d stride 2 same");
}

#[test]
fn conv2d_valid() {
    let x = rand_tensor(&[1, 2, 6, 6], 7, -1.0, 1.0);
    let w = rand_tensor(&[2, 2, 3, 3], 8, -0.5, 0.5);
    let b = rand_tensor(&[2], 9, -0.5, 0.5);
    let r = fd_check(&[x, w, b], |g, v| {
        g.conv2d(v[0], v[1], v[2], 1, Padding::Valid)
    });
    assert_gradcheck(r, "conv2d valid");
}

#[test]
fn conv2d_1x1() {
    let x = rand_tensor(&[1, 4, 5, 5], 10, -1.0, 1.0);
    let w = rand_tensor(&[2, 4, 1, 1], 11, -0.5, 0.5);
    let b = rand_tensor(&[2], 12, -0.5, 0.5);
    let r = fd_check(&[x, w, b], |g, v| {
        g.conv2d(v[0], v[1], v[2], 1, Padding::Same)
    });
    assert_gradcheck(r, "conv2d 1x1");
}

#[test]
fn conv_transpose2d() {
    let x = rand_tensor(&[1, 3, 4, 5], 13, -1.0, 1.0);
    let w = rand_tensor(&[3, 2, 2, 2], 14, -0.5, 0.5);
    let b = rand_tensor(&[2], 15, -0.5, 0.5);
    let r = fd_check(&[x, w, b], |g, v| g.conv_transpose2d(v[0], v[1], v[2]));
    assert_gradcheck(r, "conv_transpose2d");
}

#[test]
fn maxpool2x2() {
    // Values spread apart so no FD step crosses an argmax boundary.
    let x = rand_tensor(&[1, 3, 6, 4], 16, -4.0, 4.0);
    let r = fd_check(&[x], |g, v| g.maxpool2x2(v[0]));
    assert_gradcheck(r, "maxpool2x2");
}

#[test]
fn layer_norm() {
    let x = rand_tensor(&[1, 5, 3, 3], 17, -2.0, 2.0);
    let gamma = rand_tensor(&[5], 18, 0.5, 1.5);
    let beta = rand_tensor(&[5], 19, -0.5, 0.5);
    let r = fd_check(&[x, gamma, beta], |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5)
    });
    assert_gradcheck(r, "layer_norm");
}

#[test]
fn softmax_channels() {
    let x = rand_tensor(&[2, 4, 3, 2], 20, -2.0, 2.0);
    let r = fd_check(&[x], |g, v| g.softmax_channels(v[0]));
    assert_gradcheck(r, "softmax_channels");
}

#[test]
fn softmax_rows() {
    let x = rand_tensor(&[1, 2, 5, 6], 21, -2.0, 2.0);
    let r = fd_check(&[x], |g, v| g.softmax_rows(v[0]));
    assert_gradcheck(r, "softmax_rows");
}

#[test]
fn bmm_both_sides() {
    let a = rand_tensor(&[2, 1, 3, 4], 22, -1.0, 1.0);
    let b = rand_tensor(&[2, 1, 4, 5], 23, -1.0, 1.0);
    let r = fd_check(&[a, b], |g, v| g.bmm(v[0], v[1]));
    assert_gradcheck(r, "bmm");
}

#[test]
fn relu_and_sigmoid() {
    let x = rand_tensor(&[1, 4, 4, 4], 24, -1.0, 1.0);
    let r = fd_check(std::slice::from_ref(&x), |g, v| g.relu(v[0]));
    assert_gradcheck(r, "relu");
    let r = fd_check(&[x], |g, v| g.sigmoid(v[0]));
    assert_gradcheck(r, "sigmoid");
}

#[test]
fn mul_add_scale() {
    let a = rand_tensor(&[1, 3, 4, 4], 25, -1.0, 1.0);
    let b = rand_tensor(&[1, 3, 4, 4], 26, -1.0, 1.0);
    let r = fd_check(&[a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1]);
        let m = g.mul(s, v[1]);
        g.scale(m, -1.7)
    });
    assert_gradcheck(r, "mul/add/scale composition");
}

#[test]
fn concat_and_slice() {
    let a = rand_tensor(&[1, 2, 3, 3], 27, -1.0, 1.0);
    let b = rand_tensor(&[1, 4, 3, 3], 28, -1.0, 1.0);
    let r = fd_check(&[a, b], |g, v| {
        let cat = g.concat_channels(&[v[0], v[1]]);
        let parts = g.split_channels(cat, 3);
        let m = g.mul(parts[0], parts[2]);
        g.add(m, parts[1])
    });
    assert_gradcheck(r, "concat/split");
}

#[test]
fn reshape_and_transpose() {
    let x = rand_tensor(&[1, 2, 3, 4], 29, -1.0, 1.0);
    let r = fd_check(&[x], |g, v| {
        let f = g.reshape(v[0], &[1, 1, 6, 4]);
        let t = g.transpose_last2(f);
        g.reshape(t, &[1, 2, 4, 3])
    });
    assert_gradcheck(r, "reshape/transpose");
}

#[test]
fn weighted_nll_mean_grad() {
    // Predictions bounded away from 0 so the FD step stays in-domain.
    let pred = rand_tensor(&[1, 2, 4, 4], 30, 0.1, 0.9);
    let coeff = rand_tensor(&[1, 2, 4, 4], 31, 0.0, 2.0);
    let mut g = Graph::new();
    let p = g.leaf(pred.clone(), true);
    let loss = g.weighted_nll_mean(p, coeff.clone(), 1e-7);
    g.backward(loss);
    let grads = vec![g.grad(p).expect("pred grad").to_vec()];
    let r = check_against_fd(
        &[pred],
        &grads,
        |ps| {
            let mut g = Graph::new();
            let p = g.leaf(ps[0].clone(), false);
            let loss = g.weighted_nll_mean(p, coeff.clone(), 1e-7);
            g.value(loss).data()[0]
        },
        1e-6,
        SamplePlan::Exhaustive,
    );
    assert_gradcheck(r, "weighted_nll_mean");
}

#[test]
fn attention_composition() {
    // reshape -> transpose -> bmm -> scale -> row softmax -> bmm -> residual.
    let x = rand_tensor(&[1, 4, 3, 3], 32, -1.0, 1.0);
    let q = rand_tensor(&[1, 4, 2, 9], 33, -1.0, 1.0);
    let r = fd_check(&[x.clone(), q], |g, v| {
        let flat = g.reshape(v[0], &[1, 4, 1, 9]);
        let t = g.transpose_last2(flat);
        let logits = g.bmm(t, flat);
        let scaled = g.scale(logits, 0.37);
        let attn = g.softmax_rows(scaled);
        let mixed = g.bmm(v[1], attn);
        g.sigmoid(mixed)
    });
    assert_gradcheck(r, "attention-shaped composition");
}
