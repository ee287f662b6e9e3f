//! Reduced-width finite-difference audit of every architectural block.
//!
//! This is the product-facing gradient check behind the `gradcheck` command
//! and the release gate: six named sweeps (the four blocks, the whole coder,
//! the whole model) at 1/8 width on small inputs, each comparing analytic
//! gradients against central differences at 64-bit precision. The two deep
//! sweeps perturb parameters off their init symmetries first and use the
//! kink-filtered comparison, since a relu stack that deep will occasionally
//! straddle a non-smooth point.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::blocks::{scale_block_params, wri_params, wsb_params, ScaleBlockKind};
use crate::coder::{sam_params, wrc_params};
use crate::gradcheck::{check_against_fd, check_against_fd_filtered, GradReport, SamplePlan};
use crate::graph::{Graph, Var};
use crate::model::{Model, ModelConfig};
use crate::params::{ParamSpec, ParamStore};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

/// One named sweep's outcome.
#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub name: &'static str,
    pub report: GradReport,
}

impl BlockCheck {
    #[must_use]
    pub fn passes(&self, tol: f64) -> bool {
        self.report.passes(tol)
    }
}

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data)
}

/// Moves every tensor off its init symmetry: small noise on weights, small
/// positive biases so relus start alive. Plain uniform re-draws would blow up
/// activations through the deep stacks and saturate the attention softmax.
pub fn perturb_off_init<T: crate::Scalar>(store: &mut ParamStore<T>, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for i in 0..store.specs().len() {
        let is_bias = store.specs()[i].name.ends_with(".bias");
        let data: Vec<T> = store
            .tensor(i)
            .data()
            .iter()
            .map(|&v| {
                if is_bias {
                    T::from_f64(rng.gen_range(0.02..0.10))
                } else {
                    v + T::from_f64(rng.gen_range(-0.05..0.05))
                }
            })
            .collect();
        store.load_data(i, &data);
    }
}

/// FD-checks d(random projection of outputs)/d(params, inputs) where `build`
/// maps bound parameter vars plus the trailing input vars to output vars.
fn sweep(
    tensors: Vec<Tensor<f64>>,
    n_inputs: usize,
    build: impl Fn(&mut Graph<f64>, &[Var], &[Var]) -> Vec<Var>,
    plan: SamplePlan,
    filtered: bool,
) -> GradReport {
    let probe = |g: &mut Graph<f64>, ts: &[Tensor<f64>], trainable: bool| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        let (pv, xs) = vars.split_at(vars.len() - n_inputs);
        let outs = build(g, pv, xs);
        let mut loss = None;
        for (k, &out) in outs.iter().enumerate() {
            let coeff = rand_tensor(g.value(out).shape(), 0xC0EFF + k as u64, -1.0, 1.0);
            let c = g.constant(coeff);
            let prod = g.mul(out, c);
            let term = g.sum_all(prod);
            loss = Some(match loss {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        (loss.expect("at least one output"), vars)
    };

    let mut g = Graph::new();
    let (loss, vars) = probe(&mut g, &tensors, true);
    g.backward(loss);
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; tensors[i].numel()])
        })
        .collect();
    let eval = |ts: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let (loss, _) = probe(&mut g, ts, false);
        g.value(loss).data()[0]
    };
    if filtered {
        check_against_fd_filtered(&tensors, &grads, eval, 1e-5, plan)
    } else {
        check_against_fd(&tensors, &grads, eval, 1e-5, plan)
    }
}

fn shallow_tensors(specs: Vec<ParamSpec>, input: Tensor<f64>, seed: u64) -> Vec<Tensor<f64>> {
    let mut store = ParamStore::<f64>::init(specs, 0);
    store.randomize_uniform(seed, -0.7, 0.7);
    let mut tensors: Vec<Tensor<f64>> = store.tensors().to_vec();
    tensors.push(input);
    tensors
}

fn check_weighted_scale(seed: u64) -> GradReport {
    let mut pb = crate::params::ParamBuilder::new();
    let wsb = wsb_params(&mut pb, "wsb", 6);
    sweep(
        shallow_tensors(
            pb.finish(),
            rand_tensor(&[1, 6, 4, 4], seed, -1.0, 1.0),
            seed ^ 1,
        ),
        1,
        move |g, pv, xs| alloc::vec![wsb.forward(g, pv, xs[0])],
        SamplePlan::Exhaustive,
        false,
    )
}

fn check_rich_scale(seed: u64) -> GradReport {
    let mut pb = crate::params::ParamBuilder::new();
    let block = scale_block_params(&mut pb, "rsb", 8, 4, ScaleBlockKind::Rich);
    sweep(
        shallow_tensors(
            pb.finish(),
            rand_tensor(&[1, 8, 5, 5], seed, -1.0, 1.0),
            seed ^ 1,
        ),
        1,
        move |g, pv, xs| alloc::vec![block.forward(g, pv, xs[0])],
        SamplePlan::Exhaustive,
        false,
    )
}

fn check_inception(seed: u64) -> GradReport {
    let mut pb = crate::params::ParamBuilder::new();
    let wri = wri_params(&mut pb, "wri", 8, 4, 4, ScaleBlockKind::Rich, true, false);
    sweep(
        shallow_tensors(
            pb.finish(),
            rand_tensor(&[1, 8, 4, 4], seed, -1.0, 1.0),
            seed ^ 1,
        ),
        1,
        move |g, pv, xs| alloc::vec![wri.forward(g, pv, xs[0]).fused],
        SamplePlan::Exhaustive,
        false,
    )
}

fn check_attention(seed: u64) -> GradReport {
    let mut pb = crate::params::ParamBuilder::new();
    let sam = sam_params(&mut pb, "attn", 8);
    sweep(
        shallow_tensors(
            pb.finish(),
            rand_tensor(&[1, 8, 3, 3], seed, -1.0, 1.0),
            seed ^ 1,
        ),
        1,
        move |g, pv, xs| alloc::vec![sam.forward(g, pv, xs[0])],
        SamplePlan::Exhaustive,
        false,
    )
}

fn check_coder(seed: u64) -> GradReport {
    let mut pb = crate::params::ParamBuilder::new();
    let wrc = wrc_params(
        &mut pb,
        "coder",
        3,
        &[4, 8, 16, 32],
        4,
        ScaleBlockKind::Rich,
        true,
        false,
    );
    let mut store = ParamStore::<f64>::init(pb.finish(), 0);
    perturb_off_init(&mut store, seed ^ 1);
    let mut tensors: Vec<Tensor<f64>> = store.tensors().to_vec();
    tensors.push(rand_tensor(&[1, 3, 16, 16], seed ^ 2, 0.0, 1.0));
    tensors.push(rand_tensor(&[1, 3, 16, 16], seed ^ 3, 0.0, 1.0));
    sweep(
        tensors,
        2,
        move |g, pv, xs| alloc::vec![wrc.forward(g, pv, xs[0], xs[1])],
        SamplePlan::PerTensor {
            per_tensor: 2,
            seed: seed ^ 4,
        },
        true,
    )
}

fn check_model(seed: u64) -> Result<GradReport, String> {
    let cfg = ModelConfig {
        width_scale: 0.125,
        ..ModelConfig::default()
    };
    let mut model: Model<f64> = Model::new(cfg, seed)?;
    perturb_off_init(&mut model.store, seed ^ 1);
    let mut tensors: Vec<Tensor<f64>> = model.store.tensors().to_vec();
    tensors.push(rand_tensor(&[1, 3, 16, 16], seed ^ 2, 0.0, 1.0));
    tensors.push(rand_tensor(&[1, 3, 16, 16], seed ^ 3, 0.0, 1.0));
    Ok(sweep(
        tensors,
        2,
        move |g, pv, xs| model.forward(g, pv, xs[0], xs[1]).all().to_vec(),
        SamplePlan::PerTensor {
            per_tensor: 2,
            seed: seed ^ 4,
        },
        true,
    ))
}

/// Runs all six sweeps. Deterministic in `seed`.
pub fn full_suite(seed: u64) -> Result<Vec<BlockCheck>, String> {
    Ok(alloc::vec![
        BlockCheck {
            name: "weighted_scale",
            report: check_weighted_scale(seed.wrapping_add(0x10)),
        },
        BlockCheck {
            name: "rich_scale",
            report: check_rich_scale(seed.wrapping_add(0x20)),
        },
        BlockCheck {
            name: "inception",
            report: check_inception(seed.wrapping_add(0x30)),
        },
        BlockCheck {
            name: "attention",
            report: check_attention(seed.wrapping_add(0x40)),
        },
        BlockCheck {
            name: "coder",
            report: check_coder(seed.wrapping_add(0x50)),
        },
        BlockCheck {
            name: "model",
            report: check_model(seed.wrapping_add(0x60))?,
        },
    ])
}
