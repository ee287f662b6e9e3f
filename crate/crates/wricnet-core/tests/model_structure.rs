//! Structural contracts of the assembled network: output shapes and
//! distributions, encoder trace shapes, gradient flow into every parameter,
//! and a sampled finite-difference check of the whole backward pass.

use wricnet_core::gradcheck::{check_against_fd_filtered, SamplePlan};
use wricnet_core::graph::{Graph, Var};
use wricnet_core::model::{count_params, model_params, Model, ModelConfig, Variant};
use wricnet_core::rng::rng_from_seed;
use wricnet_core::Tensor;

use rand::Rng;

fn small_cfg(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        width_scale: 0.125,
        ..ModelConfig::default()
    }
}

fn rand_image(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(shape, data)
}

fn rand_coeff(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data)
}

/// Fresh init sits at two degenerate points: the all-ones gate convs make the
/// second layer-norm's scale provably gradient-free, and zero biases leave
/// relus half dead. Small noise on the weights plus small positive biases
/// breaks both while keeping activations at unit scale, so the attention
/// softmax stays unsaturated and a zero gradient can only mean a structural
/// break.
fn liven_params(model: &mut Model<f64>, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for i in 0..model.store.specs().len() {
        let is_bias = model.store.specs()[i].name.ends_with(".bias");
        let data: Vec<f64> = model
            .store
            .tensor(i)
            .data()
            .iter()
            .map(|&v| {
                if is_bias {
                    rng.gen_range(0.02..0.10)
                } else {
                    v + rng.gen_range(-0.05..0.05)
                }
            })
            .collect();
        model.store.load_data(i, &data);
    }
}

/// Sum of random projections of all five outputs; touches every head.
fn projected_loss(g: &mut Graph<f64>, outs: &[Var; 5]) -> Var {
    let mut total = None;
    for (k, &out) in outs.iter().enumerate() {
        let coeff = rand_coeff(g.value(out).shape(), 0xFACE + k as u64);
        let c = g.constant(coeff);
        let prod = g.mul(out, c);
        let term = g.sum_all(prod);
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term),
        });
    }
    total.expect("five outputs should produce a loss")
}

#[test]
fn output_and_trace_shapes_hold_across_sizes() {
    let model = Model::<f64>::new(small_cfg(Variant::Proposed), 11).expect("valid config");
    let widths = model.config.encoder_widths();
    assert_eq!(widths, [4, 8, 16, 32]);
    for (b, h, w) in [(1usize, 16usize, 16usize), (2, 16, 16), (1, 32, 48)] {
        let mut g = Graph::new();
        let pv = model.bind(&mut g, false);
        let t1 = g.constant(rand_image(&[b, 3, h, w], 7));
        let t2 = g.constant(rand_image(&[b, 3, h, w], 8));
        let outs = model.forward(&mut g, &pv, t1, t2);
        for out in outs.all() {
            assert_eq!(g.value(out).shape(), &[b, 2, h, w]);
            // Each pixel's two class scores form a distribution.
            let t = g.value(out);
            let d = t.data();
            let plane = h * w;
            for n in 0..b {
                for i in 0..plane {
                    let p0 = d[n * 2 * plane + i];
                    let p1 = d[n * 2 * plane + plane + i];
                    assert!((p0 + p1 - 1.0).abs() < 1e-9, "sum {} at pixel {i}", p0 + p1);
                    assert!(p0 >= 0.0 && p1 >= 0.0);
                }
            }
        }
        let (_, trace) = model.refs.coder.forward_traced(&mut g, &pv, t1, t2);
        assert_eq!(g.value(trace.bottleneck).shape(), &[b, 32, h / 16, w / 16]);
        let skip_shapes: Vec<Vec<usize>> = trace
            .skips
            .iter()
            .map(|&s| g.value(s).shape().to_vec())
            .collect();
        let expect: Vec<Vec<usize>> = (0..4).map(|i| vec![b, widths[i], h >> i, w >> i]).collect();
        assert_eq!(skip_shapes, expect);
    }
}

#[test]
fn parameter_names_are_unique_per_variant() {
    for &variant in &Variant::ALL {
        let cfg = ModelConfig {
            variant,
            ..ModelConfig::default()
        };
        let (_, specs) = model_params(&cfg);
        let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(
            names.len(),
            total,
            "duplicate parameter name in {}",
            variant.as_str()
        );
    }
}

#[test]
fn registered_scalars_match_declared_count() {
    for &variant in &Variant::ALL {
        let cfg = small_cfg(variant);
        let model = Model::<f64>::new(cfg.clone(), 3).expect("valid config");
        let declared = count_params(&cfg).expect("countable config");
        assert_eq!(
            model.store.total_scalars(),
            declared,
            "{}",
            variant.as_str()
        );
        let mut g = Graph::new();
        let pv = model.bind(&mut g, true);
        let bound: u64 = pv.iter().map(|&v| g.value(v).numel() as u64).sum();
        assert_eq!(bound, declared, "{}", variant.as_str());
    }
}

/// With randomized parameters, backward from a random projection of all five
/// outputs must reach every parameter tensor of every variant. Run at 32x32
/// so the attention matrix is non-degenerate (a 1x1 bottleneck would make the
/// query/key projections provably gradient-free).
#[test]
fn every_parameter_receives_gradient() {
    for &variant in &Variant::ALL {
        let mut model = Model::<f64>::new(small_cfg(variant), 5).expect("valid config");
        liven_params(&mut model, 21);
        let mut g = Graph::new();
        let pv = model.bind(&mut g, true);
        let t1 = g.constant(rand_image(&[1, 3, 32, 32], 22));
        let t2 = g.constant(rand_image(&[1, 3, 32, 32], 23));
        let outs = model.forward(&mut g, &pv, t1, t2);
        let loss = projected_loss(&mut g, &outs.all());
        g.backward(loss);
        for (i, &v) in pv.iter().enumerate() {
            let spec_name = &model.store.specs()[i].name;
            let grad = g
                .grad(v)
                .unwrap_or_else(|| panic!("{}: no gradient for {spec_name}", variant.as_str()));
            assert!(
                grad.iter().any(|&x| x != 0.0),
                "{}: gradient of {spec_name} is identically zero",
                variant.as_str()
            );
        }
    }
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let mut model = Model::<f64>::new(small_cfg(Variant::Proposed), 9).expect("valid config");
    liven_params(&mut model, 31);
    let mut tensors: Vec<Tensor<f64>> = model.store.tensors().to_vec();
    tensors.push(rand_image(&[1, 3, 16, 16], 32));
    tensors.push(rand_image(&[1, 3, 16, 16], 33));

    let probe = |g: &mut Graph<f64>, ts: &[Tensor<f64>], trainable: bool| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        let n = vars.len();
        let outs = model.forward(g, &vars[..n - 2], vars[n - 2], vars[n - 1]);
        (projected_loss(g, &outs.all()), vars)
    };

    let mut g = Graph::new();
    let (loss, vars) = probe(&mut g, &tensors, true);
    g.backward(loss);
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; tensors[i].numel()])
        })
        .collect();
    // Self-consistency filtering: relu networks have kinks, and a sampled
    // probe occasionally lands where the FD window straddles one. Those
    // coordinates are skipped (bounded below), not compared.
    let report = check_against_fd_filtered(
        &tensors,
        &grads,
        |ts| {
            let mut g = Graph::new();
            let (loss, _) = probe(&mut g, ts, false);
            g.value(loss).data()[0]
        },
        1e-5,
        SamplePlan::PerTensor {
            per_tensor: 2,
            seed: 97,
        },
    );
    assert!(
        report.passes(1e-4),
        "max rel err {:.3e} over {} sampled coords, worst {:?}",
        report.max_rel_err,
        report.checked,
        report.worst
    );
    assert!(
        report.checked >= 500,
        "only {} coords survived filtering",
        report.checked
    );
    assert!(
        report.skipped * 50 <= report.checked,
        "{} of {} coords were kink-grazed; expected under 2%",
        report.skipped,
        report.checked
    );
}
