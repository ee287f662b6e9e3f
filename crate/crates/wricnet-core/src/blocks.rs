//! Network building blocks: weighted scale block, rich-scale block, and the
//! weighted rich-scale inception module.
//!
//! Each block is a pair: a `*_params` constructor that registers tensors with
//! a [`ParamBuilder`] and returns a `*Ref` of parameter ids, and a `forward`
//! that replays the block on a [`Graph`] given the bound parameter handles.
//! Blocks never change `(batch, channels, height, width)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{Graph, Padding, Var};
use crate::params::{Init, ParamBuilder};
use crate::scalar::Scalar;

/// Epsilon used by every layer normalization in the network.
pub const LN_EPS: f64 = 1e-5;

/// Weight + bias handle for one convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvRef {
    pub w: usize,
    pub b: usize,
}

/// 3x3 / stride 1 / same / relu convolution block.
pub fn conv_block3_params(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize) -> ConvRef {
    let (w, b) = pb.conv(name, cin, cout, 3);
    ConvRef { w, b }
}

/// 1x1 / stride 1 / same / relu convolution block.
pub fn conv_block2_params(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize) -> ConvRef {
    let (w, b) = pb.conv(name, cin, cout, 1);
    ConvRef { w, b }
}

impl ConvRef {
    /// Convolution followed by relu.
    pub fn forward_relu<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var) -> Var {
        let y = g.conv2d(x, pv[self.w], pv[self.b], 1, Padding::Same);
        g.relu(y)
    }

    /// Convolution without activation.
    pub fn forward_linear<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var) -> Var {
        g.conv2d(x, pv[self.w], pv[self.b], 1, Padding::Same)
    }
}

/// Weighted scale block: `x * sigmoid(LN2(conv1x1(LN1(x))))`.
///
/// The 1x1 convolution starts at all ones (bias zero), layer norms start at
/// gamma 1 / beta 0, so the initial gate is spatially uniform 0.5.
#[derive(Clone, Debug)]
pub struct WsbRef {
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub conv: ConvRef,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
    pub channels: usize,
}

pub fn wsb_params(pb: &mut ParamBuilder, name: &str, c: usize) -> WsbRef {
    let ln1_gamma = pb.add(format!("{name}.ln1.gamma"), &[c], Init::Ones);
    let ln1_beta = pb.add(format!("{name}.ln1.beta"), &[c], Init::Zeros);
    let w = pb.add(format!("{name}.conv.weight"), &[c, c, 1, 1], Init::Ones);
    let b = pb.add(format!("{name}.conv.bias"), &[c], Init::Zeros);
    let ln2_gamma = pb.add(format!("{name}.ln2.gamma"), &[c], Init::Ones);
    let ln2_beta = pb.add(format!("{name}.ln2.beta"), &[c], Init::Zeros);
    WsbRef {
        ln1_gamma,
        ln1_beta,
        conv: ConvRef { w, b },
        ln2_gamma,
        ln2_beta,
        channels: c,
    }
}

impl WsbRef {
    /// Gates `x` by its own attention map; output shape equals input shape.
    ///
    /// # Panics
    /// If `x`'s channel count differs from the block's.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var) -> Var {
        assert_eq!(
            g.value(x).dims4().1,
            self.channels,
            "weighted scale block expects {} channels",
            self.channels
        );
        let eps = T::from_f64(LN_EPS);
        let n1 = g.layer_norm(x, pv[self.ln1_gamma], pv[self.ln1_beta], eps);
        let c = self.conv.forward_linear(g, pv, n1);
        let n2 = g.layer_norm(c, pv[self.ln2_gamma], pv[self.ln2_beta], eps);
        let gate = g.sigmoid(n2);
        g.mul(x, gate)
    }
}

/// Largest divisor of `c` that is at most `s_max`; the effective group count
/// when a grouped block is instantiated at `c` channels.
pub fn adapted_groups(c: usize, s_max: usize) -> usize {
    let cap = s_max.min(c).max(1);
    (1..=cap).rev().find(|s| c % s == 0).unwrap_or(1)
}

/// Which multi-scale wiring a scale-block site uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleBlockKind {
    /// Channel groups; group `i` (1-based) passes through `i-1` stacked
    /// conv-block-3 stages, group 1 is an identity path.
    Rich,
    /// Hierarchical-fusion wiring: one conv-block-3 per group `i >= 2`,
    /// consuming `x_i + y_{i-1}`.
    Res2Net,
    /// A single conv-block-3 at full width.
    SingleConv,
}

/// Multi-scale block over `s` channel groups (or its two ablation wirings).
#[derive(Clone, Debug)]
pub enum ScaleBlockRef {
    Rich {
        groups: usize,
        convs: Vec<Vec<ConvRef>>,
    },
    Res2Net {
        groups: usize,
        convs: Vec<ConvRef>,
    },
    SingleConv(ConvRef),
}

/// Registers one scale-block site at `c` channels. For the grouped kinds the
/// effective group count adapts to the largest divisor of `c` not exceeding
/// `s`.
pub fn scale_block_params(
    pb: &mut ParamBuilder,
    name: &str,
    c: usize,
    s: usize,
    kind: ScaleBlockKind,
) -> ScaleBlockRef {
    match kind {
        ScaleBlockKind::Rich => {
            let groups = adapted_groups(c, s);
            let gw = c / groups;
            let convs = (0..groups)
                .map(|i| {
                    (0..i)
                        .map(|j| {
                            conv_block3_params(pb, &format!("{name}.group{i}.conv{j}"), gw, gw)
                        })
                        .collect()
                })
                .collect();
            ScaleBlockRef::Rich { groups, convs }
        }
        ScaleBlockKind::Res2Net => {
            let groups = adapted_groups(c, s);
            let gw = c / groups;
            let convs = (1..groups)
                .map(|i| conv_block3_params(pb, &format!("{name}.group{i}.conv"), gw, gw))
                .collect();
            ScaleBlockRef::Res2Net { groups, convs }
        }
        ScaleBlockKind::SingleConv => {
            ScaleBlockRef::SingleConv(conv_block3_params(pb, &format!("{name}.conv"), c, c))
        }
    }
}

impl ScaleBlockRef {
    /// Applies the block; output shape equals input shape.
    ///
    /// # Panics
    /// If the channel count is not divisible by the group count.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var) -> Var {
        match self {
            ScaleBlockRef::Rich { groups, convs } => {
                let parts = g.split_channels(x, *groups);
                let mut outs = Vec::with_capacity(*groups);
                for (i, part) in parts.iter().enumerate() {
                    let mut y = *part;
                    for conv in &convs[i] {
                        y = conv.forward_relu(g, pv, y);
                    }
                    outs.push(y);
                }
                g.concat_channels(&outs)
            }
            ScaleBlockRef::Res2Net { groups, convs } => {
                let parts = g.split_channels(x, *groups);
                let mut outs = Vec::with_capacity(*groups);
                let mut prev = parts[0];
                outs.push(parts[0]);
                for i in 1..*groups {
                    let summed = g.add(parts[i], prev);
                    let y = convs[i - 1].forward_relu(g, pv, summed);
                    outs.push(y);
                    prev = y;
                }
                g.concat_channels(&outs)
            }
            ScaleBlockRef::SingleConv(conv) => conv.forward_relu(g, pv, x),
        }
    }
}

/// How the inception branches are connected.
#[derive(Clone, Debug)]
pub enum WriWiring {
    /// Branch 1 is a 1x1 conv-block; branch `k >= 2` applies one scale block
    /// to branch `k-1`'s pre-gating output.
    Chained {
        branch1: ConvRef,
        chain: Vec<ScaleBlockRef>,
    },
    /// Every branch consumes the module input directly: branch `k >= 2`
    /// stacks `k-1` scale blocks at module width, then reduces 1x1 to the
    /// branch width.
    Parallel {
        branch1: ConvRef,
        branches: Vec<ParallelBranchRef>,
    },
}

/// One parallel inception branch: full-width scale blocks, then a reduction.
#[derive(Clone, Debug)]
pub struct ParallelBranchRef {
    pub blocks: Vec<ScaleBlockRef>,
    pub proj: ConvRef,
}

/// Weighted rich-scale inception module: `branches` branches of width
/// `C / branches`, each optionally gated by a weighted scale block, outputs
/// concatenated back to `C` channels.
#[derive(Clone, Debug)]
pub struct WriRef {
    pub wiring: WriWiring,
    pub gates: Option<Vec<WsbRef>>,
    pub channels: usize,
    pub branches: usize,
}

/// Output of the inception module: the fused map plus each branch's gated
/// feature (pre-gating when gates are ablated).
pub struct WriOut {
    pub fused: Var,
    pub per_branch_weighted: Vec<Var>,
}

/// Registers an inception module at `c` channels.
///
/// `parallel` selects the independent-branch wiring; `gated` registers one
/// weighted scale block per branch.
///
/// # Panics
/// If `c` is not divisible by `branches`.
pub fn wri_params(
    pb: &mut ParamBuilder,
    name: &str,
    c: usize,
    branches: usize,
    s: usize,
    kind: ScaleBlockKind,
    gated: bool,
    parallel: bool,
) -> WriRef {
    assert!(branches >= 2, "inception module needs at least 2 branches");
    assert_eq!(
        c % branches,
        0,
        "inception module: {} channels not divisible by {} branches",
        c,
        branches
    );
    let bw = c / branches;
    let wiring = if parallel {
        let branch1 = conv_block2_params(pb, &format!("{name}.branch0.reduce"), c, bw);
        let branches_ref = (1..branches)
            .map(|k| {
                let blocks = (0..k)
                    .map(|j| {
                        scale_block_params(pb, &format!("{name}.branch{k}.block{j}"), c, s, kind)
                    })
                    .collect();
                let proj = conv_block2_params(pb, &format!("{name}.branch{k}.reduce"), c, bw);
                ParallelBranchRef { blocks, proj }
            })
            .collect();
        WriWiring::Parallel {
            branch1,
            branches: branches_ref,
        }
    } else {
        let branch1 = conv_block2_params(pb, &format!("{name}.branch0.conv"), c, bw);
        let chain = (1..branches)
            .map(|k| scale_block_params(pb, &format!("{name}.branch{k}.block"), bw, s, kind))
            .collect();
        WriWiring::Chained { branch1, chain }
    };
    let gates = gated.then(|| {
        (0..branches)
            .map(|k| wsb_params(pb, &format!("{name}.gate{k}"), bw))
            .collect()
    });
    WriRef {
        wiring,
        gates,
        channels: c,
        branches,
    }
}

impl WriRef {
    /// Runs the module; the fused output has the input's exact shape.
    ///
    /// # Panics
    /// If `x`'s channel count differs from the module's.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var) -> WriOut {
        assert_eq!(
            g.value(x).dims4().1,
            self.channels,
            "inception module expects {} channels",
            self.channels
        );
        let mut pre: Vec<Var> = Vec::with_capacity(self.branches);
        match &self.wiring {
            WriWiring::Chained { branch1, chain } => {
                let mut cur = branch1.forward_relu(g, pv, x);
                pre.push(cur);
                for block in chain {
                    cur = block.forward(g, pv, cur);
                    pre.push(cur);
                }
            }
            WriWiring::Parallel { branch1, branches } => {
                pre.push(branch1.forward_relu(g, pv, x));
                for branch in branches {
                    let mut y = x;
                    for block in &branch.blocks {
                        y = block.forward(g, pv, y);
                    }
                    pre.push(branch.proj.forward_relu(g, pv, y));
                }
            }
        }
        let weighted: Vec<Var> = match &self.gates {
            Some(gates) => pre
                .iter()
                .zip(gates)
                .map(|(&b, gate)| gate.forward(g, pv, b))
                .collect(),
            None => pre.clone(),
        };
        let fused = g.concat_channels(&weighted);
        WriOut {
            fused,
            per_branch_weighted: weighted,
        }
    }
}

/// Scope helper: `prefix.suffix` names without repeated format boilerplate.
pub fn scoped(prefix: &str, suffix: &str) -> String {
    format!("{prefix}.{suffix}")
}
