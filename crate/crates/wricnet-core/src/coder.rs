//! Encoder-decoder backbone: four pooled down-stages, a spatial-attention
//! bottleneck, and four transposed-conv up-stages with gated skip fusion.
//!
//! The encoder widens at each stage and records the pre-pool feature map as
//! the skip for the mirrored up-stage. The decoder narrows back down and ends
//! at `out_channels`, at the input's full resolution.

use alloc::vec::Vec;

use crate::blocks::{
    conv_block3_params, scale_block_params, scoped, wsb_params, ConvRef, ScaleBlockKind,
    ScaleBlockRef, WsbRef,
};
use crate::graph::{Graph, Var};
use crate::params::ParamBuilder;
use crate::scalar::Scalar;

/// Spatial attention at the bottleneck: queries/keys at `c/8` width, values
/// at full width, residual output.
#[derive(Clone, Debug)]
pub struct SamRef {
    pub q: ConvRef,
    pub k: ConvRef,
    pub v: ConvRef,
    pub channels: usize,
    pub head_dim: usize,
}

pub fn sam_params(pb: &mut ParamBuilder, name: &str, c: usize) -> SamRef {
    assert_eq!(c % 8, 0, "attention width {} not divisible by 8", c);
    let d = c / 8;
    let (qw, qb) = pb.conv(&scoped(name, "q"), c, d, 1);
    let (kw, kb) = pb.conv(&scoped(name, "k"), c, d, 1);
    let (vw, vb) = pb.conv(&scoped(name, "v"), c, c, 1);
    SamRef {
        q: ConvRef { w: qw, b: qb },
        k: ConvRef { w: kw, b: kb },
        v: ConvRef { w: vw, b: vb },
        channels: c,
        head_dim: d,
    }
}

impl SamRef {
    /// `x + reshape(V . softmax(Q^T K / sqrt(d))^T)`; shape preserved.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var) -> Var {
        let (b, c, h, w) = g.value(x).dims4();
        assert_eq!(
            c, self.channels,
            "attention expects {} channels",
            self.channels
        );
        let n = h * w;
        let q = self.q.forward_linear(g, pv, x);
        let k = self.k.forward_linear(g, pv, x);
        let v = self.v.forward_linear(g, pv, x);
        let qf = g.reshape(q, &[b, 1, self.head_dim, n]);
        let kf = g.reshape(k, &[b, 1, self.head_dim, n]);
        let vf = g.reshape(v, &[b, 1, c, n]);
        let qt = g.transpose_last2(qf);
        let logits = g.bmm(qt, kf);
        let inv_sqrt_d = T::one() / T::from_f64(self.head_dim as f64).sqrt();
        let scaled = g.scale(logits, inv_sqrt_d);
        let attn = g.softmax_rows(scaled);
        let attn_t = g.transpose_last2(attn);
        let mixed = g.bmm(vf, attn_t);
        let spatial = g.reshape(mixed, &[b, c, h, w]);
        g.add(x, spatial)
    }
}

/// How the first feature map is built from the two input images.
#[derive(Clone, Debug)]
pub enum PairEntryRef {
    /// One conv over the channel-stacked pair.
    Fused(ConvRef),
    /// One shared conv applied to each image separately, outputs stacked.
    Siamese(ConvRef),
}

/// Registers the entry conv producing `cout` channels from an image pair of
/// `img_c` channels each. The siamese form shares one `img_c -> cout/2` conv.
pub fn pair_entry_params(
    pb: &mut ParamBuilder,
    name: &str,
    img_c: usize,
    cout: usize,
    siamese: bool,
) -> PairEntryRef {
    if siamese {
        assert_eq!(cout % 2, 0, "siamese entry needs an even output width");
        PairEntryRef::Siamese(conv_block3_params(pb, name, img_c, cout / 2))
    } else {
        PairEntryRef::Fused(conv_block3_params(pb, name, 2 * img_c, cout))
    }
}

impl PairEntryRef {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], t1: Var, t2: Var) -> Var {
        match self {
            PairEntryRef::Fused(conv) => {
                let pair = g.concat_channels(&[t1, t2]);
                conv.forward_relu(g, pv, pair)
            }
            PairEntryRef::Siamese(conv) => {
                let f1 = conv.forward_relu(g, pv, t1);
                let f2 = conv.forward_relu(g, pv, t2);
                g.concat_channels(&[f1, f2])
            }
        }
    }
}

/// One encoder stage: optional widening conv (the entry widens stage 1),
/// two scale blocks, then a 2x2 max-pool. The pre-pool map is the skip.
#[derive(Clone, Debug)]
pub struct DownStageRef {
    pub widen: Option<ConvRef>,
    pub blocks: Vec<ScaleBlockRef>,
}

/// One decoder stage: 2x2 transposed conv (linear), skip concat, optional
/// gate on the concat, fusing conv back to the stage width, two scale blocks.
#[derive(Clone, Debug)]
pub struct UpStageRef {
    pub up_w: usize,
    pub up_b: usize,
    pub gate: Option<WsbRef>,
    pub fuse: ConvRef,
    pub blocks: Vec<ScaleBlockRef>,
}

impl UpStageRef {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var, skip: Var) -> Var {
        let up = g.conv_transpose2d(x, pv[self.up_w], pv[self.up_b]);
        let cat = g.concat_channels(&[up, skip]);
        let gated = match &self.gate {
            Some(gate) => gate.forward(g, pv, cat),
            None => cat,
        };
        let mut y = self.fuse.forward_relu(g, pv, gated);
        for block in &self.blocks {
            y = block.forward(g, pv, y);
        }
        y
    }
}

/// Full encoder-decoder over an image pair.
#[derive(Clone, Debug)]
pub struct WrcRef {
    pub entry: PairEntryRef,
    pub down: Vec<DownStageRef>,
    pub sam: SamRef,
    pub up: Vec<UpStageRef>,
    pub out_channels: usize,
}

/// Registers the encoder-decoder. `widths` are the four encoder stage widths
/// (narrow to wide); the decoder mirrors them and ends at `out_c`.
pub fn wrc_params(
    pb: &mut ParamBuilder,
    name: &str,
    img_c: usize,
    widths: &[usize; 4],
    s: usize,
    kind: ScaleBlockKind,
    gated: bool,
    siamese: bool,
) -> WrcRef {
    let entry = pair_entry_params(pb, &scoped(name, "entry"), img_c, widths[0], siamese);
    let down: Vec<DownStageRef> = (0..4)
        .map(|i| {
            let widen = (i > 0).then(|| {
                conv_block3_params(
                    pb,
                    &scoped(name, &alloc::format!("down{i}.widen")),
                    widths[i - 1],
                    widths[i],
                )
            });
            let blocks = (0..2)
                .map(|j| {
                    scale_block_params(
                        pb,
                        &scoped(name, &alloc::format!("down{i}.block{j}")),
                        widths[i],
                        s,
                        kind,
                    )
                })
                .collect();
            DownStageRef { widen, blocks }
        })
        .collect();
    let sam = sam_params(pb, &scoped(name, "attn"), widths[3]);
    let out_c = 2 * img_c;
    let stage_out = [widths[2], widths[1], widths[0], out_c];
    let stage_skip = [widths[3], widths[2], widths[1], widths[0]];
    let mut cin = widths[3];
    let up: Vec<UpStageRef> = (0..4)
        .map(|i| {
            let cout = stage_out[i];
            let cat_c = cout + stage_skip[i];
            let (up_w, up_b) =
                pb.conv_transpose(&scoped(name, &alloc::format!("up{i}.up")), cin, cout);
            let gate =
                gated.then(|| wsb_params(pb, &scoped(name, &alloc::format!("up{i}.gate")), cat_c));
            let fuse = conv_block3_params(
                pb,
                &scoped(name, &alloc::format!("up{i}.fuse")),
                cat_c,
                cout,
            );
            let blocks = (0..2)
                .map(|j| {
                    scale_block_params(
                        pb,
                        &scoped(name, &alloc::format!("up{i}.block{j}")),
                        cout,
                        s,
                        kind,
                    )
                })
                .collect();
            cin = cout;
            UpStageRef {
                up_w,
                up_b,
                gate,
                fuse,
                blocks,
            }
        })
        .collect();
    WrcRef {
        entry,
        down,
        sam,
        up,
        out_channels: out_c,
    }
}

/// Intermediate tensors recorded by [`WrcRef::forward_traced`].
pub struct WrcTrace {
    /// Post-attention bottleneck: 1/16 of the input resolution.
    pub bottleneck: Var,
    /// Pre-pool skip of each encoder stage, shallow to deep.
    pub skips: Vec<Var>,
}

impl WrcRef {
    /// Runs the coder on an image pair; output is `(B, out_channels, H, W)`.
    ///
    /// # Panics
    /// If height or width is not divisible by 16 (four pooling halvings).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], t1: Var, t2: Var) -> Var {
        self.forward_traced(g, pv, t1, t2).0
    }

    /// [`WrcRef::forward`] plus the encoder intermediates, for structural
    /// checks.
    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pv: &[Var],
        t1: Var,
        t2: Var,
    ) -> (Var, WrcTrace) {
        let (_, _, h, w) = g.value(t1).dims4();
        assert_eq!(h % 16, 0, "height {} not divisible by 16", h);
        assert_eq!(w % 16, 0, "width {} not divisible by 16", w);
        let mut x = self.entry.forward(g, pv, t1, t2);
        let mut skips = Vec::with_capacity(4);
        for stage in &self.down {
            if let Some(widen) = &stage.widen {
                x = widen.forward_relu(g, pv, x);
            }
            for block in &stage.blocks {
                x = block.forward(g, pv, x);
            }
            skips.push(x);
            x = g.maxpool2x2(x);
        }
        x = self.sam.forward(g, pv, x);
        let bottleneck = x;
        for (i, stage) in self.up.iter().enumerate() {
            let skip = skips[skips.len() - 1 - i];
            x = stage.forward(g, pv, x, skip);
        }
        (x, WrcTrace { bottleneck, skips })
    }
}
