//! Full change-detection network: a shallow inception path and a deep
//! encoder-decoder path over the same image pair, gated feature maps from
//! each, and a densely connected metric head fusing both.
//!
//! The network emits five per-pixel two-class distributions: one per path
//! before and after gating, plus the fused head that serves as the final
//! prediction.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::blocks::{
    conv_block2_params, conv_block3_params, scoped, wri_params, wsb_params, ConvRef,
    ScaleBlockKind, WriRef, WsbRef,
};
use crate::coder::{pair_entry_params, wrc_params, PairEntryRef, WrcRef};
use crate::graph::{Graph, Var};
use crate::params::{ParamBuilder, ParamSpec, ParamStore};
use crate::scalar::Scalar;

const BASE_WIDTHS: [usize; 4] = [32, 64, 128, 256];
const BASE_WRI_WIDTH: usize = 256;
const BASE_METRIC_GROWTH: usize = 149;

/// Network variant: the full model or one ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Proposed,
    /// Uniform class weights in the loss; architecture unchanged.
    NoWeightedClass,
    /// Shared per-image entry convs instead of convs over the stacked pair.
    NoMultiChannel,
    /// All gating blocks removed; gated outputs collapse onto ungated ones.
    NoWeightedScaleBlock,
    /// Inception branches run in parallel at module width instead of chained
    /// at branch width.
    NoInceptionV2,
    /// Every multi-scale block replaced by a single full-width conv.
    NoRichScaleBlock,
    /// Multi-scale blocks use hierarchical-fusion wiring (one conv per later
    /// group) instead of stacked per-group convs.
    NoRichScaleBlockV2,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Proposed,
        Variant::NoWeightedClass,
        Variant::NoMultiChannel,
        Variant::NoWeightedScaleBlock,
        Variant::NoInceptionV2,
        Variant::NoRichScaleBlock,
        Variant::NoRichScaleBlockV2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::NoWeightedClass => "no_weighted_class",
            Variant::NoMultiChannel => "no_multi_channel",
            Variant::NoWeightedScaleBlock => "no_weighted_scale_block",
            Variant::NoInceptionV2 => "no_inception_v2",
            Variant::NoRichScaleBlock => "no_rich_scale_block",
            Variant::NoRichScaleBlockV2 => "no_rich_scale_block_v2",
        }
    }

    pub fn parse(s: &str) -> Result<Variant, String> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                format!("unknown variant '{s}'; expected one of {names:?}")
            })
    }

    /// Gating blocks present (skip gates, branch gates, feature-map gates).
    pub fn gated(self) -> bool {
        !matches!(self, Variant::NoWeightedScaleBlock)
    }

    /// Entry convs shared across the two images.
    pub fn siamese(self) -> bool {
        matches!(self, Variant::NoMultiChannel)
    }

    /// Inception branches independent rather than chained.
    pub fn parallel_inception(self) -> bool {
        matches!(self, Variant::NoInceptionV2)
    }

    pub fn scale_kind(self) -> ScaleBlockKind {
        match self {
            Variant::NoRichScaleBlock => ScaleBlockKind::SingleConv,
            Variant::NoRichScaleBlockV2 => ScaleBlockKind::Res2Net,
            _ => ScaleBlockKind::Rich,
        }
    }

    /// Class-frequency weighting active in the loss.
    pub fn weighted_class(self) -> bool {
        !matches!(self, Variant::NoWeightedClass)
    }
}

/// Architecture hyperparameters. Widths derive from `width_scale` applied to
/// the full-size stage widths 32/64/128/256 (and 256 for the inception
/// module); the two feature maps stay at `2 * img_channels` regardless.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub width_scale: f64,
    pub img_channels: usize,
    pub scale_groups: usize,
    pub branches: usize,
    pub metric_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Proposed,
            width_scale: 1.0,
            img_channels: 3,
            scale_groups: 4,
            branches: 4,
            metric_depth: 3,
        }
    }
}

impl ModelConfig {
    fn scaled(&self, base: usize) -> usize {
        Float::round(base as f64 * self.width_scale) as usize
    }

    fn scaled_exact(&self, base: usize, what: &str) -> Result<usize, String> {
        let raw = base as f64 * self.width_scale;
        let rounded = Float::round(raw);
        if (raw - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(format!(
                "width_scale {} turns {what} width {base} into {raw}, not a positive integer",
                self.width_scale
            ));
        }
        Ok(rounded as usize)
    }

    pub fn encoder_widths(&self) -> [usize; 4] {
        [
            self.scaled(BASE_WIDTHS[0]),
            self.scaled(BASE_WIDTHS[1]),
            self.scaled(BASE_WIDTHS[2]),
            self.scaled(BASE_WIDTHS[3]),
        ]
    }

    pub fn wri_width(&self) -> usize {
        self.scaled(BASE_WRI_WIDTH)
    }

    /// Growth of the metric head, scaled with the rest of the network but
    /// never below 1.
    pub fn metric_growth(&self) -> usize {
        self.scaled(BASE_METRIC_GROWTH).max(1)
    }

    /// Width of each path's feature map (and half the metric head's input).
    pub fn feature_channels(&self) -> usize {
        2 * self.img_channels
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.img_channels == 0 {
            return Err("img_channels must be at least 1".into());
        }
        if self.branches < 2 {
            return Err("branches must be at least 2".into());
        }
        if self.scale_groups == 0 {
            return Err("scale_groups must be at least 1".into());
        }
        if self.metric_depth == 0 {
            return Err("metric_depth must be at least 1".into());
        }
        if !(self.width_scale > 0.0) {
            return Err(format!(
                "width_scale must be positive, got {}",
                self.width_scale
            ));
        }
        for base in BASE_WIDTHS {
            self.scaled_exact(base, "encoder")?;
        }
        let w = self.scaled_exact(BASE_WRI_WIDTH, "inception")?;
        if w % self.branches != 0 {
            return Err(format!(
                "inception width {w} not divisible by {} branches",
                self.branches
            ));
        }
        let bottleneck = self.scaled(BASE_WIDTHS[3]);
        if bottleneck % 8 != 0 {
            return Err(format!(
                "bottleneck width {bottleneck} not divisible by 8 (attention head width)"
            ));
        }
        if self.variant.siamese() && self.scaled(BASE_WIDTHS[0]) % 2 != 0 {
            return Err("siamese entry needs the first stage width to be even".into());
        }
        Ok(())
    }
}

/// Densely connected metric head: `depth` conv stages of `growth` channels,
/// each consuming the input plus every earlier stage, then a 1x1 projection
/// to two classes and a channel softmax.
#[derive(Clone, Debug)]
pub struct MetricRef {
    pub stages: Vec<ConvRef>,
    pub head: ConvRef,
    pub in_channels: usize,
}

pub fn metric_params(
    pb: &mut ParamBuilder,
    name: &str,
    in_c: usize,
    depth: usize,
    growth: usize,
) -> MetricRef {
    let mut stages = Vec::with_capacity(depth);
    let mut c = in_c;
    for i in 0..depth {
        stages.push(conv_block3_params(
            pb,
            &scoped(name, &format!("stage{i}")),
            c,
            growth,
        ));
        c += growth;
    }
    let head = conv_block2_params(pb, &scoped(name, "head"), c, 2);
    MetricRef {
        stages,
        head,
        in_channels: in_c,
    }
}

impl MetricRef {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &[Var], x: Var) -> Var {
        let mut feats = alloc::vec![x];
        for stage in &self.stages {
            let cat = if feats.len() == 1 {
                feats[0]
            } else {
                g.concat_channels(&feats)
            };
            feats.push(stage.forward_relu(g, pv, cat));
        }
        let cat = g.concat_channels(&feats);
        let logits = self.head.forward_linear(g, pv, cat);
        g.softmax_channels(logits)
    }
}

/// Parameter handles for the whole network, in checkpoint order.
#[derive(Clone, Debug)]
pub struct ModelRefs {
    pub stem: PairEntryRef,
    pub wri: WriRef,
    pub smf_proj: ConvRef,
    pub smf_gate: Option<WsbRef>,
    pub coder: WrcRef,
    pub dmf_gate: Option<WsbRef>,
    pub head_ri: ConvRef,
    pub head_wri: Option<ConvRef>,
    pub head_ed: ConvRef,
    pub head_wed: Option<ConvRef>,
    pub metric: MetricRef,
}

/// The five per-pixel class distributions, each `(B, 2, H, W)` with channel 0
/// = non-change and channel 1 = change.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutputs {
    /// Shallow path, ungated features.
    pub i_ri: Var,
    /// Shallow path, gated features.
    pub i_wri: Var,
    /// Deep path, ungated features.
    pub i_ed: Var,
    /// Deep path, gated features.
    pub i_wed: Var,
    /// Fused metric head; the final prediction.
    pub i_fu: Var,
}

impl ModelOutputs {
    pub fn all(&self) -> [Var; 5] {
        [self.i_ri, self.i_wri, self.i_ed, self.i_wed, self.i_fu]
    }
}

/// Registers every parameter of the network described by `cfg`, returning
/// the handle tree plus the flat spec list (checkpoint order).
pub fn model_params(cfg: &ModelConfig) -> (ModelRefs, Vec<ParamSpec>) {
    let w = cfg.wri_width();
    let widths = cfg.encoder_widths();
    let feat_c = cfg.feature_channels();
    let gated = cfg.variant.gated();
    let siamese = cfg.variant.siamese();
    let kind = cfg.variant.scale_kind();
    let s = cfg.scale_groups;

    let mut pb = ParamBuilder::new();
    let stem = pair_entry_params(&mut pb, "stem", cfg.img_channels, w, siamese);
    let wri = wri_params(
        &mut pb,
        "wri",
        w,
        cfg.branches,
        s,
        kind,
        gated,
        cfg.variant.parallel_inception(),
    );
    let smf_proj = conv_block2_params(&mut pb, "smf_proj", w, feat_c);
    let smf_gate = gated.then(|| wsb_params(&mut pb, "smf_gate", feat_c));
    let coder = wrc_params(
        &mut pb,
        "coder",
        cfg.img_channels,
        &widths,
        s,
        kind,
        gated,
        siamese,
    );
    let dmf_gate = gated.then(|| wsb_params(&mut pb, "dmf_gate", feat_c));
    let head_ri = conv_block2_params(&mut pb, "head_ri", feat_c, 2);
    let head_wri = gated.then(|| conv_block2_params(&mut pb, "head_wri", feat_c, 2));
    let head_ed = conv_block2_params(&mut pb, "head_ed", feat_c, 2);
    let head_wed = gated.then(|| conv_block2_params(&mut pb, "head_wed", feat_c, 2));
    let metric = metric_params(
        &mut pb,
        "metric",
        2 * feat_c,
        cfg.metric_depth,
        cfg.metric_growth(),
    );
    let refs = ModelRefs {
        stem,
        wri,
        smf_proj,
        smf_gate,
        coder,
        dmf_gate,
        head_ri,
        head_wri,
        head_ed,
        head_wed,
        metric,
    };
    (refs, pb.finish())
}

/// Total trainable scalars for a configuration.
pub fn count_params(cfg: &ModelConfig) -> Result<u64, String> {
    cfg.validate()?;
    let (_, specs) = model_params(cfg);
    Ok(specs.iter().map(|s| s.numel() as u64).sum())
}

/// A configured network with its parameter values.
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub refs: ModelRefs,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes the network from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, String> {
        config.validate()?;
        let (refs, specs) = model_params(&config);
        let store = ParamStore::init(specs, seed);
        Ok(Model {
            config,
            refs,
            store,
        })
    }

    /// Binds every parameter onto `g` in checkpoint order.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.store.bind_all(g, trainable)
    }

    /// Runs the network on a bound image pair, each `(B, img_channels, H, W)`
    /// with spatial dims divisible by 16.
    pub fn forward(&self, g: &mut Graph<T>, pv: &[Var], t1: Var, t2: Var) -> ModelOutputs {
        let r = &self.refs;
        let stem_f = r.stem.forward(g, pv, t1, t2);
        let wri_out = r.wri.forward(g, pv, stem_f);
        let smf = r.smf_proj.forward_relu(g, pv, wri_out.fused);
        let smf_gated = match &r.smf_gate {
            Some(gate) => gate.forward(g, pv, smf),
            None => smf,
        };
        let dmf = r.coder.forward(g, pv, t1, t2);
        let dmf_gated = match &r.dmf_gate {
            Some(gate) => gate.forward(g, pv, dmf),
            None => dmf,
        };
        let head = |g: &mut Graph<T>, conv: &ConvRef, x: Var| {
            let logits = conv.forward_linear(g, pv, x);
            g.softmax_channels(logits)
        };
        let i_ri = head(g, &r.head_ri, smf);
        let i_wri = head(g, r.head_wri.as_ref().unwrap_or(&r.head_ri), smf_gated);
        let i_ed = head(g, &r.head_ed, dmf);
        let i_wed = head(g, r.head_wed.as_ref().unwrap_or(&r.head_ed), dmf_gated);
        let fused_in = g.concat_channels(&[smf_gated, dmf_gated]);
        let i_fu = r.metric.forward(g, pv, fused_in);
        ModelOutputs {
            i_ri,
            i_wri,
            i_ed,
            i_wed,
            i_fu,
        }
    }
}
