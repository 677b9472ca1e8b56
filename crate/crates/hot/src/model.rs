//! The width- and resolution-scalable 3-D ResNet backbone, higher-order block
//! insertion, and the matched static-depthwise control used for comparisons.

use rand::Rng;

use crate::analysis::{LayerInfo, LayerKind};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::hblock::{HBlock, HBlockConfig};
use crate::ops::{self, BatchNorm, ConvSpec};
use crate::tensor::{OffsetGrid, Scalar, Shape5, Tensor5};
use crate::{Error, Result};

/// Table-2 base widths for conv1 and the four residual stages.
const STEM_WIDTH: usize = 64;
const STAGE_BASE: [usize; 4] = [64, 128, 256, 512];
const EXPANSION: usize = 4;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageId {
    Res2,
    Res3,
    Res4,
    Res5,
}

impl StageId {
    pub fn index(self) -> usize {
        match self {
            StageId::Res2 => 0,
            StageId::Res3 => 1,
            StageId::Res4 => 2,
            StageId::Res5 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        ["res2", "res3", "res4", "res5"][self.index()]
    }

    pub fn all() -> [StageId; 4] {
        [StageId::Res2, StageId::Res3, StageId::Res4, StageId::Res5]
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Off,
    Batch,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Scaled backbone description. `width_scale` divides every Table-2 channel
/// count; block counts may be reduced from the reference (3, 4, 6, 3).
#[derive(Clone, Debug)]
pub struct BackboneSpec {
    pub width_scale: usize,
    pub blocks: [usize; 4],
    /// Input (frames, height, width).
    pub input: (usize, usize, usize),
    pub in_channels: usize,
    pub classes: usize,
    pub norm: NormMode,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width_scale == 0 || STEM_WIDTH % self.width_scale != 0 {
            return Err(Error::Config(format!(
                "width_scale must divide {STEM_WIDTH}, got {}",
                self.width_scale
            )));
        }
        if self.blocks.iter().any(|&b| b == 0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        let (t, h, w) = self.input;
        if t < 2 || h < 16 || w < 16 {
            return Err(Error::Config(format!(
                "input {t}x{h}x{w} too small for the stride ladder (needs at least 2x16x16)"
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }

    pub fn stage_base_width(&self, stage: StageId) -> usize {
        STAGE_BASE[stage.index()] / self.width_scale
    }

    pub fn stage_out_channels(&self, stage: StageId) -> usize {
        self.stage_base_width(stage) * EXPANSION
    }

    fn stem_width(&self) -> usize {
        STEM_WIDTH / self.width_scale
    }

    /// Spatial stride applied by the first block of each stage.
    fn stage_stride(stage: StageId) -> (usize, usize, usize) {
        match stage {
            StageId::Res2 | StageId::Res5 => (1, 1, 1),
            StageId::Res3 | StageId::Res4 => (1, 2, 2),
        }
    }
}

/// Where higher-order blocks go: (stage, 1-indexed block within the stage).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InsertionPlan {
    pub sites: Vec<(StageId, usize)>,
}

impl InsertionPlan {
    pub fn empty() -> InsertionPlan {
        InsertionPlan { sites: Vec::new() }
    }

    /// Named site lists: "1-block" puts one block after res3's second
    /// bottleneck; "3-block" adds res4-2 and res4-4; "5-block" covers every
    /// other residual block of res3 and res4.
    pub fn preset(name: &str) -> Result<InsertionPlan> {
        let sites = match name {
            "none" => vec![],
            "1-block" => vec![(StageId::Res3, 2)],
            "3-block" => vec![
                (StageId::Res3, 2),
                (StageId::Res4, 2),
                (StageId::Res4, 4),
            ],
            "5-block" => vec![
                (StageId::Res3, 1),
                (StageId::Res3, 3),
                (StageId::Res4, 1),
                (StageId::Res4, 3),
                (StageId::Res4, 5),
            ],
            other => {
                return Err(Error::Config(format!(
                    "unknown insertion preset {other:?} (expected none, 1-block, 3-block, 5-block)"
                )))
            }
        };
        Ok(InsertionPlan { sites })
    }

    pub fn validate(&self, blocks: &[usize; 4]) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &(stage, index) in &self.sites {
            if index == 0 || index > blocks[stage.index()] {
                return Err(Error::Config(format!(
                    "insertion site {}-{} out of range (stage has {} blocks)",
                    stage.name(),
                    index,
                    blocks[stage.index()]
                )));
            }
            if !seen.insert((stage, index)) {
                return Err(Error::Config(format!(
                    "duplicate insertion site {}-{}",
                    stage.name(),
                    index
                )));
            }
        }
        Ok(())
    }
}

struct Conv {
    name: String,
    spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv {
    fn init<T: Scalar, R: Rng>(
        name: String,
        spec: ConvSpec,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Conv> {
        let fan_in = (spec.in_channels / spec.groups) * spec.grid.len();
        let weight = store.add_param(
            &format!("{name}.weight"),
            ops::uniform_fan_in(spec.weight_shape(), fan_in, std::f64::consts::SQRT_2, rng),
            true,
        )?;
        let bias = if spec.bias {
            Some(store.add_param(
                &format!("{name}.bias"),
                Tensor5::zeros(spec.bias_shape()),
                false,
            )?)
        } else {
            None
        };
        Ok(Conv {
            name,
            spec,
            weight,
            bias,
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, store: &ParamStore<T>) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        ops::conv3d(tape, x, w, b, &self.spec)
    }
}

/// One extra block at an insertion site: either the higher-order block or its
/// first-order control, a learned depthwise convolution over the same kernel.
enum Extra {
    Higher(HBlock),
    StaticDepthwise {
        conv: Conv,
        residual: bool,
    },
}

impl Extra {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, store: &ParamStore<T>) -> Result<Var> {
        match self {
            Extra::Higher(h) => h.forward(tape, x, store),
            Extra::StaticDepthwise { conv, residual } => {
                let y = conv.forward(tape, x, store)?;
                if *residual {
                    tape.add(y, x)
                } else {
                    Ok(y)
                }
            }
        }
    }
}

struct Bottleneck {
    conv_a: Conv,
    bn_a: Option<BatchNorm>,
    conv_b: Conv,
    bn_b: Option<BatchNorm>,
    conv_c: Conv,
    bn_c: Option<BatchNorm>,
    down: Option<(Conv, Option<BatchNorm>)>,
}

impl Bottleneck {
    fn init<T: Scalar, R: Rng>(
        prefix: &str,
        in_channels: usize,
        base: usize,
        stride: (usize, usize, usize),
        norm: NormMode,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Bottleneck> {
        let out = base * EXPANSION;
        let mk_bn = |store: &mut ParamStore<T>,
                     name: String,
                     ch: usize,
                     zero: bool|
         -> Result<Option<BatchNorm>> {
            match norm {
                NormMode::Off => Ok(None),
                NormMode::Batch => Ok(Some(ops::batchnorm_init(store, &name, ch, zero)?)),
            }
        };
        let conv_a = Conv::init(
            format!("{prefix}.conv_a"),
            ConvSpec::new(
                in_channels,
                base,
                OffsetGrid::from_sizes(3, 1, 1)?,
                1,
                (1, 1, 1),
                false,
            )?,
            store,
            rng,
        )?;
        let bn_a = mk_bn(store, format!("{prefix}.bn_a"), base, false)?;
        let conv_b = Conv::init(
            format!("{prefix}.conv_b"),
            ConvSpec::new(
                base,
                base,
                OffsetGrid::from_sizes(1, 3, 3)?,
                1,
                stride,
                false,
            )?,
            store,
            rng,
        )?;
        let bn_b = mk_bn(store, format!("{prefix}.bn_b"), base, false)?;
        let conv_c = Conv::init(
            format!("{prefix}.conv_c"),
            ConvSpec::new(
                base,
                out,
                OffsetGrid::from_sizes(1, 1, 1)?,
                1,
                (1, 1, 1),
                false,
            )?,
            store,
            rng,
        )?;
        // Zero-initialized residual scale: the block starts as identity.
        let bn_c = mk_bn(store, format!("{prefix}.bn_c"), out, true)?;
        let down = if in_channels != out || stride != (1, 1, 1) {
            let conv = Conv::init(
                format!("{prefix}.down"),
                ConvSpec::new(
                    in_channels,
                    out,
                    OffsetGrid::from_sizes(1, 1, 1)?,
                    1,
                    stride,
                    false,
                )?,
                store,
                rng,
            )?;
            let bn = mk_bn(store, format!("{prefix}.bn_down"), out, false)?;
            Some((conv, bn))
        } else {
            None
        };
        Ok(Bottleneck {
            conv_a,
            bn_a,
            conv_b,
            bn_b,
            conv_c,
            bn_c,
            down,
        })
    }

    fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        store: &mut ParamStore<T>,
        mode: Mode,
    ) -> Result<Var> {
        let training = mode == Mode::Train;
        let mut y = self.conv_a.forward(tape, x, store)?;
        if let Some(bn) = &self.bn_a {
            y = ops::batchnorm(tape, y, bn, store, training)?;
        }
        y = ops::relu(tape, y);
        y = self.conv_b.forward(tape, y, store)?;
        if let Some(bn) = &self.bn_b {
            y = ops::batchnorm(tape, y, bn, store, training)?;
        }
        y = ops::relu(tape, y);
        y = self.conv_c.forward(tape, y, store)?;
        if let Some(bn) = &self.bn_c {
            y = ops::batchnorm(tape, y, bn, store, training)?;
        }
        let shortcut = match &self.down {
            Some((conv, bn)) => {
                let mut s = conv.forward(tape, x, store)?;
                if let Some(bn) = bn {
                    s = ops::batchnorm(tape, s, bn, store, training)?;
                }
                s
            }
            None => x,
        };
        let sum = tape.add(y, shortcut)?;
        Ok(ops::relu(tape, sum))
    }
}

struct Stage {
    id: StageId,
    blocks: Vec<Bottleneck>,
    /// Extra blocks keyed by the 1-indexed bottleneck they follow.
    extras: Vec<(usize, Extra)>,
}

/// A built model: stem, four residual stages with optional extra blocks, and
/// the pooled linear head.
pub struct Backbone {
    pub spec: BackboneSpec,
    conv1: Conv,
    bn1: Option<BatchNorm>,
    stages: Vec<Stage>,
    head: Conv,
}

/// Builds the backbone and registers all parameters. Creation order is
/// deterministic, so a fixed seed gives bit-identical initialization.
pub fn build_backbone<T: Scalar, R: Rng>(
    spec: &BackboneSpec,
    store: &mut ParamStore<T>,
    rng: &mut R,
) -> Result<Backbone> {
    spec.validate()?;
    let conv1 = Conv::init(
        "conv1".into(),
        ConvSpec::new(
            spec.in_channels,
            spec.stem_width(),
            OffsetGrid::from_sizes(5, 7, 7)?,
            1,
            (1, 2, 2),
            false,
        )?,
        store,
        rng,
    )?;
    let bn1 = match spec.norm {
        NormMode::Off => None,
        NormMode::Batch => Some(ops::batchnorm_init(store, "bn1", spec.stem_width(), false)?),
    };
    let mut stages = Vec::new();
    let mut in_channels = spec.stem_width();
    for stage in StageId::all() {
        let base = spec.stage_base_width(stage);
        let mut blocks = Vec::new();
        for b in 0..spec.blocks[stage.index()] {
            let stride = if b == 0 {
                BackboneSpec::stage_stride(stage)
            } else {
                (1, 1, 1)
            };
            blocks.push(Bottleneck::init(
                &format!("{}.b{}", stage.name(), b + 1),
                in_channels,
                base,
                stride,
                spec.norm,
                store,
                rng,
            )?);
            in_channels = base * EXPANSION;
        }
        stages.push(Stage {
            id: stage,
            blocks,
            extras: Vec::new(),
        });
    }
    // Zero-initialized classifier: a balanced task starts at chance loss.
    let head_spec = ConvSpec::new(
        in_channels,
        spec.classes,
        OffsetGrid::from_sizes(1, 1, 1)?,
        1,
        (1, 1, 1),
        true,
    )?;
    let head = Conv {
        name: "head".into(),
        spec: head_spec.clone(),
        weight: store.add_param("head.weight", Tensor5::zeros(head_spec.weight_shape()), true)?,
        bias: Some(store.add_param("head.bias", Tensor5::zeros(head_spec.bias_shape()), false)?),
    };
    Ok(Backbone {
        spec: spec.clone(),
        conv1,
        bn1,
        stages,
        head,
    })
}

impl Backbone {
    /// Appends one higher-order block after each planned bottleneck. Channel
    /// counts at every site must cover the kernel support.
    pub fn insert_hblocks<T: Scalar, R: Rng>(
        &mut self,
        plan: &InsertionPlan,
        cfg_for_channels: impl Fn(usize) -> HBlockConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        plan.validate(&self.spec.blocks)?;
        for &(stage_id, index) in &plan.sites {
            let channels = self.spec.stage_out_channels(stage_id);
            let cfg = cfg_for_channels(channels);
            if channels < cfg.kernel.len() {
                return Err(Error::Config(format!(
                    "stage {} has {} channels, fewer than the {} kernel offsets; \
                     reduce width_scale or the kernel",
                    stage_id.name(),
                    channels,
                    cfg.kernel.len()
                )));
            }
            let name = format!("{}.h{}", stage_id.name(), index);
            let block = HBlock::init(cfg, &name, store, rng)?;
            self.stages[stage_id.index()]
                .extras
                .push((index, Extra::Higher(block)));
        }
        for stage in &mut self.stages {
            stage.extras.sort_by_key(|(i, _)| *i);
        }
        Ok(())
    }

    /// Control arm: the same sites get a learned static depthwise convolution
    /// over the same kernel, initialized to the box average exactly like a
    /// zero-initialized softmax block.
    pub fn insert_static_controls<T: Scalar>(
        &mut self,
        plan: &InsertionPlan,
        kernel: &OffsetGrid,
        residual: bool,
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        plan.validate(&self.spec.blocks)?;
        for &(stage_id, index) in &plan.sites {
            let channels = self.spec.stage_out_channels(stage_id);
            if channels < kernel.len() {
                return Err(Error::Config(format!(
                    "stage {} has {} channels, fewer than the {} kernel offsets",
                    stage_id.name(),
                    channels,
                    kernel.len()
                )));
            }
            let name = format!("{}.s{}", stage_id.name(), index);
            let (st, sh, sw) = kernel.sizes();
            let spec = ConvSpec::new(
                channels,
                channels,
                OffsetGrid::from_sizes(st, sh, sw)?,
                channels,
                (1, 1, 1),
                false,
            )?;
            let weight = store.add_param(
                &format!("{name}.weight"),
                Tensor5::full(spec.weight_shape(), T::from_f64(1.0 / kernel.len() as f64)),
                true,
            )?;
            self.stages[stage_id.index()].extras.push((
                index,
                Extra::StaticDepthwise {
                    conv: Conv {
                        name,
                        spec,
                        weight,
                        bias: None,
                    },
                    residual,
                },
            ));
        }
        for stage in &mut self.stages {
            stage.extras.sort_by_key(|(i, _)| *i);
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        store: &mut ParamStore<T>,
        mode: Mode,
    ) -> Result<Var> {
        self.forward_with_taps(tape, x, store, mode, &mut Vec::new())
    }

    /// Forward pass that also records the activation after each named stage
    /// (conv1, pool1, res2, pool2, res3, res4, res5) for feature dumps.
    pub fn forward_with_taps<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        store: &mut ParamStore<T>,
        mode: Mode,
        taps: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        let training = mode == Mode::Train;
        let xs = tape.shape(x);
        if xs.c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {xs}",
                self.spec.in_channels
            )));
        }
        let mut y = self.conv1.forward(tape, x, store)?;
        if let Some(bn) = &self.bn1 {
            y = ops::batchnorm(tape, y, bn, store, training)?;
        }
        y = ops::relu(tape, y);
        taps.push(("conv1".into(), y));
        y = ops::maxpool3d(tape, y, (1, 3, 3), (1, 2, 2))?;
        taps.push(("pool1".into(), y));
        for stage in &self.stages {
            let mut extra_iter = stage.extras.iter().peekable();
            for (i, block) in stage.blocks.iter().enumerate() {
                y = block.forward(tape, y, store, mode)?;
                while extra_iter.peek().map(|(at, _)| *at == i + 1) == Some(true) {
                    let (_, extra) = extra_iter.next().expect("peeked");
                    y = extra.forward(tape, y, store)?;
                }
            }
            taps.push((stage.id.name().into(), y));
            if stage.id == StageId::Res2 {
                y = ops::maxpool3d(tape, y, (3, 1, 1), (2, 1, 1))?;
                taps.push(("pool2".into(), y));
            }
        }
        y = ops::global_avg_pool(tape, y);
        let w = tape.param(store, self.head.weight);
        let b = self.head.bias.map(|id| tape.param(store, id));
        ops::linear(tape, y, w, b)
    }

    /// Static layer listing in forward order with propagated output shapes
    /// and exact per-layer parameter counts. Feeds the cost counter and the
    /// architecture summary.
    pub fn layer_walk(&self, batch: usize) -> Result<Vec<LayerInfo>> {
        let (t, h, w) = self.spec.input;
        let mut shape = Shape5::new(batch, self.spec.in_channels, t, h, w);
        let mut rows = Vec::new();
        let conv_row = |rows: &mut Vec<LayerInfo>, conv: &Conv, shape: Shape5| -> Result<Shape5> {
            let out = conv.spec.output_shape(shape)?;
            rows.push(LayerInfo {
                name: conv.name.clone(),
                kind: LayerKind::Conv {
                    in_per_group: conv.spec.in_channels / conv.spec.groups,
                    kvol: conv.spec.grid.len(),
                },
                out_shape: out,
                params: conv.spec.param_count(),
            });
            Ok(out)
        };
        let norm_row = |rows: &mut Vec<LayerInfo>, name: String, shape: Shape5| {
            rows.push(LayerInfo {
                name,
                kind: LayerKind::Norm,
                out_shape: shape,
                params: 2 * shape.c,
            });
        };
        let act_row = |rows: &mut Vec<LayerInfo>, name: String, shape: Shape5| {
            rows.push(LayerInfo {
                name,
                kind: LayerKind::Activation,
                out_shape: shape,
                params: 0,
            });
        };

        shape = conv_row(&mut rows, &self.conv1, shape)?;
        if self.bn1.is_some() {
            norm_row(&mut rows, "bn1".into(), shape);
        }
        act_row(&mut rows, "conv1.relu".into(), shape);
        shape = Shape5::new(
            shape.n,
            shape.c,
            ops::conv_out_dim(shape.t, 1, 1)?,
            ops::conv_out_dim(shape.h, 3, 2)?,
            ops::conv_out_dim(shape.w, 3, 2)?,
        );
        rows.push(LayerInfo {
            name: "pool1".into(),
            kind: LayerKind::Pool,
            out_shape: shape,
            params: 0,
        });
        for stage in &self.stages {
            let mut extra_iter = stage.extras.iter().peekable();
            for (i, block) in stage.blocks.iter().enumerate() {
                let prefix = format!("{}.b{}", stage.id.name(), i + 1);
                let input_shape = shape;
                let mut s = conv_row(&mut rows, &block.conv_a, shape)?;
                if block.bn_a.is_some() {
                    norm_row(&mut rows, format!("{prefix}.bn_a"), s);
                }
                act_row(&mut rows, format!("{prefix}.relu_a"), s);
                s = conv_row(&mut rows, &block.conv_b, s)?;
                if block.bn_b.is_some() {
                    norm_row(&mut rows, format!("{prefix}.bn_b"), s);
                }
                act_row(&mut rows, format!("{prefix}.relu_b"), s);
                s = conv_row(&mut rows, &block.conv_c, s)?;
                if block.bn_c.is_some() {
                    norm_row(&mut rows, format!("{prefix}.bn_c"), s);
                }
                if let Some((down, bn)) = &block.down {
                    let d = conv_row(&mut rows, down, input_shape)?;
                    if bn.is_some() {
                        norm_row(&mut rows, format!("{prefix}.bn_down"), d);
                    }
                }
                rows.push(LayerInfo {
                    name: format!("{prefix}.add"),
                    kind: LayerKind::Add,
                    out_shape: s,
                    params: 0,
                });
                act_row(&mut rows, format!("{prefix}.relu"), s);
                shape = s;
                while extra_iter.peek().map(|(at, _)| *at == i + 1) == Some(true) {
                    let (at, extra) = extra_iter.next().expect("peeked");
                    shape = walk_extra(&mut rows, stage.id, *at, extra, shape)?;
                }
            }
            if stage.id == StageId::Res2 {
                shape = Shape5::new(
                    shape.n,
                    shape.c,
                    ops::conv_out_dim(shape.t, 3, 2)?,
                    shape.h,
                    shape.w,
                );
                rows.push(LayerInfo {
                    name: "pool2".into(),
                    kind: LayerKind::Pool,
                    out_shape: shape,
                    params: 0,
                });
            }
        }
        shape = Shape5::new(shape.n, shape.c, 1, 1, 1);
        rows.push(LayerInfo {
            name: "global_avg_pool".into(),
            kind: LayerKind::Pool,
            out_shape: shape,
            params: 0,
        });
        shape = self.head.spec.output_shape(shape)?;
        rows.push(LayerInfo {
            name: "head".into(),
            kind: LayerKind::Conv {
                in_per_group: self.head.spec.in_channels,
                kvol: 1,
            },
            out_shape: shape,
            params: self.head.spec.param_count(),
        });
        Ok(rows)
    }

    /// Output shape of each named stage for the configured input, batch 1:
    /// the shape after the last row whose name starts with the stage prefix.
    pub fn stage_shapes(&self) -> Result<Vec<(String, Shape5)>> {
        let rows = self.layer_walk(1)?;
        let keys = [
            "conv1", "pool1", "res2", "pool2", "res3", "res4", "res5",
            "global_avg_pool", "head",
        ];
        let mut out = Vec::new();
        for key in keys {
            let last = rows
                .iter()
                .filter(|r| r.name == key || r.name.starts_with(&format!("{key}.")))
                .next_back();
            if let Some(row) = last {
                out.push((key.to_string(), row.out_shape));
            }
        }
        Ok(out)
    }
}

fn walk_extra(
    rows: &mut Vec<LayerInfo>,
    stage: StageId,
    index: usize,
    extra: &Extra,
    shape: Shape5,
) -> Result<Shape5> {
    match extra {
        Extra::Higher(h) => {
            let prefix = format!("{}.h{}", stage.name(), index);
            let mut gen_shape = shape;
            for (suffix, spec, selu_after) in h.generator_specs() {
                gen_shape = spec.output_shape(gen_shape)?;
                rows.push(LayerInfo {
                    name: format!("{prefix}.{suffix}"),
                    kind: LayerKind::Conv {
                        in_per_group: spec.in_channels / spec.groups,
                        kvol: spec.grid.len(),
                    },
                    out_shape: gen_shape,
                    params: spec.param_count(),
                });
                if selu_after {
                    rows.push(LayerInfo {
                        name: format!("{prefix}.{suffix}.selu"),
                        kind: LayerKind::Activation,
                        out_shape: gen_shape,
                        params: 0,
                    });
                }
            }
            rows.push(LayerInfo {
                name: format!("{prefix}.weight_act"),
                kind: LayerKind::Activation,
                out_shape: gen_shape,
                params: 0,
            });
            rows.push(LayerInfo {
                name: format!("{prefix}.apply"),
                kind: LayerKind::DynamicApply {
                    offsets: h.cfg.kernel.len(),
                },
                out_shape: shape,
                params: 0,
            });
            if h.cfg.residual {
                rows.push(LayerInfo {
                    name: format!("{prefix}.add"),
                    kind: LayerKind::Add,
                    out_shape: shape,
                    params: 0,
                });
            }
            Ok(shape)
        }
        Extra::StaticDepthwise { conv, residual } => {
            let out = conv.spec.output_shape(shape)?;
            rows.push(LayerInfo {
                name: conv.name.clone(),
                kind: LayerKind::Conv {
                    in_per_group: conv.spec.in_channels / conv.spec.groups,
                    kvol: conv.spec.grid.len(),
                },
                out_shape: out,
                params: conv.spec.param_count(),
            });
            if *residual {
                rows.push(LayerInfo {
                    name: format!("{}.add", conv.name),
                    kind: LayerKind::Add,
                    out_shape: out,
                    params: 0,
                });
            }
            Ok(out)
        }
    }
}
