//! The higher-order block: a depthwise convolution whose per-position weights
//! are produced by a generator network reading the surrounding context, plus
//! both generator variants (a single wide convolution and a three-layer
//! factorized ConvNet).

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::ops::{self, ConvSpec};
use crate::tensor::{OffsetGrid, Scalar, Tensor5};
use crate::{Error, Result};

/// Kernel supports the block can apply dynamic weights over.
pub const KERNEL_MENU: [(usize, usize, usize); 4] = [(3, 1, 1), (1, 3, 3), (3, 3, 3), (3, 5, 5)];

/// Context fields the generator can read from.
pub const CONTEXT_MENU: [(usize, usize, usize); 5] =
    [(3, 3, 3), (3, 5, 5), (5, 5, 5), (5, 7, 7), (7, 7, 7)];

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum GeneratorKind {
    #[serde(rename = "single-conv")]
    SingleConv,
    #[serde(rename = "convnet")]
    ConvNet,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightActivation {
    Softmax,
    Relu,
    Tanh,
}

/// Configuration of one higher-order block: the unit of ablation.
#[derive(Clone, Debug)]
pub struct HBlockConfig {
    pub channels: usize,
    pub kernel: OffsetGrid,
    pub context: OffsetGrid,
    pub generator: GeneratorKind,
    pub activation: WeightActivation,
    /// When set the block output is added to its input.
    pub residual: bool,
}

/// Channel-independent menu checks shared by block and experiment-config
/// validation.
pub fn validate_menus(kernel: (usize, usize, usize), context: (usize, usize, usize)) -> Result<()> {
    if !KERNEL_MENU.contains(&kernel) {
        return Err(Error::Config(format!(
            "kernel {}x{}x{} is not one of the supported sizes {:?}",
            kernel.0,
            kernel.1,
            kernel.2,
            KERNEL_MENU.map(|(t, h, w)| format!("{t}x{h}x{w}")),
        )));
    }
    if !CONTEXT_MENU.contains(&context) {
        return Err(Error::Config(format!(
            "context field {}x{}x{} is not one of the supported sizes {:?}",
            context.0,
            context.1,
            context.2,
            CONTEXT_MENU.map(|(t, h, w)| format!("{t}x{h}x{w}")),
        )));
    }
    if kernel.0 / 2 > context.0 / 2 || kernel.1 / 2 > context.1 / 2 || kernel.2 / 2 > context.2 / 2
    {
        return Err(Error::Config(format!(
            "kernel {}x{}x{} exceeds context field {}x{}x{}; the context must cover the kernel",
            kernel.0, kernel.1, kernel.2, context.0, context.1, context.2
        )));
    }
    Ok(())
}

impl HBlockConfig {
    pub fn validate(&self) -> Result<()> {
        validate_menus(self.kernel.sizes(), self.context.sizes())?;
        if self.generator == GeneratorKind::ConvNet && self.channels < self.kernel.len() {
            return Err(Error::Config(format!(
                "ConvNet generator needs channels >= |kernel|: {} // {} = 0 mid channels",
                self.channels,
                self.kernel.len()
            )));
        }
        Ok(())
    }
}

/// One of the three factorized generator convolutions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct P3dLayer {
    pub kernel: (usize, usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub selu_after: bool,
    pub bias: bool,
}

/// The three-layer factorization realizing a context field, with the
/// channel plan (C, C), (C, C//|R|*|R|), (C//|R|*|R|, C*|R|) and the last
/// layer grouped by |R|.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorPlan {
    pub layers: [P3dLayer; 3],
}

/// Kernel-size factorization realizing each supported context field.
pub fn context_factorization(
    context: (usize, usize, usize),
) -> Result<[(usize, usize, usize); 3]> {
    match context {
        (3, 3, 3) => Ok([(1, 3, 3), (3, 1, 1), (1, 1, 1)]),
        (3, 5, 5) => Ok([(1, 3, 3), (3, 3, 3), (1, 1, 1)]),
        (5, 5, 5) => Ok([(1, 3, 3), (3, 3, 3), (3, 1, 1)]),
        (5, 7, 7) => Ok([(1, 3, 3), (3, 3, 3), (3, 3, 3)]),
        (7, 7, 7) => Ok([(3, 3, 3), (3, 3, 3), (3, 3, 3)]),
        (t, h, w) => Err(Error::Config(format!(
            "no factorization for context field {t}x{h}x{w}"
        ))),
    }
}

impl GeneratorPlan {
    pub fn new(context: (usize, usize, usize), channels: usize, r: usize) -> Result<GeneratorPlan> {
        let kernels = context_factorization(context)?;
        if channels / r == 0 {
            return Err(Error::Config(format!(
                "ConvNet generator needs channels >= |kernel|: {channels} // {r} = 0 mid channels"
            )));
        }
        let mid = channels / r * r;
        Ok(GeneratorPlan {
            layers: [
                P3dLayer {
                    kernel: kernels[0],
                    in_channels: channels,
                    out_channels: channels,
                    groups: 1,
                    selu_after: true,
                    bias: true,
                },
                P3dLayer {
                    kernel: kernels[1],
                    in_channels: channels,
                    out_channels: mid,
                    groups: 1,
                    selu_after: true,
                    bias: true,
                },
                P3dLayer {
                    kernel: kernels[2],
                    in_channels: mid,
                    out_channels: channels * r,
                    groups: r,
                    selu_after: false,
                    bias: false,
                },
            ],
        })
    }

    /// Per-axis half-width of the composed stack: sums of the layer
    /// half-widths.
    pub fn composed_extents(&self) -> (usize, usize, usize) {
        self.layers.iter().fold((0, 0, 0), |acc, l| {
            (
                acc.0 + l.kernel.0 / 2,
                acc.1 + l.kernel.1 / 2,
                acc.2 + l.kernel.2 / 2,
            )
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let vol = l.kernel.0 * l.kernel.1 * l.kernel.2;
                l.out_channels * (l.in_channels / l.groups) * vol
                    + if l.bias { l.out_channels } else { 0 }
            })
            .sum()
    }
}

/// Kernel volumes needed for one context field: the summed factorized volumes
/// against the single full-volume kernel.
pub fn kernel_volume_comparison(context: (usize, usize, usize)) -> Result<(usize, usize)> {
    let kernels = context_factorization(context)?;
    let factorized = kernels.iter().map(|k| k.0 * k.1 * k.2).sum();
    let single = context.0 * context.1 * context.2;
    Ok((factorized, single))
}

/// Per-position kernel weights: logically (n, c, |R|, t, h, w), stored
/// flattened into the channel axis as q*C + c in the grid's canonical offset
/// order.
#[derive(Clone, Copy, Debug)]
pub struct DynamicWeights {
    pub var: Var,
    pub offsets: usize,
    pub channels: usize,
}

/// y[n,c,p] = sum over offsets q of w[n,q*C+c,p] * x[n,c,p+q], reading zero
/// outside the volume. Output shape equals input shape.
pub fn dynamic_depthwise_apply<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weights: &DynamicWeights,
    kernel: &OffsetGrid,
) -> Result<Var> {
    let xs = tape.shape(x);
    let ws = tape.shape(weights.var);
    if weights.offsets != kernel.len() {
        return Err(Error::Shape(format!(
            "weights carry {} offsets but the kernel has {}",
            weights.offsets,
            kernel.len()
        )));
    }
    if ws.c != kernel.len() * xs.c
        || ws.n != xs.n
        || ws.t != xs.t
        || ws.h != xs.h
        || ws.w != xs.w
    {
        return Err(Error::Shape(format!(
            "dynamic weights {ws} do not match input {xs} with |kernel| {}",
            kernel.len()
        )));
    }
    let value = apply_forward(tape.value(x), tape.value(weights.var), kernel);
    let kernel = kernel.clone();
    Ok(tape.record(
        value,
        vec![x, weights.var],
        Box::new(move |ctx| {
            let (xv, wv) = (ctx.parents[0], ctx.parents[1]);
            let (xs, ws) = (xv.shape(), wv.shape());
            let channels = xs.c;
            let (kt, kh, kw) = kernel.extents();
            let (row, plane) = (xs.w, xs.h * xs.w);
            let vol = xs.t * plane;
            let taps = tap_offsets(&kernel, plane, row);
            let mut dx = Tensor5::zeros(xs);
            let mut dw = Tensor5::zeros(ws);
            let (xd, wd, gd) = (xv.data(), wv.data(), ctx.grad.data());
            let dxd = dx.data_mut();
            let dwd = dw.data_mut();
            for n in 0..xs.n {
                for c in 0..channels {
                    let xb = (n * channels + c) * vol;
                    let wb = n * kernel.len() * channels * vol + c * vol;
                    for t in 0..xs.t {
                        let t_in = t >= kt && t + kt < xs.t;
                        for h in 0..xs.h {
                            let h_in = h >= kh && h + kh < xs.h;
                            let prow = t * plane + h * row;
                            for w in 0..xs.w {
                                let p = prow + w;
                                let g = gd[xb + p];
                                if t_in && h_in && w >= kw && w + kw < xs.w {
                                    for (q, &tp) in taps.iter().enumerate() {
                                        let wi = wb + q * channels * vol + p;
                                        let xi = (xb as i64 + p as i64 + tp) as usize;
                                        dwd[wi] += g * xd[xi];
                                        dxd[xi] += g * wd[wi];
                                    }
                                } else {
                                    for (q, &(dt, dh, dw_)) in
                                        kernel.offsets().iter().enumerate()
                                    {
                                        let (it, ih, iw) = (
                                            t as i64 + dt,
                                            h as i64 + dh,
                                            w as i64 + dw_,
                                        );
                                        if it < 0
                                            || ih < 0
                                            || iw < 0
                                            || it as usize >= xs.t
                                            || ih as usize >= xs.h
                                            || iw as usize >= xs.w
                                        {
                                            continue;
                                        }
                                        let wi = wb + q * channels * vol + p;
                                        let xi = xb
                                            + it as usize * plane
                                            + ih as usize * row
                                            + iw as usize;
                                        dwd[wi] += g * xd[xi];
                                        dxd[xi] += g * wd[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Ok(vec![dx, dw])
        }),
    ))
}

fn tap_offsets(kernel: &OffsetGrid, plane: usize, row: usize) -> Vec<i64> {
    kernel
        .offsets()
        .iter()
        .map(|&(dt, dh, dw)| dt * (plane as i64) + dh * (row as i64) + dw)
        .collect()
}

fn apply_forward<T: Scalar>(x: &Tensor5<T>, w: &Tensor5<T>, kernel: &OffsetGrid) -> Tensor5<T> {
    let xs = x.shape();
    let channels = xs.c;
    let (kt, kh, kw) = kernel.extents();
    let (row, plane) = (xs.w, xs.h * xs.w);
    let vol = xs.t * plane;
    let taps = tap_offsets(kernel, plane, row);
    let mut out = Tensor5::zeros(xs);
    let (xd, wd) = (x.data(), w.data());
    let od = out.data_mut();
    for n in 0..xs.n {
        for c in 0..channels {
            let xb = (n * channels + c) * vol;
            let wb = n * kernel.len() * channels * vol + c * vol;
            for t in 0..xs.t {
                let t_in = t >= kt && t + kt < xs.t;
                for h in 0..xs.h {
                    let h_in = h >= kh && h + kh < xs.h;
                    let prow = t * plane + h * row;
                    for wx in 0..xs.w {
                        let p = prow + wx;
                        let mut acc = T::ZERO;
                        if t_in && h_in && wx >= kw && wx + kw < xs.w {
                            for (q, &tp) in taps.iter().enumerate() {
                                acc += wd[wb + q * channels * vol + p]
                                    * xd[(xb as i64 + p as i64 + tp) as usize];
                            }
                        } else {
                            for (q, &(dt, dh, dw)) in kernel.offsets().iter().enumerate() {
                                let (it, ih, iw) =
                                    (t as i64 + dt, h as i64 + dh, wx as i64 + dw);
                                if it < 0
                                    || ih < 0
                                    || iw < 0
                                    || it as usize >= xs.t
                                    || ih as usize >= xs.h
                                    || iw as usize >= xs.w
                                {
                                    continue;
                                }
                                acc += wd[wb + q * channels * vol + p]
                                    * xd[xb
                                        + it as usize * plane
                                        + ih as usize * row
                                        + iw as usize];
                            }
                        }
                        od[xb + p] = acc;
                    }
                }
            }
        }
    }
    out
}

enum Generator {
    SingleConv {
        spec: ConvSpec,
        weight: ParamId,
    },
    ConvNet {
        layers: Vec<(ConvSpec, ParamId, Option<ParamId>, bool)>,
    },
}

/// A built higher-order block with its generator parameters registered in a
/// store.
pub struct HBlock {
    pub cfg: HBlockConfig,
    gen: Generator,
}

impl HBlock {
    /// Registers generator parameters under `prefix`. The final generator
    /// layer (or the whole single-conv weight) starts at zero so a softmax
    /// block begins as an exact box average over its kernel.
    pub fn init<T: Scalar, R: Rng>(
        cfg: HBlockConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<HBlock> {
        cfg.validate()?;
        let r = cfg.kernel.len();
        let gen = match cfg.generator {
            GeneratorKind::SingleConv => {
                let (st, sh, sw) = cfg.context.sizes();
                let spec = ConvSpec::new(
                    cfg.channels,
                    cfg.channels * r,
                    OffsetGrid::from_sizes(st, sh, sw)?,
                    1,
                    (1, 1, 1),
                    false,
                )?;
                let weight = store.add_param(
                    &format!("{prefix}.theta"),
                    Tensor5::zeros(spec.weight_shape()),
                    true,
                )?;
                Generator::SingleConv { spec, weight }
            }
            GeneratorKind::ConvNet => {
                let plan = GeneratorPlan::new(cfg.context.sizes(), cfg.channels, r)?;
                let mut layers = Vec::new();
                for (i, layer) in plan.layers.iter().enumerate() {
                    let spec = ConvSpec::new(
                        layer.in_channels,
                        layer.out_channels,
                        OffsetGrid::from_sizes(layer.kernel.0, layer.kernel.1, layer.kernel.2)?,
                        layer.groups,
                        (1, 1, 1),
                        layer.bias,
                    )?;
                    let fan_in = (layer.in_channels / layer.groups)
                        * layer.kernel.0
                        * layer.kernel.1
                        * layer.kernel.2;
                    let weight_val = if i == 2 {
                        Tensor5::zeros(spec.weight_shape())
                    } else {
                        ops::uniform_fan_in(spec.weight_shape(), fan_in, 1.0, rng)
                    };
                    let weight = store.add_param(
                        &format!("{prefix}.gen{}.weight", i + 1),
                        weight_val,
                        true,
                    )?;
                    let bias = if layer.bias {
                        Some(store.add_param(
                            &format!("{prefix}.gen{}.bias", i + 1),
                            Tensor5::zeros(spec.bias_shape()),
                            false,
                        )?)
                    } else {
                        None
                    };
                    layers.push((spec, weight, bias, layer.selu_after));
                }
                Generator::ConvNet { layers }
            }
        };
        Ok(HBlock { cfg, gen })
    }

    /// Pre-activation weight logits for all (offset, channel, position) in
    /// one pass, offset-major channel layout q*C + c.
    pub fn generate_weights<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        store: &ParamStore<T>,
    ) -> Result<DynamicWeights> {
        let var = match &self.gen {
            Generator::SingleConv { spec, weight } => {
                let w = tape.param(store, *weight);
                ops::conv3d(tape, x, w, None, spec)?
            }
            Generator::ConvNet { layers } => {
                let mut cur = x;
                for (spec, weight, bias, selu_after) in layers {
                    let w = tape.param(store, *weight);
                    let b = bias.map(|id| tape.param(store, id));
                    cur = ops::conv3d(tape, cur, w, b, spec)?;
                    if *selu_after {
                        cur = ops::selu(tape, cur);
                    }
                }
                cur
            }
        };
        Ok(DynamicWeights {
            var,
            offsets: self.cfg.kernel.len(),
            channels: self.cfg.channels,
        })
    }

    /// Applies the configured activation to weight logits: softmax normalizes
    /// across the offset axis, relu/tanh act pointwise with no normalization.
    pub fn activate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        logits: DynamicWeights,
    ) -> Result<DynamicWeights> {
        let var = match self.cfg.activation {
            WeightActivation::Softmax => {
                ops::softmax_over_offsets(tape, logits.var, logits.offsets)?
            }
            WeightActivation::Relu => ops::relu(tape, logits.var),
            WeightActivation::Tanh => ops::tanh(tape, logits.var),
        };
        Ok(DynamicWeights { var, ..logits })
    }

    /// Full block: generate, activate, apply, and optionally add the input
    /// back. Differentiable end to end through both the content and the
    /// context path.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        store: &ParamStore<T>,
    ) -> Result<Var> {
        let xs = tape.shape(x);
        if xs.c != self.cfg.channels {
            return Err(Error::Shape(format!(
                "H-block built for {} channels applied to {xs}",
                self.cfg.channels
            )));
        }
        let logits = self.generate_weights(tape, x, store)?;
        let weights = self.activate(tape, logits)?;
        let y = dynamic_depthwise_apply(tape, x, &weights, &self.cfg.kernel)?;
        if self.cfg.residual {
            tape.add(y, x)
        } else {
            Ok(y)
        }
    }

    /// Exact number of generator parameters this block owns.
    pub fn param_count(&self) -> usize {
        param_count_closed_form(&self.cfg)
    }

    /// Conv specs making up the generator, in application order, with a name
    /// suffix and whether a SELU follows. Used for cost and shape walks.
    pub fn generator_specs(&self) -> Vec<(String, &ConvSpec, bool)> {
        match &self.gen {
            Generator::SingleConv { spec, .. } => vec![("theta".to_string(), spec, false)],
            Generator::ConvNet { layers } => layers
                .iter()
                .enumerate()
                .map(|(i, (spec, _, _, selu_after))| {
                    (format!("gen{}", i + 1), spec, *selu_after)
                })
                .collect(),
        }
    }
}

/// Closed-form generator parameter count: C^2 * |R| * |R'| for the single
/// convolution, the three-layer plan total for the ConvNet.
pub fn param_count_closed_form(cfg: &HBlockConfig) -> usize {
    let r = cfg.kernel.len();
    match cfg.generator {
        GeneratorKind::SingleConv => cfg.channels * cfg.channels * r * cfg.context.len(),
        GeneratorKind::ConvNet => GeneratorPlan::new(cfg.context.sizes(), cfg.channels, r)
            .expect("validated config always has a plan")
            .param_count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(
        channels: usize,
        kernel: (usize, usize, usize),
        context: (usize, usize, usize),
        generator: GeneratorKind,
    ) -> HBlockConfig {
        HBlockConfig {
            channels,
            kernel: OffsetGrid::from_sizes(kernel.0, kernel.1, kernel.2).unwrap(),
            context: OffsetGrid::from_sizes(context.0, context.1, context.2).unwrap(),
            generator,
            activation: WeightActivation::Softmax,
            residual: false,
        }
    }

    fn random_tensor(shape: Shape5, seed: u64) -> Tensor5<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor5::from_vec(
            shape,
            (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_center_weights_are_identity() {
        let kernel = OffsetGrid::from_sizes(3, 3, 3).unwrap();
        let xs = Shape5::new(1, 2, 3, 4, 4);
        let x_t = random_tensor(xs, 1);
        let center = kernel
            .offsets()
            .iter()
            .position(|&o| o == (0, 0, 0))
            .unwrap();
        let mut w_t = Tensor5::zeros(Shape5::new(1, 27 * 2, 3, 4, 4));
        for c in 0..2 {
            for t in 0..3 {
                for h in 0..4 {
                    for w in 0..4 {
                        w_t.set(0, center * 2 + c, t, h, w, 1.0);
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let wv = tape.constant(w_t);
        let dw = DynamicWeights {
            var: wv,
            offsets: 27,
            channels: 2,
        };
        let y = dynamic_depthwise_apply(&mut tape, x, &dw, &kernel).unwrap();
        assert_eq!(tape.value(y), &x_t);
    }

    #[test]
    fn uniform_weights_give_box_average() {
        let kernel = OffsetGrid::from_sizes(3, 3, 3).unwrap();
        let xs = Shape5::new(1, 1, 3, 3, 3);
        let x_t = random_tensor(xs, 2);
        let w_t = Tensor5::full(Shape5::new(1, 27, 3, 3, 3), 1.0 / 27.0);
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let wv = tape.constant(w_t);
        let dw = DynamicWeights {
            var: wv,
            offsets: 27,
            channels: 1,
        };
        let y = dynamic_depthwise_apply(&mut tape, x, &dw, &kernel).unwrap();
        // Zero-padded mean from padded_gather as the oracle.
        for t in 0..3 {
            for h in 0..3 {
                for w in 0..3 {
                    let vals = x_t.padded_gather(0, 0, (t, h, w), &kernel).unwrap();
                    let mean: f64 = vals.iter().sum::<f64>() / 27.0;
                    assert!((tape.value(y).get(0, 0, t, h, w) - mean).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn mismatched_offset_axis_rejected() {
        let kernel = OffsetGrid::from_sizes(3, 3, 3).unwrap();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor5::zeros(Shape5::new(1, 2, 2, 2, 2)));
        let w = tape.constant(Tensor5::zeros(Shape5::new(1, 9 * 2, 2, 2, 2)));
        let dw = DynamicWeights {
            var: w,
            offsets: 9,
            channels: 2,
        };
        assert!(dynamic_depthwise_apply(&mut tape, x, &dw, &kernel).is_err());
    }

    #[test]
    fn singleconv_parameter_count_formula() {
        // C=4, |R|=27, |R'|=125 -> 4^2 * 27 * 125 = 54000.
        let c = cfg(4, (3, 3, 3), (5, 5, 5), GeneratorKind::SingleConv);
        assert_eq!(param_count_closed_form(&c), 54_000);
    }

    #[test]
    fn convnet_channel_plan_example() {
        // C=64, |R|=27, context 5x5x5: kernels (1x3x3, 3x3x3, 3x1x1),
        // channels 64 -> 64, 64 -> 54, 54 -> 1728 with 27 groups.
        let plan = GeneratorPlan::new((5, 5, 5), 64, 27).unwrap();
        assert_eq!(plan.layers[0].kernel, (1, 3, 3));
        assert_eq!(plan.layers[1].kernel, (3, 3, 3));
        assert_eq!(plan.layers[2].kernel, (3, 1, 1));
        assert_eq!(
            (plan.layers[0].in_channels, plan.layers[0].out_channels),
            (64, 64)
        );
        assert_eq!(
            (plan.layers[1].in_channels, plan.layers[1].out_channels),
            (64, 54)
        );
        assert_eq!(
            (plan.layers[2].in_channels, plan.layers[2].out_channels),
            (54, 1728)
        );
        assert_eq!(plan.layers[2].groups, 27);
    }

    #[test]
    fn integer_division_channel_plan() {
        // 19 // 9 = 2, so the mid width is 18.
        let plan = GeneratorPlan::new((3, 3, 3), 19, 9).unwrap();
        assert_eq!(plan.layers[1].out_channels, 18);
        assert_eq!(plan.layers[2].in_channels, 18);
        assert_eq!(plan.layers[2].out_channels, 19 * 9);
    }

    #[test]
    fn too_few_channels_for_convnet_rejected() {
        let c = cfg(4, (3, 3, 3), (5, 5, 5), GeneratorKind::ConvNet);
        let err = c.validate().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("4 // 27"), "message should name the constraint: {msg}");
    }

    #[test]
    fn volume_comparison_for_5x5x5() {
        assert_eq!(kernel_volume_comparison((5, 5, 5)).unwrap(), (39, 125));
    }

    #[test]
    fn factorizations_compose_to_their_context() {
        for context in CONTEXT_MENU {
            let plan = GeneratorPlan::new(context, 64, 27).unwrap();
            let want = (context.0 / 2, context.1 / 2, context.2 / 2);
            assert_eq!(plan.composed_extents(), want, "context {context:?}");
        }
    }

    #[test]
    fn zero_generator_softmax_gives_box_average() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(2, (3, 3, 3), (3, 3, 3), GeneratorKind::SingleConv);
        let kernel = c.kernel.clone();
        let block = HBlock::init(c, "h", &mut store, &mut rng).unwrap();
        let xs = Shape5::new(1, 2, 3, 4, 4);
        let x_t = random_tensor(xs, 4);
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let y = block.forward(&mut tape, x, &store).unwrap();
        for c_i in 0..2 {
            for t in 0..3 {
                for h in 0..4 {
                    for w in 0..4 {
                        let vals = x_t.padded_gather(0, c_i, (t, h, w), &kernel).unwrap();
                        let mean: f64 = vals.iter().sum::<f64>() / 27.0;
                        assert!((tape.value(y).get(0, c_i, t, h, w) - mean).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_input_softmax_keeps_interior_constant() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = cfg(27, (3, 3, 3), (3, 3, 3), GeneratorKind::ConvNet);
        c.activation = WeightActivation::Softmax;
        let block = HBlock::init(c, "h", &mut store, &mut rng).unwrap();
        // Randomize generator weights; softmax weights still sum to one.
        for id in store.param_ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape();
            let numel = shape.numel();
            *store.value_mut(id) = Tensor5::from_vec(
                shape,
                (0..numel).map(|_| rng.random_range(-0.5..0.5)).collect(),
            )
            .unwrap();
        }
        let xs = Shape5::new(1, 27, 5, 7, 7);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor5::full(xs, 2.5));
        let y = block.forward(&mut tape, x, &store).unwrap();
        // Positions at least one kernel half-width from every face are
        // untouched by padding: convex weights over a constant give the
        // constant back.
        for c_i in 0..27 {
            for t in 1..4 {
                for h in 1..6 {
                    for w in 1..6 {
                        let v = tape.value(y).get(0, c_i, t, h, w);
                        assert!((v - 2.5).abs() <= 1e-9, "got {v} at ({c_i},{t},{h},{w})");
                    }
                }
            }
        }
    }

    #[test]
    fn constructed_params_match_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kernel in KERNEL_MENU {
            for context in CONTEXT_MENU {
                let kext = (kernel.0 / 2, kernel.1 / 2, kernel.2 / 2);
                let cext = (context.0 / 2, context.1 / 2, context.2 / 2);
                if kext.0 > cext.0 || kext.1 > cext.1 || kext.2 > cext.2 {
                    continue;
                }
                for generator in [GeneratorKind::SingleConv, GeneratorKind::ConvNet] {
                    let channels = 64;
                    let r = kernel.0 * kernel.1 * kernel.2;
                    if generator == GeneratorKind::ConvNet && channels < r {
                        continue;
                    }
                    let c = cfg(channels, kernel, context, generator);
                    let mut store = ParamStore::<f64>::new();
                    let block = HBlock::init(c.clone(), "h", &mut store, &mut rng).unwrap();
                    assert_eq!(
                        store.param_scalar_count(),
                        block.param_count(),
                        "kernel {kernel:?} context {context:?} {generator:?}"
                    );
                }
            }
        }
    }
}
