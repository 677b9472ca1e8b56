//! Cost accounting (parameters and FLOPs), impulse-response receptive-field
//! probing, and feature-map export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::{ParamStore, Tape};
use crate::model::{Backbone, Mode};
use crate::ops::{self, ConvSpec};
use crate::tensor::{OffsetGrid, Scalar, Shape5, Tensor5};
use crate::{Error, Result};

/// One entry of a model walk: enough to price the layer.
#[derive(Clone, Debug)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub out_shape: Shape5,
    pub params: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum LayerKind {
    Conv { in_per_group: usize, kvol: usize },
    Norm,
    Activation,
    Pool,
    DynamicApply { offsets: usize },
    Add,
}

/// Whether a multiply-accumulate counts as one FLOP or two.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum Convention {
    #[serde(rename = "mac1")]
    Mac1,
    #[serde(rename = "mac2")]
    Mac2,
}

impl Convention {
    pub fn factor(self) -> u64 {
        match self {
            Convention::Mac1 => 1,
            Convention::Mac2 => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CostRow {
    pub name: String,
    pub out_shape: Shape5,
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug)]
pub struct CostReport {
    pub convention: Convention,
    pub rows: Vec<CostRow>,
    pub total_params: usize,
    pub total_flops: u64,
}

fn layer_flops(info: &LayerInfo, convention: Convention) -> u64 {
    let out_elems = info.out_shape.numel() as u64;
    match info.kind {
        LayerKind::Conv { in_per_group, kvol } => {
            out_elems * in_per_group as u64 * kvol as u64 * convention.factor()
        }
        LayerKind::DynamicApply { offsets } => out_elems * offsets as u64 * convention.factor(),
        LayerKind::Norm => 2 * out_elems,
        LayerKind::Activation | LayerKind::Pool | LayerKind::Add => out_elems,
    }
}

/// Prices every layer of the model at batch 1 over its configured input.
/// Convolution cost is out_elems * (in_channels/groups) * |kernel| MACs;
/// the dynamic apply costs out_elems * |R|; generators are priced as their
/// constituent convolutions; activations and pools at one op per element,
/// normalization at two.
pub fn count_costs(model: &Backbone, convention: Convention) -> Result<CostReport> {
    let rows: Vec<CostRow> = model
        .layer_walk(1)?
        .iter()
        .map(|info| CostRow {
            name: info.name.clone(),
            out_shape: info.out_shape,
            params: info.params,
            flops: layer_flops(info, convention),
        })
        .collect();
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_flops = rows.iter().map(|r| r.flops).sum();
    Ok(CostReport {
        convention,
        rows,
        total_params,
        total_flops,
    })
}

impl CostReport {
    pub fn row(&self, name: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut name_w = "layer".len();
        let mut shape_w = "output".len();
        for r in &self.rows {
            name_w = name_w.max(r.name.len());
            shape_w = shape_w.max(r.out_shape.to_string().len());
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<shape_w$}  {:>12}  {:>16}",
            "layer", "output", "params", "flops"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<shape_w$}  {:>12}  {:>16}",
                r.name,
                r.out_shape.to_string(),
                r.params,
                r.flops
            );
        }
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<shape_w$}  {:>12}  {:>16}",
            "total", "", self.total_params, self.total_flops
        );
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("layer\toutput\tparams\tflops\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.name, r.out_shape, r.params, r.flops
            );
        }
        let _ = writeln!(out, "total\t\t{}\t{}", self.total_params, self.total_flops);
        fs::write(path, out)?;
        Ok(())
    }
}

/// Measures the support of d y_center / d x for a stack of single-channel
/// convolutions with all-positive weights and no activations, by running the
/// gradient (transposed) pass on an impulse at the output center. Returns
/// per-axis half-widths of the nonzero support.
pub fn probe_receptive_field(
    kernels: &[(usize, usize, usize)],
    domain: Option<(usize, usize, usize)>,
) -> Result<(usize, usize, usize)> {
    if kernels.is_empty() {
        return Err(Error::Contract("probe needs at least one layer".into()));
    }
    let theory = kernels.iter().fold((0usize, 0usize, 0usize), |acc, k| {
        (acc.0 + k.0 / 2, acc.1 + k.1 / 2, acc.2 + k.2 / 2)
    });
    let domain = domain.unwrap_or((2 * theory.0 + 3, 2 * theory.1 + 3, 2 * theory.2 + 3));
    let shape = Shape5::new(1, 1, domain.0, domain.1, domain.2);
    let center = (domain.0 / 2, domain.1 / 2, domain.2 / 2);

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor5::zeros(shape));
    let mut y = x;
    for &k in kernels {
        let spec = ConvSpec::simple(1, 1, OffsetGrid::from_sizes(k.0, k.1, k.2)?);
        let w = tape.constant(Tensor5::full(spec.weight_shape(), 1.0));
        y = ops::conv3d(&mut tape, y, w, None, &spec)?;
    }
    let mut mask = Tensor5::zeros(shape);
    mask.set(0, 0, center.0, center.1, center.2, 1.0);
    let mask = tape.constant(mask);
    let picked = tape.mul(y, mask)?;
    let loss = tape.sum_all(picked);
    let grads = tape.backward_collect(loss)?;
    let gx = grads[0]
        .as_ref()
        .ok_or_else(|| Error::Contract("probe produced no input gradient".into()))?;

    let mut ext = (0usize, 0usize, 0usize);
    let mut clipped = false;
    for t in 0..domain.0 {
        for h in 0..domain.1 {
            for w in 0..domain.2 {
                if gx.get(0, 0, t, h, w) != 0.0 {
                    let dt = t.abs_diff(center.0);
                    let dh = h.abs_diff(center.1);
                    let dw = w.abs_diff(center.2);
                    ext = (ext.0.max(dt), ext.1.max(dh), ext.2.max(dw));
                    if t == 0
                        || h == 0
                        || w == 0
                        || t == domain.0 - 1
                        || h == domain.1 - 1
                        || w == domain.2 - 1
                    {
                        clipped = true;
                    }
                }
            }
        }
    }
    if clipped {
        return Err(Error::Contract(format!(
            "probe support reaches the domain border at {domain:?}; the probe must stay interior"
        )));
    }
    Ok(ext)
}

/// Receptive-field probe for an H-block generator: the factorized stack for
/// the ConvNet variant, the single context-sized kernel otherwise.
pub fn probe_generator_field(
    generator: crate::hblock::GeneratorKind,
    context: (usize, usize, usize),
) -> Result<(usize, usize, usize)> {
    match generator {
        crate::hblock::GeneratorKind::ConvNet => {
            let kernels = crate::hblock::context_factorization(context)?;
            probe_receptive_field(&kernels, None)
        }
        crate::hblock::GeneratorKind::SingleConv => probe_receptive_field(&[context], None),
    }
}

/// Writes one binary P5 graymap per frame of the named stage's activations:
/// channel-averaged absolute values, min-max normalized (mid-gray when the
/// range is zero), nearest-neighbor resized to the clip resolution.
pub fn dump_feature_maps<T: Scalar>(
    model: &Backbone,
    store: &mut ParamStore<T>,
    clip: &Tensor5<T>,
    stage: &str,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let cs = clip.shape();
    let mut tape = Tape::new();
    let x = tape.constant(clip.clone());
    let mut taps = Vec::new();
    model.forward_with_taps(&mut tape, x, store, Mode::Eval, &mut taps)?;
    let tap = taps
        .iter()
        .find(|(name, _)| name == stage)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown stage {stage:?}; available: {}",
                taps.iter()
                    .map(|(n, _)| n.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?
        .1;
    let act = tape.value(tap);
    let s = act.shape();
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for t in 0..s.t {
        // Channel-averaged absolute activation.
        let mut map = vec![0.0f64; s.h * s.w];
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    map[h * s.w + w] += act.get(0, c, t, h, w).to_f64().abs();
                }
            }
        }
        let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gray: Vec<u8> = if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            vec![128u8; map.len()]
        } else {
            map.iter()
                .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
                .collect()
        };
        // Nearest-neighbor resize to the clip resolution.
        let mut img = vec![0u8; cs.h * cs.w];
        for y in 0..cs.h {
            for x_ in 0..cs.w {
                let sy = y * s.h / cs.h;
                let sx = x_ * s.w / cs.w;
                img[y * cs.w + x_] = gray[sy * s.w + sx];
            }
        }
        let path = out_dir.join(format!("{stage}_frame{t:02}.pgm"));
        let mut bytes = format!("P5\n{} {}\n255\n", cs.w, cs.h).into_bytes();
        bytes.extend_from_slice(&img);
        fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}
