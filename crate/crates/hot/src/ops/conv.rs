//! Grouped, strided 3-D convolution with half-width zero padding, and the
//! linear head built on top of it.

use crate::autodiff::{Tape, Var};
use crate::tensor::{OffsetGrid, Scalar, Shape5, Tensor5};
use crate::{Error, Result};

/// Static description of a convolution: channel counts, kernel support,
/// grouping, stride, and bias presence. Padding is always the kernel
/// half-width per axis, so stride-1 convolutions preserve spatiotemporal
/// dims and stride-s ones produce ceil(in/s).
#[derive(Clone, Debug)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub grid: OffsetGrid,
    pub groups: usize,
    pub stride: (usize, usize, usize),
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        grid: OffsetGrid,
        groups: usize,
        stride: (usize, usize, usize),
        bias: bool,
    ) -> Result<ConvSpec> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Config(format!(
                "channels ({in_channels} in, {out_channels} out) must divide into {groups} groups"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 || stride.2 == 0 {
            return Err(Error::Config("stride components must be positive".into()));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            grid,
            groups,
            stride,
            bias,
        })
    }

    /// Stride-1 unit-group convolution, the common case.
    pub fn simple(in_channels: usize, out_channels: usize, grid: OffsetGrid) -> ConvSpec {
        ConvSpec::new(in_channels, out_channels, grid, 1, (1, 1, 1), false)
            .expect("groups=1 always divides")
    }

    /// Weight tensor layout: (out_channels, in_channels/groups, k_t, k_h, k_w),
    /// kernel coefficients in the grid's lexicographic offset order.
    pub fn weight_shape(&self) -> Shape5 {
        let (st, sh, sw) = self.grid.sizes();
        Shape5::new(
            self.out_channels,
            self.in_channels / self.groups,
            st,
            sh,
            sw,
        )
    }

    pub fn bias_shape(&self) -> Shape5 {
        Shape5::new(1, self.out_channels, 1, 1, 1)
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().numel()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.out_channels } else { 0 }
    }

    pub fn output_shape(&self, input: Shape5) -> Result<Shape5> {
        if input.c != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.c
            )));
        }
        let (kt, kh, kw) = self.grid.sizes();
        let t = conv_out_dim(input.t, kt, self.stride.0)?;
        let h = conv_out_dim(input.h, kh, self.stride.1)?;
        let w = conv_out_dim(input.w, kw, self.stride.2)?;
        Ok(Shape5::new(input.n, self.out_channels, t, h, w))
    }
}

/// Output length along one axis with half-width padding: for odd kernels this
/// is ceil(in/stride).
pub fn conv_out_dim(input: usize, ksize: usize, stride: usize) -> Result<usize> {
    let padded = input + 2 * (ksize / 2);
    if padded < ksize {
        return Err(Error::Shape(format!(
            "window {ksize} larger than padded input {padded}"
        )));
    }
    Ok((padded - ksize) / stride + 1)
}

/// Flat offsets of the kernel taps within one channel volume.
fn flat_taps(grid: &OffsetGrid, plane: usize, row: usize) -> Vec<i64> {
    grid.offsets()
        .iter()
        .map(|&(dt, dh, dw)| dt * (plane as i64) + dh * (row as i64) + dw)
        .collect()
}

/// y[n,o,p] = bias[o] + sum over in-group channels ci and offsets q of
/// W[o,ci,q] * x[n,ci,p*stride+q], reading zero outside the volume.
/// Fully interior positions take a branch-free path over precomputed flat
/// tap offsets; border positions fall back to per-tap bounds checks.
pub fn conv3d_forward<T: Scalar>(
    x: &Tensor5<T>,
    weight: &Tensor5<T>,
    bias: Option<&Tensor5<T>>,
    spec: &ConvSpec,
) -> Result<Tensor5<T>> {
    let xs = x.shape();
    let out_shape = spec.output_shape(xs)?;
    if weight.shape() != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "conv weight shape {} does not match spec {}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != spec.bias_shape() {
            return Err(Error::Shape(format!(
                "conv bias shape {} does not match spec {}",
                b.shape(),
                spec.bias_shape()
            )));
        }
    }
    let mut out = Tensor5::zeros(out_shape);
    let offsets = spec.grid.offsets();
    let klen = offsets.len();
    let (kt, kh, kw) = spec.grid.extents();
    let ipg = spec.in_channels / spec.groups;
    let opg = spec.out_channels / spec.groups;
    let (s_t, s_h, s_w) = spec.stride;
    let (row, plane) = (xs.w, xs.h * xs.w);
    let vol = xs.t * plane;
    let taps = flat_taps(&spec.grid, plane, row);
    let wdata = weight.data();
    let xdata = x.data();
    let odata = out.data_mut();
    let mut oi = 0usize;
    for n in 0..xs.n {
        let xn = n * xs.c * vol;
        for oc in 0..spec.out_channels {
            let ic0 = (oc / opg) * ipg;
            let b = bias.map_or(T::ZERO, |b| b.data()[oc]);
            for ot in 0..out_shape.t {
                let bt = ot * s_t;
                let t_in = bt >= kt && bt + kt < xs.t;
                for oh in 0..out_shape.h {
                    let bh = oh * s_h;
                    let h_in = bh >= kh && bh + kh < xs.h;
                    for ow in 0..out_shape.w {
                        let bw = ow * s_w;
                        let mut acc = b;
                        if t_in && h_in && bw >= kw && bw + kw < xs.w {
                            let p0 = (xn + ic0 * vol + bt * plane + bh * row + bw) as i64;
                            for icl in 0..ipg {
                                let base = p0 + (icl * vol) as i64;
                                let wrow = &wdata[(oc * ipg + icl) * klen..][..klen];
                                for (w, &tp) in wrow.iter().zip(&taps) {
                                    acc += *w * xdata[(base + tp) as usize];
                                }
                            }
                        } else {
                            let (bt, bh, bw) = (bt as i64, bh as i64, bw as i64);
                            for icl in 0..ipg {
                                let ic = ic0 + icl;
                                let wbase = (oc * ipg + icl) * klen;
                                for (k, &(dt, dh, dw)) in offsets.iter().enumerate() {
                                    let (it, ih, iw) = (bt + dt, bh + dh, bw + dw);
                                    if it < 0
                                        || ih < 0
                                        || iw < 0
                                        || it as usize >= xs.t
                                        || ih as usize >= xs.h
                                        || iw as usize >= xs.w
                                    {
                                        continue;
                                    }
                                    acc += wdata[wbase + k]
                                        * xdata[xn
                                            + ic * vol
                                            + it as usize * plane
                                            + ih as usize * row
                                            + iw as usize];
                                }
                            }
                        }
                        odata[oi] = acc;
                        oi += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::type_complexity)]
fn conv3d_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    x: &Tensor5<T>,
    weight: &Tensor5<T>,
    spec: &ConvSpec,
) -> Result<(Tensor5<T>, Tensor5<T>, Option<Tensor5<T>>)> {
    let xs = x.shape();
    let os = grad_out.shape();
    let mut dx = Tensor5::zeros(xs);
    let mut dw = Tensor5::zeros(weight.shape());
    let mut db = spec.bias.then(|| Tensor5::zeros(spec.bias_shape()));
    let offsets = spec.grid.offsets();
    let klen = offsets.len();
    let (kt, kh, kw) = spec.grid.extents();
    let ipg = spec.in_channels / spec.groups;
    let opg = spec.out_channels / spec.groups;
    let (s_t, s_h, s_w) = spec.stride;
    let (row, plane) = (xs.w, xs.h * xs.w);
    let vol = xs.t * plane;
    let taps = flat_taps(&spec.grid, plane, row);
    let wdata = weight.data();
    let xdata = x.data();
    let gdata = grad_out.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    let mut gi = 0usize;
    for n in 0..xs.n {
        let xn = n * xs.c * vol;
        for oc in 0..spec.out_channels {
            let ic0 = (oc / opg) * ipg;
            let mut db_acc = T::ZERO;
            for ot in 0..os.t {
                let bt = ot * s_t;
                let t_in = bt >= kt && bt + kt < xs.t;
                for oh in 0..os.h {
                    let bh = oh * s_h;
                    let h_in = bh >= kh && bh + kh < xs.h;
                    for ow in 0..os.w {
                        let bw = ow * s_w;
                        let g = gdata[gi];
                        gi += 1;
                        db_acc += g;
                        if t_in && h_in && bw >= kw && bw + kw < xs.w {
                            let p0 = (xn + ic0 * vol + bt * plane + bh * row + bw) as i64;
                            for icl in 0..ipg {
                                let base = p0 + (icl * vol) as i64;
                                let wbase = (oc * ipg + icl) * klen;
                                for (k, &tp) in taps.iter().enumerate() {
                                    let xi = (base + tp) as usize;
                                    dwd[wbase + k] += g * xdata[xi];
                                    dxd[xi] += g * wdata[wbase + k];
                                }
                            }
                        } else {
                            let (bt, bh, bw) = (bt as i64, bh as i64, bw as i64);
                            for icl in 0..ipg {
                                let ic = ic0 + icl;
                                let wbase = (oc * ipg + icl) * klen;
                                for (k, &(dt, dh, dw_)) in offsets.iter().enumerate() {
                                    let (it, ih, iw) = (bt + dt, bh + dh, bw + dw_);
                                    if it < 0
                                        || ih < 0
                                        || iw < 0
                                        || it as usize >= xs.t
                                        || ih as usize >= xs.h
                                        || iw as usize >= xs.w
                                    {
                                        continue;
                                    }
                                    let xi = xn
                                        + ic * vol
                                        + it as usize * plane
                                        + ih as usize * row
                                        + iw as usize;
                                    dwd[wbase + k] += g * xdata[xi];
                                    dxd[xi] += g * wdata[wbase + k];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(db) = db.as_mut() {
                db.data_mut()[oc] += db_acc;
            }
        }
    }
    Ok((dx, dw, db))
}

/// Records a convolution on the tape. Wherever padding is implied it is the
/// kernel half-width per axis.
pub fn conv3d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    spec: &ConvSpec,
) -> Result<Var> {
    if spec.bias != bias.is_some() {
        return Err(Error::Contract(format!(
            "spec.bias={} but bias var {}",
            spec.bias,
            if bias.is_some() { "given" } else { "missing" }
        )));
    }
    let value = conv3d_forward(
        tape.value(x),
        tape.value(weight),
        bias.map(|b| tape.value(b)),
        spec,
    )?;
    let mut parents = vec![x, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    let spec = spec.clone();
    Ok(tape.record(
        value,
        parents,
        Box::new(move |ctx| {
            let (dx, dw, db) = conv3d_backward(ctx.grad, ctx.parents[0], ctx.parents[1], &spec)?;
            let mut grads = vec![dx, dw];
            if let Some(db) = db {
                grads.push(db);
            }
            Ok(grads)
        }),
    ))
}

/// Fully connected head over the channel axis of a (n, c, 1, 1, 1) tensor.
/// Weight layout (out, in, 1, 1, 1); bias (1, out, 1, 1, 1).
pub fn linear<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let xs = tape.shape(x);
    if xs.t != 1 || xs.h != 1 || xs.w != 1 {
        return Err(Error::Contract(format!(
            "linear expects pooled (n,c,1,1,1) input, got {xs}"
        )));
    }
    let ws = tape.shape(weight);
    let spec = ConvSpec::new(
        xs.c,
        ws.n,
        OffsetGrid::from_extents(0, 0, 0),
        1,
        (1, 1, 1),
        bias.is_some(),
    )?;
    conv3d(tape, x, weight, bias, &spec)
}
