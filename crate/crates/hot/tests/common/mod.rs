//! Independent naive-loop oracles and random-tensor helpers shared by the
//! oracle-equivalence and verification suites. These implementations follow
//! the operation definitions directly and never call the library's compute
//! paths.

#![allow(dead_code)]

use hot::tensor::{OffsetGrid, Shape5, Tensor5};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Shape5, rng: &mut ChaCha8Rng) -> Tensor5<f64> {
    Tensor5::from_vec(
        shape,
        (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Reference convolution: for every output cell, sum over in-group channels
/// and kernel offsets with zero padding and half-width alignment.
pub fn naive_conv3d(
    x: &Tensor5<f64>,
    weight: &Tensor5<f64>,
    bias: Option<&Tensor5<f64>>,
    in_channels: usize,
    out_channels: usize,
    grid: &OffsetGrid,
    groups: usize,
    stride: (usize, usize, usize),
) -> Tensor5<f64> {
    let xs = x.shape();
    let out_t = (xs.t + 2 * grid.extents().0 - (2 * grid.extents().0 + 1)) / stride.0 + 1;
    let out_h = (xs.h + 2 * grid.extents().1 - (2 * grid.extents().1 + 1)) / stride.1 + 1;
    let out_w = (xs.w + 2 * grid.extents().2 - (2 * grid.extents().2 + 1)) / stride.2 + 1;
    let mut out = Tensor5::zeros(Shape5::new(xs.n, out_channels, out_t, out_h, out_w));
    let ipg = in_channels / groups;
    let opg = out_channels / groups;
    let klen = grid.len();
    for n in 0..xs.n {
        for oc in 0..out_channels {
            for ot in 0..out_t {
                for oh in 0..out_h {
                    for ow in 0..out_w {
                        let mut acc = bias.map_or(0.0, |b| b.get(0, oc, 0, 0, 0));
                        for icl in 0..ipg {
                            let ic = (oc / opg) * ipg + icl;
                            for (k, &(dt, dh, dw)) in grid.offsets().iter().enumerate() {
                                let it = (ot * stride.0) as i64 + dt;
                                let ih = (oh * stride.1) as i64 + dh;
                                let iw = (ow * stride.2) as i64 + dw;
                                if it < 0
                                    || ih < 0
                                    || iw < 0
                                    || it as usize >= xs.t
                                    || ih as usize >= xs.h
                                    || iw as usize >= xs.w
                                {
                                    continue;
                                }
                                let wv = weight.data()[(oc * ipg + icl) * klen + k];
                                acc += wv
                                    * x.get(n, ic, it as usize, ih as usize, iw as usize);
                            }
                        }
                        out.set(n, oc, ot, oh, ow, acc);
                    }
                }
            }
        }
    }
    out
}

/// Reference dynamic depthwise application: y[n,c,p] = sum_q w[n,qC+c,p] *
/// x[n,c,p+q], seven explicit loops.
pub fn naive_dynamic_apply(
    x: &Tensor5<f64>,
    w: &Tensor5<f64>,
    kernel: &OffsetGrid,
) -> Tensor5<f64> {
    let xs = x.shape();
    let mut out = Tensor5::zeros(xs);
    for n in 0..xs.n {
        for c in 0..xs.c {
            for t in 0..xs.t {
                for h in 0..xs.h {
                    for wv in 0..xs.w {
                        let mut acc = 0.0;
                        for (q, &(dt, dh, dw)) in kernel.offsets().iter().enumerate() {
                            let it = t as i64 + dt;
                            let ih = h as i64 + dh;
                            let iw = wv as i64 + dw;
                            if it < 0
                                || ih < 0
                                || iw < 0
                                || it as usize >= xs.t
                                || ih as usize >= xs.h
                                || iw as usize >= xs.w
                            {
                                continue;
                            }
                            acc += w.get(n, q * xs.c + c, t, h, wv)
                                * x.get(n, c, it as usize, ih as usize, iw as usize);
                        }
                        out.set(n, c, t, h, wv, acc);
                    }
                }
            }
        }
    }
    out
}

/// Reference single-conv weight generation: w[q,c at p] = sum over context
/// offsets t and input channels c' of theta[q*C+c][c'][t] * x[c', p+t],
/// computed independently per (position, offset, channel).
pub fn naive_singleconv_weights(
    x: &Tensor5<f64>,
    theta: &Tensor5<f64>,
    r: usize,
    context: &OffsetGrid,
) -> Tensor5<f64> {
    let xs = x.shape();
    let channels = xs.c;
    let clen = context.len();
    let mut out = Tensor5::zeros(Shape5::new(xs.n, r * channels, xs.t, xs.h, xs.w));
    for n in 0..xs.n {
        for q in 0..r {
            for c in 0..channels {
                for t in 0..xs.t {
                    for h in 0..xs.h {
                        for w in 0..xs.w {
                            let mut acc = 0.0;
                            for cp in 0..channels {
                                for (k, &(dt, dh, dw)) in
                                    context.offsets().iter().enumerate()
                                {
                                    let it = t as i64 + dt;
                                    let ih = h as i64 + dh;
                                    let iw = w as i64 + dw;
                                    if it < 0
                                        || ih < 0
                                        || iw < 0
                                        || it as usize >= xs.t
                                        || ih as usize >= xs.h
                                        || iw as usize >= xs.w
                                    {
                                        continue;
                                    }
                                    let th =
                                        theta.data()[((q * channels + c) * channels + cp)
                                            * clen
                                            + k];
                                    acc += th
                                        * x.get(
                                            n,
                                            cp,
                                            it as usize,
                                            ih as usize,
                                            iw as usize,
                                        );
                                }
                            }
                            out.set(n, q * channels + c, t, h, w, acc);
                        }
                    }
                }
            }
        }
    }
    out
}
