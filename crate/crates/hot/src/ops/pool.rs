//! Max pooling and global average pooling.

use crate::autodiff::{Tape, Var};
use crate::ops::conv_out_dim;
use crate::tensor::{Scalar, Shape5, Tensor5};
use crate::Result;

/// Max pooling with odd window sizes, half-width padding, and
/// ignore-padding semantics: out-of-volume cells never win the max.
pub fn maxpool3d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<Var> {
    let xs = tape.shape(x);
    let out_shape = Shape5::new(
        xs.n,
        xs.c,
        conv_out_dim(xs.t, window.0, stride.0)?,
        conv_out_dim(xs.h, window.1, stride.1)?,
        conv_out_dim(xs.w, window.2, stride.2)?,
    );
    let value = {
        let xv = tape.value(x);
        let mut out = Tensor5::zeros(out_shape);
        pool_scan(xv, out_shape, window, stride, |n, c, ot, oh, ow, best, _| {
            out.set(n, c, ot, oh, ow, best);
        });
        out
    };
    Ok(tape.record(
        value,
        vec![x],
        Box::new(move |ctx| {
            let xv = ctx.parents[0];
            let mut dx = Tensor5::zeros(xv.shape());
            let os = ctx.grad.shape();
            pool_scan(xv, os, window, stride, |n, c, ot, oh, ow, _, argmax| {
                let g = ctx.grad.get(n, c, ot, oh, ow);
                dx.data_mut()[argmax] += g;
            });
            Ok(vec![dx])
        }),
    ))
}

/// Shared forward/backward scan: visits every output cell with its window max
/// and the flat index of the first maximal input cell.
fn pool_scan<T: Scalar>(
    x: &Tensor5<T>,
    out_shape: Shape5,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
    mut visit: impl FnMut(usize, usize, usize, usize, usize, T, usize),
) {
    let xs = x.shape();
    let pad = (window.0 / 2, window.1 / 2, window.2 / 2);
    for n in 0..out_shape.n {
        for c in 0..out_shape.c {
            for ot in 0..out_shape.t {
                for oh in 0..out_shape.h {
                    for ow in 0..out_shape.w {
                        let mut best: Option<(T, usize)> = None;
                        for kt in 0..window.0 {
                            let it = (ot * stride.0 + kt) as i64 - pad.0 as i64;
                            if it < 0 || it as usize >= xs.t {
                                continue;
                            }
                            for kh in 0..window.1 {
                                let ih = (oh * stride.1 + kh) as i64 - pad.1 as i64;
                                if ih < 0 || ih as usize >= xs.h {
                                    continue;
                                }
                                for kw in 0..window.2 {
                                    let iw = (ow * stride.2 + kw) as i64 - pad.2 as i64;
                                    if iw < 0 || iw as usize >= xs.w {
                                        continue;
                                    }
                                    let v =
                                        x.get(n, c, it as usize, ih as usize, iw as usize);
                                    let flat =
                                        xs.flat(n, c, it as usize, ih as usize, iw as usize);
                                    // Strict > keeps the first maximal cell on ties.
                                    match best {
                                        Some((b, _)) if !(v > b) => {}
                                        _ => best = Some((v, flat)),
                                    }
                                }
                            }
                        }
                        let (v, flat) = best.expect("window always overlaps the volume");
                        visit(n, c, ot, oh, ow, v, flat);
                    }
                }
            }
        }
    }
}

/// Reduces (t, h, w) to (1, 1, 1) by arithmetic mean.
pub fn global_avg_pool<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let xs = tape.shape(x);
    let count = T::from_f64((xs.t * xs.h * xs.w) as f64);
    let value = {
        let xv = tape.value(x);
        let mut out = Tensor5::zeros(Shape5::new(xs.n, xs.c, 1, 1, 1));
        for n in 0..xs.n {
            for c in 0..xs.c {
                let mut acc = T::ZERO;
                for t in 0..xs.t {
                    for h in 0..xs.h {
                        for w in 0..xs.w {
                            acc += xv.get(n, c, t, h, w);
                        }
                    }
                }
                out.set(n, c, 0, 0, 0, acc / count);
            }
        }
        out
    };
    tape.record(
        value,
        vec![x],
        Box::new(move |ctx| {
            let s = ctx.parents[0].shape();
            let mut dx = Tensor5::zeros(s);
            for n in 0..s.n {
                for c in 0..s.c {
                    let g = ctx.grad.get(n, c, 0, 0, 0) / count;
                    for t in 0..s.t {
                        for h in 0..s.h {
                            for w in 0..s.w {
                                dx.set(n, c, t, h, w, g);
                            }
                        }
                    }
                }
            }
            Ok(vec![dx])
        }),
    )
}
