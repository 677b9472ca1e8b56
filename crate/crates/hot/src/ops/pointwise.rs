//! Pointwise activations and the softmax over a flattened offset axis.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Scalar, Tensor5};
use crate::{Error, Result};

pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_LAMBDA: f64 = 1.0507009873554805;

/// Scaled exponential linear unit: lambda*x for x > 0, lambda*alpha*(e^x - 1)
/// otherwise.
pub fn selu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let lambda = T::from_f64(SELU_LAMBDA);
    let alpha = T::from_f64(SELU_ALPHA);
    let value = tape.value(x).map(|v| {
        if v > T::ZERO {
            lambda * v
        } else {
            lambda * alpha * (v.exp() - T::ONE)
        }
    });
    tape.record(
        value,
        vec![x],
        Box::new(move |ctx| {
            let x = ctx.parents[0];
            Ok(vec![ctx
                .grad
                .zip_with(x, |g, v| {
                    if v > T::ZERO {
                        g * lambda
                    } else {
                        g * lambda * alpha * v.exp()
                    }
                })
                .expect("grad and input share a shape")])
        }),
    )
}

pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let value = tape.value(x).map(|v| v.maximum(T::ZERO));
    tape.record(
        value,
        vec![x],
        Box::new(|ctx| {
            Ok(vec![ctx
                .grad
                .zip_with(ctx.parents[0], |g, v| if v > T::ZERO { g } else { T::ZERO })
                .expect("grad and input share a shape")])
        }),
    )
}

pub fn tanh<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let value = tape.value(x).map(|v| v.tanh());
    tape.record(
        value,
        vec![x],
        Box::new(|ctx| {
            // d tanh = 1 - tanh^2, read from the saved output.
            Ok(vec![ctx
                .grad
                .zip_with(ctx.value, |g, y| g * (T::ONE - y * y))
                .expect("grad and output share a shape")])
        }),
    )
}

/// Softmax across an offset axis stored flattened into channels as q*C + c:
/// for each (batch, channel, position) the `offsets` logits are normalized to
/// sum 1, stabilized by max subtraction.
pub fn softmax_over_offsets<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    offsets: usize,
) -> Result<Var> {
    let xs = tape.shape(x);
    if offsets == 0 || xs.c % offsets != 0 {
        return Err(Error::Shape(format!(
            "channel count {} is not a multiple of the {} kernel offsets",
            xs.c, offsets
        )));
    }
    let channels = xs.c / offsets;
    let value = {
        let xv = tape.value(x);
        let mut out = Tensor5::zeros(xs);
        for n in 0..xs.n {
            for c in 0..channels {
                for t in 0..xs.t {
                    for h in 0..xs.h {
                        for w in 0..xs.w {
                            let mut maxv = xv.get(n, c, t, h, w);
                            for q in 1..offsets {
                                maxv = maxv.maximum(xv.get(n, q * channels + c, t, h, w));
                            }
                            let mut denom = T::ZERO;
                            for q in 0..offsets {
                                denom += (xv.get(n, q * channels + c, t, h, w) - maxv).exp();
                            }
                            for q in 0..offsets {
                                let e = (xv.get(n, q * channels + c, t, h, w) - maxv).exp();
                                out.set(n, q * channels + c, t, h, w, e / denom);
                            }
                        }
                    }
                }
            }
        }
        out
    };
    Ok(tape.record(
        value,
        vec![x],
        Box::new(move |ctx| {
            let y = ctx.value;
            let g = ctx.grad;
            let s = y.shape();
            let mut dx = Tensor5::zeros(s);
            for n in 0..s.n {
                for c in 0..channels {
                    for t in 0..s.t {
                        for h in 0..s.h {
                            for w in 0..s.w {
                                let mut dot = T::ZERO;
                                for q in 0..offsets {
                                    let ch = q * channels + c;
                                    dot += g.get(n, ch, t, h, w) * y.get(n, ch, t, h, w);
                                }
                                for q in 0..offsets {
                                    let ch = q * channels + c;
                                    let v = y.get(n, ch, t, h, w)
                                        * (g.get(n, ch, t, h, w) - dot);
                                    dx.set(n, ch, t, h, w, v);
                                }
                            }
                        }
                    }
                }
            }
            Ok(vec![dx])
        }),
    ))
}
