//! Channel-broadcast primitives and the switchable batch normalization
//! built from them. Building the normalization out of differentiable
//! primitives gives the batch-statistics gradient for free.

use crate::autodiff::{BufId, ParamId, ParamStore, Tape, Var};
use crate::tensor::{Scalar, Shape5, Tensor5};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel mean over (batch, t, h, w): (n, C, t, h, w) -> (1, C, 1, 1, 1).
pub fn channel_mean<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let xs = tape.shape(x);
    let count = T::from_f64((xs.n * xs.t * xs.h * xs.w) as f64);
    let value = {
        let xv = tape.value(x);
        let mut out = Tensor5::zeros(Shape5::new(1, xs.c, 1, 1, 1));
        for c in 0..xs.c {
            let mut acc = T::ZERO;
            for n in 0..xs.n {
                for t in 0..xs.t {
                    for h in 0..xs.h {
                        for w in 0..xs.w {
                            acc += xv.get(n, c, t, h, w);
                        }
                    }
                }
            }
            out.set(0, c, 0, 0, 0, acc / count);
        }
        out
    };
    tape.record(
        value,
        vec![x],
        Box::new(move |ctx| {
            let s = ctx.parents[0].shape();
            let mut dx = Tensor5::zeros(s);
            for c in 0..s.c {
                let g = ctx.grad.get(0, c, 0, 0, 0) / count;
                for n in 0..s.n {
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

fn check_cvec<T: Scalar>(tape: &Tape<T>, x: Var, v: Var) -> Result<Shape5> {
    let xs = tape.shape(x);
    let vs = tape.shape(v);
    if vs != Shape5::new(1, xs.c, 1, 1, 1) {
        return Err(Error::Shape(format!(
            "channel vector shape {vs} does not broadcast over {xs}"
        )));
    }
    Ok(xs)
}

/// x * v with v broadcast from (1, C, 1, 1, 1) over (n, C, t, h, w).
pub fn mul_cvec<T: Scalar>(tape: &mut Tape<T>, x: Var, v: Var) -> Result<Var> {
    let xs = check_cvec(tape, x, v)?;
    let value = {
        let xv = tape.value(x);
        let vv = tape.value(v);
        let mut out = Tensor5::zeros(xs);
        broadcast_loop(xs, |n, c, t, h, w| {
            out.set(n, c, t, h, w, xv.get(n, c, t, h, w) * vv.get(0, c, 0, 0, 0));
        });
        out
    };
    Ok(tape.record(
        value,
        vec![x, v],
        Box::new(move |ctx| {
            let (xv, vv) = (ctx.parents[0], ctx.parents[1]);
            let mut dx = Tensor5::zeros(xs);
            let mut dv = Tensor5::zeros(vv.shape());
            broadcast_loop(xs, |n, c, t, h, w| {
                let g = ctx.grad.get(n, c, t, h, w);
                dx.set(n, c, t, h, w, g * vv.get(0, c, 0, 0, 0));
                let acc = dv.get(0, c, 0, 0, 0) + g * xv.get(n, c, t, h, w);
                dv.set(0, c, 0, 0, 0, acc);
            });
            Ok(vec![dx, dv])
        }),
    ))
}

/// x + v with v broadcast from (1, C, 1, 1, 1).
pub fn add_cvec<T: Scalar>(tape: &mut Tape<T>, x: Var, v: Var) -> Result<Var> {
    let xs = check_cvec(tape, x, v)?;
    let value = {
        let xv = tape.value(x);
        let vv = tape.value(v);
        let mut out = Tensor5::zeros(xs);
        broadcast_loop(xs, |n, c, t, h, w| {
            out.set(n, c, t, h, w, xv.get(n, c, t, h, w) + vv.get(0, c, 0, 0, 0));
        });
        out
    };
    Ok(tape.record(
        value,
        vec![x, v],
        Box::new(move |ctx| {
            let mut dv = Tensor5::zeros(ctx.parents[1].shape());
            broadcast_loop(xs, |n, c, t, h, w| {
                let acc = dv.get(0, c, 0, 0, 0) + ctx.grad.get(n, c, t, h, w);
                dv.set(0, c, 0, 0, 0, acc);
            });
            Ok(vec![ctx.grad.clone(), dv])
        }),
    ))
}

fn broadcast_loop(s: Shape5, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    for n in 0..s.n {
        for c in 0..s.c {
            for t in 0..s.t {
                for h in 0..s.h {
                    for w in 0..s.w {
                        f(n, c, t, h, w);
                    }
                }
            }
        }
    }
}

/// Pointwise 1/sqrt(v + eps).
pub fn rsqrt_shift<T: Scalar>(tape: &mut Tape<T>, v: Var, eps: f64) -> Var {
    let eps = T::from_f64(eps);
    let value = tape.value(v).map(|x| T::ONE / (x + eps).sqrt());
    tape.record(
        value,
        vec![v],
        Box::new(move |ctx| {
            // d/dv (v+eps)^-1/2 = -1/2 (v+eps)^-3/2 = -y^3 / 2.
            let half = T::from_f64(0.5);
            Ok(vec![ctx
                .grad
                .zip_with(ctx.value, |g, y| -(g * half * y * y * y))
                .expect("grad and output share a shape")])
        }),
    )
}

/// Batch normalization parameters and running statistics. Presence is
/// decided by the model: layers hold `Option<BatchNorm>` and pass `None`
/// for the identity ("off") mode.
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufId,
    pub running_var: BufId,
    pub channels: usize,
}

/// Creates gamma/beta parameters (no weight decay) and (0, 1) running
/// statistics. `gamma_zero` supports zero-initialized residual scales.
pub fn batchnorm_init<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    gamma_zero: bool,
) -> Result<BatchNorm> {
    let cs = Shape5::new(1, channels, 1, 1, 1);
    let gamma_val = if gamma_zero {
        Tensor5::zeros(cs)
    } else {
        Tensor5::full(cs, T::ONE)
    };
    let gamma = store.add_param(&format!("{prefix}.gamma"), gamma_val, false)?;
    let beta = store.add_param(&format!("{prefix}.beta"), Tensor5::zeros(cs), false)?;
    let running_mean = store.add_buffer(&format!("{prefix}.running_mean"), Tensor5::zeros(cs))?;
    let running_var =
        store.add_buffer(&format!("{prefix}.running_var"), Tensor5::full(cs, T::ONE))?;
    Ok(BatchNorm {
        gamma,
        beta,
        running_mean,
        running_var,
        channels,
    })
}

/// Training mode normalizes with differentiable batch statistics and updates
/// the running buffers; eval mode normalizes with the stored statistics, so
/// repeated eval passes are identical.
pub fn batchnorm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    bn: &BatchNorm,
    store: &mut ParamStore<T>,
    training: bool,
) -> Result<Var> {
    let xs = tape.shape(x);
    if xs.c != bn.channels {
        return Err(Error::Shape(format!(
            "batchnorm over {} channels applied to {xs}",
            bn.channels
        )));
    }
    let gamma = tape.param(store, bn.gamma);
    let beta = tape.param(store, bn.beta);
    let xhat = if training {
        let m = channel_mean(tape, x);
        let neg_m = tape.scale(m, -T::ONE);
        let centered = add_cvec(tape, x, neg_m)?;
        let sq = tape.mul(centered, centered)?;
        let var = channel_mean(tape, sq);
        // Detached running-statistics update.
        let momentum = T::from_f64(BN_MOMENTUM);
        let keep = T::ONE - momentum;
        let m_val = tape.value(m).clone();
        let v_val = tape.value(var).clone();
        let rm = store.buffer_mut(bn.running_mean);
        *rm = rm
            .scale(keep)
            .add(&m_val.scale(momentum))
            .expect("running mean shape is fixed");
        let rv = store.buffer_mut(bn.running_var);
        *rv = rv
            .scale(keep)
            .add(&v_val.scale(momentum))
            .expect("running var shape is fixed");
        let inv = rsqrt_shift(tape, var, BN_EPS);
        mul_cvec(tape, centered, inv)?
    } else {
        let rm = store.buffer(bn.running_mean).scale(-T::ONE);
        let inv = store
            .buffer(bn.running_var)
            .map(|v| T::ONE / (v + T::from_f64(BN_EPS)).sqrt());
        let neg_mean = tape.constant(rm);
        let inv = tape.constant(inv);
        let centered = add_cvec(tape, x, neg_mean)?;
        mul_cvec(tape, centered, inv)?
    };
    let scaled = mul_cvec(tape, xhat, gamma)?;
    add_cvec(tape, scaled, beta)
}
