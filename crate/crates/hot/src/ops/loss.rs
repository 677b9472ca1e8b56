//! Classification losses over (n, classes, 1, 1, 1) logits.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Scalar, Tensor5};
use crate::{Error, Result};

fn check_logits<T: Scalar>(tape: &Tape<T>, logits: Var, labels: &[usize]) -> Result<(usize, usize)> {
    let s = tape.shape(logits);
    if s.t != 1 || s.h != 1 || s.w != 1 {
        return Err(Error::Contract(format!(
            "loss expects (n,classes,1,1,1) logits, got {s}"
        )));
    }
    if labels.len() != s.n {
        return Err(Error::Contract(format!(
            "{} labels for batch of {}",
            labels.len(),
            s.n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s.c) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {} classes",
            s.c
        )));
    }
    Ok((s.n, s.c))
}

fn softmax_row<T: Scalar>(logits: &Tensor5<T>, n: usize, classes: usize) -> Vec<T> {
    let mut maxv = logits.get(n, 0, 0, 0, 0);
    for c in 1..classes {
        maxv = maxv.maximum(logits.get(n, c, 0, 0, 0));
    }
    let mut exps: Vec<T> = (0..classes)
        .map(|c| (logits.get(n, c, 0, 0, 0) - maxv).exp())
        .collect();
    let mut denom = T::ZERO;
    for &e in &exps {
        denom += e;
    }
    for e in &mut exps {
        *e = *e / denom;
    }
    exps
}

/// Mean over the batch of -log softmax(logits)[label], numerically
/// stabilized. Gradient is (softmax - one_hot) / batch.
pub fn cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
) -> Result<Var> {
    let (n, classes) = check_logits(tape, logits, labels)?;
    let value = {
        let lv = tape.value(logits);
        let mut total = 0.0f64;
        for i in 0..n {
            let mut maxv = lv.get(i, 0, 0, 0, 0);
            for c in 1..classes {
                maxv = maxv.maximum(lv.get(i, c, 0, 0, 0));
            }
            let mut denom = T::ZERO;
            for c in 0..classes {
                denom += (lv.get(i, c, 0, 0, 0) - maxv).exp();
            }
            let lse = maxv.to_f64() + denom.to_f64().ln();
            total += lse - lv.get(i, labels[i], 0, 0, 0).to_f64();
        }
        Tensor5::scalar(T::from_f64(total / n as f64))
    };
    let labels = labels.to_vec();
    Ok(tape.record(
        value,
        vec![logits],
        Box::new(move |ctx| {
            let lv = ctx.parents[0];
            let g = ctx.grad.data()[0];
            let scale = g / T::from_f64(labels.len() as f64);
            let mut dx = Tensor5::zeros(lv.shape());
            for (i, &label) in labels.iter().enumerate() {
                let probs = softmax_row(lv, i, classes);
                for c in 0..classes {
                    let one_hot = if c == label { T::ONE } else { T::ZERO };
                    dx.set(i, c, 0, 0, 0, (probs[c] - one_hot) * scale);
                }
            }
            Ok(vec![dx])
        }),
    ))
}

/// Multi-label sigmoid loss against one-hot targets, averaged over every
/// logit: max(z,0) - z*t + ln(1 + e^-|z|).
pub fn bce_with_logits<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
) -> Result<Var> {
    let (n, classes) = check_logits(tape, logits, labels)?;
    let count = (n * classes) as f64;
    let value = {
        let lv = tape.value(logits);
        let mut total = 0.0f64;
        for i in 0..n {
            for c in 0..classes {
                let z = lv.get(i, c, 0, 0, 0).to_f64();
                let t = if c == labels[i] { 1.0 } else { 0.0 };
                total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            }
        }
        Tensor5::scalar(T::from_f64(total / count))
    };
    let labels = labels.to_vec();
    Ok(tape.record(
        value,
        vec![logits],
        Box::new(move |ctx| {
            let lv = ctx.parents[0];
            let g = ctx.grad.data()[0].to_f64();
            let mut dx = Tensor5::zeros(lv.shape());
            for (i, &label) in labels.iter().enumerate() {
                for c in 0..classes {
                    let z = lv.get(i, c, 0, 0, 0).to_f64();
                    let t = if c == label { 1.0 } else { 0.0 };
                    let sigma = 1.0 / (1.0 + (-z).exp());
                    dx.set(i, c, 0, 0, 0, T::from_f64((sigma - t) * g / count));
                }
            }
            Ok(vec![dx])
        }),
    ))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<T: Scalar>(logits: &Tensor5<T>, labels: &[usize]) -> f64 {
    let s = logits.shape();
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let mut best = 0usize;
        let mut bestv = logits.get(i, 0, 0, 0, 0);
        for c in 1..s.c {
            let v = logits.get(i, c, 0, 0, 0);
            if v > bestv {
                bestv = v;
                best = c;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}
