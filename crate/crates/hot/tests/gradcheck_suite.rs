//! Finite-difference verification of every backward rule, plus planted-bug
//! tests proving the checker catches severed gradient paths.

mod common;

use common::{naive_dynamic_apply, random_tensor, rng};
use hot::autodiff::{gradcheck, GradcheckOpts, ParamStore};
use hot::hblock::{GeneratorKind, HBlock, HBlockConfig, WeightActivation};
use hot::ops;
use hot::tensor::{OffsetGrid, Shape5, Tensor5};

#[test]
fn full_op_battery_passes() {
    for check in hot::checks::op_suite() {
        let report = (check.runner)().unwrap_or_else(|e| panic!("{} errored: {e}", check.name));
        assert!(
            report.pass,
            "{} failed: max rel err {:.3e} at {:?}",
            check.name,
            report.max_rel_err,
            report.worst()
        );
    }
}

/// Builds the single-conv block forward but replaces the apply node's
/// backward with one that zeroes either the content-path (x) or the
/// context-path (w) gradient. Either sabotage must break the check.
fn run_severed(zero_content: bool) -> bool {
    let mut rng = rng(300);
    let kernel = OffsetGrid::from_sizes(3, 1, 1).unwrap();
    let context = OffsetGrid::from_sizes(3, 3, 3).unwrap();
    let cfg = HBlockConfig {
        channels: 2,
        kernel: kernel.clone(),
        context,
        generator: GeneratorKind::SingleConv,
        activation: WeightActivation::Softmax,
        residual: false,
    };
    let mut store = ParamStore::<f64>::new();
    let block = HBlock::init(cfg, "h", &mut store, &mut rng).unwrap();
    let theta = store.param_ids().next().unwrap();
    let tshape = store.value(theta).shape();
    *store.value_mut(theta) = random_tensor(tshape, &mut rng);
    let x = store
        .add_param("x", random_tensor(Shape5::new(1, 2, 3, 4, 4), &mut rng), true)
        .unwrap();

    let kernel2 = kernel.clone();
    let report = gradcheck(&mut store, GradcheckOpts::default(), move |tape, store| {
        let xv = tape.param(store, x);
        let logits = block.generate_weights(tape, xv, store)?;
        let weights = block.activate(tape, logits)?;
        let kernel = kernel2.clone();
        let value = naive_dynamic_apply(tape.value(xv), tape.value(weights.var), &kernel);
        let y = tape.record(
            value,
            vec![xv, weights.var],
            Box::new(move |ctx| {
                let (xv, wv) = (ctx.parents[0], ctx.parents[1]);
                let xs = xv.shape();
                let mut dx = Tensor5::zeros(xs);
                let mut dw = Tensor5::zeros(wv.shape());
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        for t in 0..xs.t {
                            for h in 0..xs.h {
                                for w in 0..xs.w {
                                    let g = ctx.grad.get(n, c, t, h, w);
                                    for (q, &(dt, dh, dw_)) in
                                        kernel.offsets().iter().enumerate()
                                    {
                                        let it = t as i64 + dt;
                                        let ih = h as i64 + dh;
                                        let iw = w as i64 + dw_;
                                        if it < 0
                                            || ih < 0
                                            || iw < 0
                                            || it as usize >= xs.t
                                            || ih as usize >= xs.h
                                            || iw as usize >= xs.w
                                        {
                                            continue;
                                        }
                                        let (it, ih, iw) =
                                            (it as usize, ih as usize, iw as usize);
                                        let wq = q * xs.c + c;
                                        let dwi = wv.shape().flat(n, wq, t, h, w);
                                        dw.data_mut()[dwi] += g * xv.get(n, c, it, ih, iw);
                                        let dxi = xs.flat(n, c, it, ih, iw);
                                        dx.data_mut()[dxi] += g * wv.get(n, wq, t, h, w);
                                    }
                                }
                            }
                        }
                    }
                }
                if zero_content {
                    dx = Tensor5::zeros(xs);
                } else {
                    dw = Tensor5::zeros(wv.shape());
                }
                Ok(vec![dx, dw])
            }),
        );
        Ok(tape.mean_all(y))
    })
    .unwrap();
    report.pass
}

#[test]
fn severed_content_path_fails_gradcheck() {
    assert!(!run_severed(true), "zeroed content-path gradient went undetected");
}

#[test]
fn severed_context_path_fails_gradcheck() {
    assert!(!run_severed(false), "zeroed context-path gradient went undetected");
}

#[test]
fn intact_paths_pass_the_same_harness() {
    // Control for the two tests above: the genuine op under the identical
    // harness passes, so the failures are attributable to the sabotage.
    let mut rng = rng(300);
    let kernel = OffsetGrid::from_sizes(3, 1, 1).unwrap();
    let context = OffsetGrid::from_sizes(3, 3, 3).unwrap();
    let cfg = HBlockConfig {
        channels: 2,
        kernel: kernel.clone(),
        context,
        generator: GeneratorKind::SingleConv,
        activation: WeightActivation::Softmax,
        residual: false,
    };
    let mut store = ParamStore::<f64>::new();
    let block = HBlock::init(cfg, "h", &mut store, &mut rng).unwrap();
    let theta = store.param_ids().next().unwrap();
    let tshape = store.value(theta).shape();
    *store.value_mut(theta) = random_tensor(tshape, &mut rng);
    let x = store
        .add_param("x", random_tensor(Shape5::new(1, 2, 3, 4, 4), &mut rng), true)
        .unwrap();
    let report = gradcheck(&mut store, GradcheckOpts::default(), move |tape, store| {
        let xv = tape.param(store, x);
        let y = block.forward(tape, xv, store)?;
        Ok(tape.mean_all(y))
    })
    .unwrap();
    assert!(report.pass, "max rel err {:.3e}", report.max_rel_err);
}

#[test]
fn gradcheck_reports_nan_with_coordinate() {
    let mut store = ParamStore::<f64>::new();
    let p = store
        .add_param("p", Tensor5::scalar(0.5), true)
        .unwrap();
    let err = gradcheck(&mut store, GradcheckOpts::default(), move |tape, store| {
        let pv = tape.param(store, p);
        // ln is NaN for negative perturbations of a tiny value; force it.
        let shifted = tape.scale(pv, -1.0);
        let value = tape.value(shifted).map(|v| v.ln());
        let bad = tape.record(value, vec![shifted], Box::new(|ctx| Ok(vec![ctx.grad.clone()])));
        Ok(tape.sum_all(bad))
    });
    match err {
        Err(hot::Error::NonFinite(msg)) => assert!(msg.contains("p[0]"), "msg: {msg}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn batchnorm_gradcheck_through_batch_statistics() {
    // Composite normalization differentiates through mean and variance.
    let mut rng = rng(301);
    let mut store = ParamStore::<f64>::new();
    let x = store
        .add_param("x", random_tensor(Shape5::new(2, 3, 2, 3, 3), &mut rng), true)
        .unwrap();
    let bn = ops::batchnorm_init(&mut store, "bn", 3, false).unwrap();
    let gshape = store.value(bn.gamma).shape();
    *store.value_mut(bn.gamma) = random_tensor(gshape, &mut rng);
    let report = gradcheck(&mut store, GradcheckOpts::default(), move |tape, store| {
        let xv = tape.param(store, x);
        let y = ops::batchnorm(tape, xv, &bn, store, true)?;
        let sq = tape.mul(y, y)?;
        Ok(tape.mean_all(sq))
    })
    .unwrap();
    assert!(report.pass, "max rel err {:.3e}", report.max_rel_err);
}
