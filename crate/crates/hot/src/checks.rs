//! The standard finite-difference battery over every differentiable op and
//! every H-block variant, shared by the CLI gradcheck subcommand and the
//! verification suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, GradcheckOpts, GradcheckReport, ParamStore};
use crate::hblock::{DynamicWeights, GeneratorKind, HBlock, HBlockConfig, WeightActivation};
use crate::ops::{self, ConvSpec};
use crate::tensor::{OffsetGrid, Shape5, Tensor5};
use crate::Result;

type Runner = Box<dyn Fn() -> Result<GradcheckReport>>;

pub struct OpCheck {
    pub name: String,
    pub runner: Runner,
}

fn random_tensor(shape: Shape5, rng: &mut ChaCha8Rng) -> Tensor5<f64> {
    Tensor5::from_vec(
        shape,
        (0..shape.numel()).map(|_| rng.random_range(-0.9..0.9)).collect(),
    )
    .expect("generated data matches shape")
}

fn add_random(
    store: &mut ParamStore<f64>,
    name: &str,
    shape: Shape5,
    rng: &mut ChaCha8Rng,
) -> crate::autodiff::ParamId {
    store
        .add_param(name, random_tensor(shape, rng), true)
        .expect("fresh store has no duplicate names")
}

fn opts() -> GradcheckOpts {
    GradcheckOpts::default()
}

/// Randomizes every parameter of a built block so activation kinks and the
/// zero-initialized final layer sit in general position.
fn scramble(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for id in store.param_ids().collect::<Vec<_>>() {
        let shape = store.value(id).shape();
        *store.value_mut(id) = random_tensor(shape, rng);
    }
}

fn hblock_check(
    generator: GeneratorKind,
    activation: WeightActivation,
    kernel: (usize, usize, usize),
    residual: bool,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut store = ParamStore::new();
    let cfg = HBlockConfig {
        channels: 4,
        kernel: OffsetGrid::from_sizes(kernel.0, kernel.1, kernel.2)?,
        context: OffsetGrid::from_sizes(3, 3, 3)?,
        generator,
        activation,
        residual,
    };
    let block = HBlock::init(cfg, "h", &mut store, &mut rng)?;
    scramble(&mut store, &mut rng);
    let x = add_random(&mut store, "x", Shape5::new(2, 4, 3, 5, 5), &mut rng);
    gradcheck(&mut store, opts(), move |tape, store| {
        let xv = tape.param(store, x);
        let y = block.forward(tape, xv, store)?;
        Ok(tape.mean_all(y))
    })
}

/// Every differentiable op and H-block variant with its own named check.
pub fn op_suite() -> Vec<OpCheck> {
    let mut suite: Vec<OpCheck> = Vec::new();
    let mut push = |name: &str, runner: Runner| {
        suite.push(OpCheck {
            name: name.to_string(),
            runner,
        });
    };

    push(
        "elementwise_add_mul_scale",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut store = ParamStore::new();
            let shape = Shape5::new(2, 3, 2, 3, 3);
            let a = add_random(&mut store, "a", shape, &mut rng);
            let b = add_random(&mut store, "b", shape, &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                let sum = tape.add(av, bv)?;
                let prod = tape.mul(sum, av)?;
                let scaled = tape.scale(prod, 0.75);
                Ok(tape.mean_all(scaled))
            })
        }),
    );

    push(
        "conv3d",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut store = ParamStore::new();
            let spec = ConvSpec::new(
                3,
                4,
                OffsetGrid::from_sizes(3, 3, 3).unwrap(),
                1,
                (1, 1, 1),
                true,
            )
            .unwrap();
            let x = add_random(&mut store, "x", Shape5::new(2, 3, 2, 4, 4), &mut rng);
            let w = add_random(&mut store, "w", spec.weight_shape(), &mut rng);
            let b = add_random(&mut store, "b", spec.bias_shape(), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let wv = tape.param(store, w);
                let bv = tape.param(store, b);
                let y = ops::conv3d(tape, xv, wv, Some(bv), &spec)?;
                Ok(tape.mean_all(y))
            })
        }),
    );

    push(
        "conv3d_strided_grouped",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::new();
            let spec = ConvSpec::new(
                4,
                4,
                OffsetGrid::from_sizes(1, 3, 3).unwrap(),
                2,
                (1, 2, 2),
                false,
            )
            .unwrap();
            let x = add_random(&mut store, "x", Shape5::new(2, 4, 2, 5, 5), &mut rng);
            let w = add_random(&mut store, "w", spec.weight_shape(), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let wv = tape.param(store, w);
                let y = ops::conv3d(tape, xv, wv, None, &spec)?;
                Ok(tape.mean_all(y))
            })
        }),
    );

    for (name, idx) in [("selu", 0usize), ("relu", 1), ("tanh", 2)] {
        push(
            name,
            Box::new(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(4 + idx as u64);
                let mut store = ParamStore::new();
                let x = add_random(&mut store, "x", Shape5::new(2, 3, 2, 3, 3), &mut rng);
                gradcheck(&mut store, opts(), move |tape, store| {
                    let xv = tape.param(store, x);
                    let y = match idx {
                        0 => ops::selu(tape, xv),
                        1 => ops::relu(tape, xv),
                        _ => ops::tanh(tape, xv),
                    };
                    Ok(tape.mean_all(y))
                })
            }),
        );
    }

    push(
        "softmax_over_offsets",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut store = ParamStore::new();
            let x = add_random(&mut store, "x", Shape5::new(2, 9 * 2, 2, 3, 3), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let y = ops::softmax_over_offsets(tape, xv, 9)?;
                // Weight the outputs so the gradient is not uniform.
                let mask = tape.constant(Tensor5::from_vec(
                    Shape5::new(2, 18, 2, 3, 3),
                    (0..2 * 18 * 2 * 3 * 3).map(|i| (i % 5) as f64 * 0.3).collect(),
                )?);
                let weighted = tape.mul(y, mask)?;
                Ok(tape.mean_all(weighted))
            })
        }),
    );

    push(
        "maxpool3d",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut store = ParamStore::new();
            let x = add_random(&mut store, "x", Shape5::new(2, 2, 4, 5, 5), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let y = ops::maxpool3d(tape, xv, (1, 3, 3), (1, 2, 2))?;
                let z = ops::maxpool3d(tape, y, (3, 1, 1), (2, 1, 1))?;
                Ok(tape.mean_all(z))
            })
        }),
    );

    push(
        "global_avg_pool",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut store = ParamStore::new();
            let x = add_random(&mut store, "x", Shape5::new(2, 3, 2, 4, 4), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let y = ops::global_avg_pool(tape, xv);
                let sq = tape.mul(y, y)?;
                Ok(tape.mean_all(sq))
            })
        }),
    );

    push(
        "linear",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut store = ParamStore::new();
            let x = add_random(&mut store, "x", Shape5::new(2, 4, 1, 1, 1), &mut rng);
            let w = add_random(&mut store, "w", Shape5::new(3, 4, 1, 1, 1), &mut rng);
            let b = add_random(&mut store, "b", Shape5::new(1, 3, 1, 1, 1), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let wv = tape.param(store, w);
                let bv = tape.param(store, b);
                let y = ops::linear(tape, xv, wv, Some(bv))?;
                let sq = tape.mul(y, y)?;
                Ok(tape.mean_all(sq))
            })
        }),
    );

    push(
        "cross_entropy",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut store = ParamStore::new();
            let x = add_random(&mut store, "logits", Shape5::new(3, 4, 1, 1, 1), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                ops::cross_entropy(tape, xv, &[1, 0, 3])
            })
        }),
    );

    push(
        "bce_with_logits",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut store = ParamStore::new();
            let x = add_random(&mut store, "logits", Shape5::new(3, 4, 1, 1, 1), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                ops::bce_with_logits(tape, xv, &[2, 1, 0])
            })
        }),
    );

    push(
        "batchnorm_train",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let mut store = ParamStore::new();
            let x = add_random(&mut store, "x", Shape5::new(3, 2, 2, 3, 3), &mut rng);
            let bn = ops::batchnorm_init(&mut store, "bn", 2, false)?;
            scramble(&mut store, &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let y = ops::batchnorm(tape, xv, &bn, store, true)?;
                let mask = tape.constant(Tensor5::from_vec(
                    Shape5::new(3, 2, 2, 3, 3),
                    (0..3 * 2 * 2 * 3 * 3).map(|i| (i % 7) as f64 * 0.2).collect(),
                )?);
                let weighted = tape.mul(y, mask)?;
                Ok(tape.mean_all(weighted))
            })
        }),
    );

    push(
        "dynamic_depthwise_apply",
        Box::new(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(14);
            let mut store = ParamStore::new();
            let kernel = OffsetGrid::from_sizes(3, 3, 3).unwrap();
            let x = add_random(&mut store, "x", Shape5::new(2, 2, 3, 4, 4), &mut rng);
            let w = add_random(&mut store, "w", Shape5::new(2, 27 * 2, 3, 4, 4), &mut rng);
            gradcheck(&mut store, opts(), move |tape, store| {
                let xv = tape.param(store, x);
                let wv = tape.param(store, w);
                let dw = DynamicWeights {
                    var: wv,
                    offsets: 27,
                    channels: 2,
                };
                let y = crate::hblock::dynamic_depthwise_apply(tape, xv, &dw, &kernel)?;
                Ok(tape.mean_all(y))
            })
        }),
    );

    // The full block, both generators, all three weight activations. The
    // single-conv softmax variant runs at the full 3x3x3 kernel; the rest use
    // the 3x1x1 kernel so four channels cover |R|.
    let variants: [(GeneratorKind, WeightActivation, (usize, usize, usize), bool); 6] = [
        (GeneratorKind::SingleConv, WeightActivation::Softmax, (3, 3, 3), false),
        (GeneratorKind::SingleConv, WeightActivation::Relu, (3, 1, 1), false),
        (GeneratorKind::SingleConv, WeightActivation::Tanh, (3, 1, 1), true),
        (GeneratorKind::ConvNet, WeightActivation::Softmax, (3, 1, 1), true),
        (GeneratorKind::ConvNet, WeightActivation::Relu, (3, 1, 1), false),
        (GeneratorKind::ConvNet, WeightActivation::Tanh, (3, 1, 1), false),
    ];
    for (generator, activation, kernel, residual) in variants {
        let gname = match generator {
            GeneratorKind::SingleConv => "singleconv",
            GeneratorKind::ConvNet => "convnet",
        };
        let aname = match activation {
            WeightActivation::Softmax => "softmax",
            WeightActivation::Relu => "relu",
            WeightActivation::Tanh => "tanh",
        };
        push(
            &format!("hblock_{gname}_{aname}"),
            Box::new(move || hblock_check(generator, activation, kernel, residual)),
        );
    }

    suite
}
