//! The verification gate: one test per acceptance criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). Criteria cover
//! gradient fidelity, oracle equivalence, normalization, degeneration,
//! parameter arithmetic, receptive fields, backbone shapes, cost accounting,
//! task learnability, and bit determinism.

mod common;

use std::path::Path;
use std::time::Instant;

use common::{naive_conv3d, naive_dynamic_apply, naive_singleconv_weights, random_tensor, rng};
use hot::analysis::{self, Convention};
use hot::autodiff::{ParamStore, Tape};
use hot::config::ExperimentConfig;
use hot::hblock::{
    self, dynamic_depthwise_apply, DynamicWeights, GeneratorKind, HBlock, HBlockConfig,
    WeightActivation, CONTEXT_MENU, KERNEL_MENU,
};
use hot::model::{build_backbone, BackboneSpec, InsertionPlan, NormMode};
use hot::ops::{conv3d_forward, ConvSpec};
use hot::synth::Dataset;
use hot::tensor::{OffsetGrid, Scalar, Shape5, Tensor5};
use hot::train;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

#[test]
fn criterion_01_gradient_fidelity() {
    let start = Instant::now();
    let mut worst: (String, f64) = (String::new(), 0.0);
    let mut all_pass = true;
    for check in hot::checks::op_suite() {
        let r = (check.runner)().unwrap_or_else(|e| panic!("{} errored: {e}", check.name));
        if r.max_rel_err > worst.1 {
            worst = (check.name.clone(), r.max_rel_err);
        }
        all_pass &= r.pass;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let in_budget = elapsed < 120.0;
    report(
        "1 (gradient fidelity)",
        all_pass && in_budget,
        &format!("worst {} rel err {:.2e}, suite {:.1}s", worst.0, worst.1, elapsed),
    );
    assert!(all_pass, "worst op {} rel err {:.3e}", worst.0, worst.1);
    assert!(in_budget, "suite took {elapsed:.1}s, budget 120s");
}

#[test]
fn criterion_02_oracle_equivalence() {
    let mut r = rng(2001);
    let mut max_diff = 0.0f64;
    let mut cases = 0;

    // conv3d, plain and grouped/strided.
    for round in 0..20 {
        let grid = OffsetGrid::from_sizes(3, 3, 3).unwrap();
        let (cin, cout) = (1 + round % 3, 1 + (round + 1) % 3);
        let spec = ConvSpec::new(cin, cout, grid.clone(), 1, (1, 1, 1), false).unwrap();
        let x = random_tensor(Shape5::new(1 + round % 2, cin, 3, 4, 4), &mut r);
        let w = random_tensor(spec.weight_shape(), &mut r);
        let got = conv3d_forward(&x, &w, None, &spec).unwrap();
        let want = naive_conv3d(&x, &w, None, cin, cout, &grid, 1, (1, 1, 1));
        max_diff = max_diff.max(got.max_abs_diff(&want));
        cases += 1;
    }
    for round in 0..20 {
        let groups = [1, 2, 4][round % 3];
        let cin = groups * (1 + round % 2);
        let cout = groups * (1 + (round / 3) % 2);
        let stride = [(1, 1, 1), (1, 2, 2), (2, 1, 1)][round % 3];
        let grid = OffsetGrid::from_sizes(1, 3, 3).unwrap();
        let spec = ConvSpec::new(cin, cout, grid.clone(), groups, stride, false).unwrap();
        let x = random_tensor(Shape5::new(2, cin, 3, 4, 4), &mut r);
        let w = random_tensor(spec.weight_shape(), &mut r);
        let got = conv3d_forward(&x, &w, None, &spec).unwrap();
        let want = naive_conv3d(&x, &w, None, cin, cout, &grid, groups, stride);
        max_diff = max_diff.max(got.max_abs_diff(&want));
        cases += 1;
    }
    // Dynamic depthwise apply.
    for round in 0..20 {
        let kernel = OffsetGrid::from_sizes(3, 3, 3).unwrap();
        let c = 1 + round % 3;
        let xs = Shape5::new(1 + round % 2, c, 3, 4, 4);
        let x = random_tensor(xs, &mut r);
        let w = random_tensor(Shape5::new(xs.n, 27 * c, xs.t, xs.h, xs.w), &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let dw = DynamicWeights {
            var: wv,
            offsets: 27,
            channels: c,
        };
        let y = dynamic_depthwise_apply(&mut tape, xv, &dw, &kernel).unwrap();
        max_diff = max_diff.max(tape.value(y).max_abs_diff(&naive_dynamic_apply(&x, &w, &kernel)));
        cases += 1;
    }
    // Single-conv weight generation.
    for round in 0..20 {
        let kernel = OffsetGrid::from_sizes(3, 1, 1).unwrap();
        let context = OffsetGrid::from_sizes(3, 3, 3).unwrap();
        let c = 1 + round % 3;
        let cfg = HBlockConfig {
            channels: c,
            kernel: kernel.clone(),
            context: context.clone(),
            generator: GeneratorKind::SingleConv,
            activation: WeightActivation::Softmax,
            residual: false,
        };
        let mut store = ParamStore::<f64>::new();
        let block = HBlock::init(cfg, "h", &mut store, &mut r).unwrap();
        let id = store.param_ids().next().unwrap();
        let shape = store.value(id).shape();
        *store.value_mut(id) = random_tensor(shape, &mut r);
        let theta = store.value(id).clone();
        let x = random_tensor(Shape5::new(1, c, 3, 3, 3), &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let logits = block.generate_weights(&mut tape, xv, &store).unwrap();
        let want = naive_singleconv_weights(&x, &theta, kernel.len(), &context);
        max_diff = max_diff.max(tape.value(logits.var).max_abs_diff(&want));
        cases += 1;
    }
    let pass = max_diff <= 1e-12;
    report(
        "2 (oracle equivalence)",
        pass,
        &format!("{cases} cases, max abs diff {max_diff:.2e}"),
    );
    assert!(pass, "max abs diff {max_diff:.3e}");
}

fn softmax_sum_worst<T: Scalar>(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for generator in [GeneratorKind::SingleConv, GeneratorKind::ConvNet] {
        let channels = 27;
        let cfg = HBlockConfig {
            channels,
            kernel: OffsetGrid::from_sizes(3, 3, 3).unwrap(),
            context: OffsetGrid::from_sizes(3, 3, 3).unwrap(),
            generator,
            activation: WeightActivation::Softmax,
            residual: false,
        };
        let mut store = ParamStore::<T>::new();
        let block = HBlock::init(cfg, "h", &mut store, &mut r).unwrap();
        for id in store.param_ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape();
            *store.value_mut(id) = random_tensor(shape, &mut r).cast::<T>();
        }
        let x = random_tensor(Shape5::new(2, channels, 3, 4, 4), &mut r).cast::<T>();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let logits = block.generate_weights(&mut tape, xv, &store).unwrap();
        let weights = block.activate(&mut tape, logits).unwrap();
        let wv = tape.value(weights.var);
        let s = wv.shape();
        for n in 0..s.n {
            for c in 0..channels {
                for t in 0..s.t {
                    for h in 0..s.h {
                        for w in 0..s.w {
                            let sum: f64 = (0..27)
                                .map(|q| wv.get(n, q * channels + c, t, h, w).to_f64())
                                .sum();
                            worst = worst.max((sum - 1.0).abs());
                        }
                    }
                }
            }
        }
    }
    worst
}

#[test]
fn criterion_03_normalization_invariant() {
    let worst32 = softmax_sum_worst::<f32>(3001);
    let worst64 = softmax_sum_worst::<f64>(3002);
    let pass = worst32 <= 1e-6 && worst64 <= 1e-12;
    report(
        "3 (softmax normalization)",
        pass,
        &format!("worst |sum-1|: f32 {worst32:.2e}, f64 {worst64:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_degeneration() {
    let mut r = rng(4001);
    let kernel = OffsetGrid::from_sizes(3, 3, 3).unwrap();

    // (a) Zeroed generator, softmax: exact box average over the kernel.
    let mut worst_box = 0.0f64;
    for generator in [GeneratorKind::SingleConv, GeneratorKind::ConvNet] {
        let channels = 27;
        let cfg = HBlockConfig {
            channels,
            kernel: kernel.clone(),
            context: OffsetGrid::from_sizes(5, 5, 5).unwrap(),
            generator,
            activation: WeightActivation::Softmax,
            residual: false,
        };
        let mut store = ParamStore::<f64>::new();
        let block = HBlock::init(cfg, "h", &mut store, &mut r).unwrap();
        for id in store.param_ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape();
            *store.value_mut(id) = Tensor5::zeros(shape);
        }
        let xs = Shape5::new(1, channels, 3, 4, 4);
        let x = random_tensor(xs, &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = block.forward(&mut tape, xv, &store).unwrap();
        for c in 0..channels {
            for t in 0..xs.t {
                for h in 0..xs.h {
                    for w in 0..xs.w {
                        let vals = x.padded_gather(0, c, (t, h, w), &kernel).unwrap();
                        let mean: f64 = vals.iter().sum::<f64>() / 27.0;
                        worst_box = worst_box.max((tape.value(y).get(0, c, t, h, w) - mean).abs());
                    }
                }
            }
        }
    }

    // (b) Position-constant frozen weights: equals a static depthwise conv.
    let mut worst_static = 0.0f64;
    for round in 0..5 {
        let c = 2 + round;
        let xs = Shape5::new(2, c, 3, 4, 4);
        let x = random_tensor(xs, &mut r);
        let taps = random_tensor(Shape5::new(1, 27 * c, 1, 1, 1), &mut r);
        let mut wfull = Tensor5::zeros(Shape5::new(xs.n, 27 * c, xs.t, xs.h, xs.w));
        for n in 0..xs.n {
            for ch in 0..27 * c {
                for t in 0..xs.t {
                    for h in 0..xs.h {
                        for w in 0..xs.w {
                            wfull.set(n, ch, t, h, w, taps.get(0, ch, 0, 0, 0));
                        }
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(wfull);
        let dw = DynamicWeights {
            var: wv,
            offsets: 27,
            channels: c,
        };
        let dynamic = dynamic_depthwise_apply(&mut tape, xv, &dw, &kernel).unwrap();
        let spec = ConvSpec::new(c, c, kernel.clone(), c, (1, 1, 1), false).unwrap();
        let mut w_static = Tensor5::zeros(spec.weight_shape());
        for ch in 0..c {
            for q in 0..27 {
                w_static.data_mut()[ch * 27 + q] = taps.get(0, q * c + ch, 0, 0, 0);
            }
        }
        let want = conv3d_forward(&x, &w_static, None, &spec).unwrap();
        worst_static = worst_static.max(tape.value(dynamic).max_abs_diff(&want));
    }
    let pass = worst_box <= 1e-12 && worst_static <= 1e-12;
    report(
        "4 (degeneration)",
        pass,
        &format!("box-average diff {worst_box:.2e}, static-depthwise diff {worst_static:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_paper_arithmetic() {
    // (a) Single-conv parameter count is exactly C^2 |R| |R'| on the menu.
    let mut r = rng(5001);
    let mut count_ok = true;
    for kernel in KERNEL_MENU {
        for context in CONTEXT_MENU {
            if hblock::validate_menus(kernel, context).is_err() {
                continue;
            }
            for &channels in &[4usize, 19, 64] {
                let cfg = HBlockConfig {
                    channels,
                    kernel: OffsetGrid::from_sizes(kernel.0, kernel.1, kernel.2).unwrap(),
                    context: OffsetGrid::from_sizes(context.0, context.1, context.2).unwrap(),
                    generator: GeneratorKind::SingleConv,
                    activation: WeightActivation::Softmax,
                    residual: false,
                };
                let mut store = ParamStore::<f64>::new();
                HBlock::init(cfg.clone(), "h", &mut store, &mut r).unwrap();
                let r_len = kernel.0 * kernel.1 * kernel.2;
                let rp_len = context.0 * context.1 * context.2;
                let want = channels * channels * r_len * rp_len;
                count_ok &= store.param_scalar_count() == want
                    && hblock::param_count_closed_form(&cfg) == want;
            }
        }
    }
    // (b) Factorized vs single kernel volumes for the 5x5x5 context.
    let (factorized, single) = hblock::kernel_volume_comparison((5, 5, 5)).unwrap();
    let volumes_ok = (factorized, single) == (39, 125);
    // (c) Integer-division channel plan: 19 // 9 = 2 mid groups of 9.
    let plan = hblock::GeneratorPlan::new((3, 3, 3), 19, 9).unwrap();
    let division_ok = plan.layers[1].out_channels == 18
        && plan.layers[2].in_channels == 18
        && plan.layers[2].groups == 9;
    let pass = count_ok && volumes_ok && division_ok;
    report(
        "5 (parameter arithmetic)",
        pass,
        &format!(
            "C^2*|R|*|R'| exact: {count_ok}; volumes {factorized} vs {single}; 19//9 plan: {division_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_receptive_fields() {
    let mut matches = 0;
    let mut detail = String::new();
    for context in CONTEXT_MENU {
        let got = analysis::probe_generator_field(GeneratorKind::ConvNet, context).unwrap();
        let want = (context.0 / 2, context.1 / 2, context.2 / 2);
        if got == want {
            matches += 1;
        }
        detail.push_str(&format!(
            "{}x{}x{} -> {}x{}x{}; ",
            context.0,
            context.1,
            context.2,
            2 * got.0 + 1,
            2 * got.1 + 1,
            2 * got.2 + 1
        ));
    }
    let pass = matches == CONTEXT_MENU.len();
    report(
        "6 (receptive fields)",
        pass,
        &format!("{matches}/5 exact: {detail}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_backbone_shapes() {
    let spec = BackboneSpec {
        width_scale: 1,
        blocks: [3, 4, 6, 3],
        input: (32, 224, 224),
        in_channels: 3,
        classes: 174,
        norm: NormMode::Batch,
    };
    let mut store = ParamStore::<f32>::new();
    let mut r = rng(7001);
    let model = build_backbone(&spec, &mut store, &mut r).unwrap();
    let shapes = model.stage_shapes().unwrap();
    let expect = [
        ("conv1", (64, 32, 112, 112)),
        ("pool1", (64, 32, 56, 56)),
        ("res2", (256, 32, 56, 56)),
        ("pool2", (256, 16, 56, 56)),
        ("res3", (512, 16, 28, 28)),
        ("res4", (1024, 16, 14, 14)),
        ("res5", (2048, 16, 14, 14)),
        ("head", (174, 1, 1, 1)),
    ];
    let mut pass = true;
    for (name, want) in expect {
        let got = shapes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| (s.c, s.t, s.h, s.w))
            .unwrap();
        pass &= got == want;
    }
    report(
        "7 (backbone shapes)",
        pass,
        "conv1 32x112x112 through res5 16x14x14, head (classes,1,1,1)",
    );
    assert!(pass);
}

#[test]
fn criterion_08_flops_accounting() {
    let spec = BackboneSpec {
        width_scale: 1,
        blocks: [3, 4, 6, 3],
        input: (32, 224, 224),
        in_channels: 3,
        classes: 174,
        norm: NormMode::Batch,
    };
    let mut r = rng(8001);
    let mut base_store = ParamStore::<f32>::new();
    let baseline = build_backbone(&spec, &mut base_store, &mut r).unwrap();
    let base_report = analysis::count_costs(&baseline, Convention::Mac1).unwrap();

    let mut ho_store = ParamStore::<f32>::new();
    let mut ho = build_backbone(&spec, &mut ho_store, &mut r).unwrap();
    let plan = InsertionPlan::preset("5-block").unwrap();
    ho.insert_hblocks(
        &plan,
        |channels| HBlockConfig {
            channels,
            kernel: OffsetGrid::from_sizes(3, 3, 3).unwrap(),
            context: OffsetGrid::from_sizes(5, 5, 5).unwrap(),
            generator: GeneratorKind::ConvNet,
            activation: WeightActivation::Softmax,
            residual: true,
        },
        &mut ho_store,
        &mut r,
    )
    .unwrap();
    let ho_report = analysis::count_costs(&ho, Convention::Mac1).unwrap();

    // Five hand-computed spot checks (MAC = 1):
    //   conv1:          64*32*112*112 outputs x 3 in-ch x 245 taps
    //   res2.b1.conv_a: 64*32*56*56 x 64 x 3
    //   res3.b1.conv_b: 128*16*28*28 x 128 x 9
    //   res3.h1.gen2:   486*16*28*28 x 512 x 27
    //   res3.h1.apply:  512*16*28*28 x 27
    let spots: [(&str, u64); 5] = [
        ("conv1", 18_882_232_320),
        ("res2.b1.conv_a", 1_233_125_376),
        ("res3.b1.conv_b", 1_849_688_064),
        ("res3.h1.gen2", 84_276_412_416),
        ("res3.h1.apply", 173_408_256),
    ];
    let mut spots_ok = true;
    for (name, want) in spots {
        let got = ho_report.row(name).unwrap_or_else(|| panic!("row {name}")).flops;
        if got != want {
            println!("  spot {name}: got {got}, hand-computed {want}");
            spots_ok = false;
        }
    }
    // Exact parameter ledger while the full-scale model is built.
    let params_ok = ho_report.total_params == ho_store.param_scalar_count();

    let ratio = ho_report.total_flops as f64 / base_report.total_flops as f64;
    let ratio_ok = (ratio - 368.0 / 326.0).abs() <= 0.15;
    let pass = spots_ok && params_ok && ratio_ok;
    report(
        "8 (FLOPs accounting)",
        pass,
        &format!(
            "spot checks {}; params exact {}; HO/baseline ratio {:.3} vs 1.129 +/- 0.15 {}",
            spots_ok,
            params_ok,
            ratio,
            if ratio_ok { "within" } else { "OUTSIDE" }
        ),
    );
    assert!(spots_ok, "hand-computed spot checks diverged");
    assert!(params_ok, "cost table params drifted from the store");
    assert!(
        ratio_ok,
        "HO(5-block)/baseline FLOP ratio {ratio:.3} not within 0.15 of 368/326; \
         the generator convolutions at stage-output widths dominate the added cost"
    );
}

#[test]
fn criterion_09_xor_learnability() {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/xor_acceptance.json");
    let cfg = ExperimentConfig::load(&path).expect("xor acceptance config parses");
    let xor = cfg.resolved_xor().expect("inline xor task");
    let spec = cfg.backbone_spec(xor.classes());
    let plan = cfg.insertion.to_plan().unwrap();
    let section = cfg.hblock.clone();

    let mut rows = Vec::new();
    for seed in [cfg.seed, cfg.seed + 1, cfg.seed + 2] {
        let mut xor_seeded = xor.clone();
        xor_seeded.seed = hot::seeds::derive(seed, hot::seeds::DATA);
        let outcome = train::compare_orders::<f32>(
            &spec,
            &plan,
            &|c| section.to_config(c),
            &xor_seeded,
            &cfg.train,
            seed,
            true,
            true,
        )
        .unwrap();
        println!(
            "  seed {seed}: higher {:.3} static {:.3} shuffled {:.3}",
            outcome.higher_acc,
            outcome.static_acc,
            outcome.shuffled_acc.unwrap()
        );
        rows.push(outcome);
    }
    let h_min = rows.iter().map(|o| o.higher_acc).fold(1.0, f64::min);
    let s_max = rows.iter().map(|o| o.static_acc).fold(0.0, f64::max);
    let shuffled_max = rows
        .iter()
        .map(|o| o.shuffled_acc.unwrap())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = h_min >= 0.90 && s_max <= 0.70 && shuffled_max <= 0.55 && elapsed < 600.0;
    report(
        "9 (XOR learnability)",
        pass,
        &format!(
            "higher min {h_min:.3} (>=0.90), static max {s_max:.3} (<=0.70), \
             shuffled max {shuffled_max:.3} (<=0.55), {elapsed:.0}s"
        ),
    );
    assert!(h_min >= 0.90, "higher-order model min accuracy {h_min:.3}");
    assert!(s_max <= 0.70, "static control max accuracy {s_max:.3}");
    assert!(shuffled_max <= 0.55, "frame-shuffled max accuracy {shuffled_max:.3}");
    assert!(elapsed < 600.0, "experiment took {elapsed:.0}s");
}

#[test]
fn criterion_10_determinism() {
    let run = |out: &Path| {
        let cfg = ExperimentConfig {
            seed: 77,
            dtype: hot::tensor::DType::F64,
            ..ExperimentConfig::default()
        };
        let mut cfg = cfg;
        cfg.backbone.width_scale = 16;
        cfg.backbone.blocks = [1, 1, 1, 1];
        cfg.backbone.input = [4, 16, 16];
        cfg.data.xor.as_mut().map(|x| {
            x.clip = (4, 16, 16);
            x.object_size = 3;
            x.hand_size = 3;
            x.speed = 1;
            x.train = 16;
            x.test = 8;
            x
        });
        cfg.train.epochs = 2;
        cfg.train.batch = 4;
        let xor = cfg.resolved_xor().unwrap();
        let dataset: Dataset<f64> = Dataset::generate(&xor).unwrap();
        let spec = cfg.backbone_spec(dataset.classes);
        let mut store = ParamStore::<f64>::new();
        let mut r = rand::SeedableRng::seed_from_u64(cfg.init_seed());
        let model = build_backbone(&spec, &mut store, &mut r).unwrap();
        train::train(&model, &mut store, &dataset, &cfg.train, cfg.seed, Some(out), true)
            .unwrap();
    };
    let dir1 = std::env::temp_dir().join("hot_acc_det_1");
    let dir2 = std::env::temp_dir().join("hot_acc_det_2");
    for d in [&dir1, &dir2] {
        std::fs::remove_dir_all(d).ok();
    }
    run(&dir1);
    run(&dir2);
    let log1 = std::fs::read(dir1.join("log.tsv")).unwrap();
    let log2 = std::fs::read(dir2.join("log.tsv")).unwrap();
    let logs_match = log1 == log2;
    let mut ckpt_match = true;
    let mut files = 0;
    for entry in std::fs::read_dir(dir1.join("checkpoint")).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        let a = std::fs::read(entry.path()).unwrap();
        let b = std::fs::read(dir2.join("checkpoint").join(&name)).unwrap();
        ckpt_match &= a == b;
        files += 1;
    }
    let pass = logs_match && ckpt_match && files > 0;
    report(
        "10 (determinism)",
        pass,
        &format!("log bytes equal: {logs_match}; {files} checkpoint files byte-equal: {ckpt_match}"),
    );
    for d in [&dir1, &dir2] {
        std::fs::remove_dir_all(d).ok();
    }
    assert!(pass);
}
