use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hot::analysis::{self, Convention};
use hot::autodiff::{GradcheckOpts, ParamStore};
use hot::config::{parse_convention, ExperimentConfig};
use hot::model::{build_backbone, Backbone};
use hot::synth::{self, Dataset};
use hot::tensor::{DType, Scalar};
use hot::train::{self, compare_orders};
use hot::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hot",
    about = "Train and analyze convolutions with input-generated filters",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory from the config's data section.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured model; writes log.tsv, checkpoint/, and the
    /// resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the configured dataset's test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train the higher-order model and its static-depthwise control under
    /// identical seeds and report both accuracies.
    CompareOrders {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also train the model on frame-shuffled data.
        #[arg(long)]
        shuffled_arm: bool,
        /// Print every arm's per-epoch log lines.
        #[arg(long)]
        verbose: bool,
    },
    /// Run the finite-difference battery over every op and H-block variant.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print per-layer parameter/FLOP accounting for the configured model and
    /// its baseline (no inserted blocks).
    Costs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "mac1")]
        convention: String,
    },
    /// Probe the generator's receptive field by impulse response.
    ProbeRf {
        #[arg(long)]
        config: PathBuf,
    },
    /// Forward one test clip and write per-frame graymaps of a stage.
    DumpFeatures {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        stage: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let xor = cfg.resolved_xor().ok_or_else(|| {
                Error::Config("gen-data needs an inline xor data section".into())
            })?;
            match cfg.dtype {
                DType::F32 => synth::generate_dataset::<f32>(&xor, &out)?,
                DType::F64 => synth::generate_dataset::<f64>(&xor, &out)?,
            }
            println!(
                "wrote {} clips to {}",
                xor.train + xor.test,
                out.display()
            );
            Ok(())
        }
        Cmd::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            match cfg.dtype {
                DType::F32 => cmd_train::<f32>(&cfg, &out),
                DType::F64 => cmd_train::<f64>(&cfg, &out),
            }
        }
        Cmd::Eval { config, checkpoint } => {
            let cfg = ExperimentConfig::load(&config)?;
            match cfg.dtype {
                DType::F32 => cmd_eval::<f32>(&cfg, &checkpoint),
                DType::F64 => cmd_eval::<f64>(&cfg, &checkpoint),
            }
        }
        Cmd::CompareOrders {
            config,
            out,
            shuffled_arm,
            verbose,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            match cfg.dtype {
                DType::F32 => cmd_compare::<f32>(&cfg, out.as_deref(), shuffled_arm, verbose),
                DType::F64 => cmd_compare::<f64>(&cfg, out.as_deref(), shuffled_arm, verbose),
            }
        }
        Cmd::Gradcheck { config } => {
            // The battery always runs in f64; the config is validated so the
            // checked menus match what the experiment would use.
            ExperimentConfig::load(&config)?;
            let mut failures = 0usize;
            for check in hot::checks::op_suite() {
                let report = (check.runner)()?;
                let status = if report.pass { "ok" } else { "FAIL" };
                println!(
                    "{:<32} max_rel_err={:.3e}  {}",
                    check.name, report.max_rel_err, status
                );
                if !report.pass {
                    failures += 1;
                }
            }
            if failures > 0 {
                return Err(Error::Contract(format!(
                    "{failures} gradient checks exceeded tolerance {}",
                    GradcheckOpts::default().tol
                )));
            }
            Ok(())
        }
        Cmd::Costs {
            config,
            out,
            convention,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let convention = parse_convention(&convention)?;
            cmd_costs(&cfg, out.as_deref(), convention)
        }
        Cmd::ProbeRf { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let context = (
                cfg.hblock.context[0],
                cfg.hblock.context[1],
                cfg.hblock.context[2],
            );
            let measured = analysis::probe_generator_field(cfg.hblock.generator, context)?;
            println!(
                "generator context field: configured {}x{}x{}, measured {}x{}x{}",
                context.0,
                context.1,
                context.2,
                2 * measured.0 + 1,
                2 * measured.1 + 1,
                2 * measured.2 + 1
            );
            let want = (context.0 / 2, context.1 / 2, context.2 / 2);
            if measured != want {
                return Err(Error::Contract(format!(
                    "measured support {measured:?} does not match the configured field"
                )));
            }
            Ok(())
        }
        Cmd::DumpFeatures {
            config,
            checkpoint,
            stage,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            match cfg.dtype {
                DType::F32 => cmd_dump::<f32>(&cfg, checkpoint.as_deref(), &stage, &out),
                DType::F64 => cmd_dump::<f64>(&cfg, checkpoint.as_deref(), &stage, &out),
            }
        }
    }
}

/// Builds the configured model (with inserted blocks) and loads its dataset.
fn build_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
) -> Result<(Backbone, ParamStore<T>, Dataset<T>)> {
    let dataset: Dataset<T> = match (&cfg.resolved_xor(), &cfg.data.path) {
        (Some(xor), None) => Dataset::generate(xor)?,
        (None, Some(path)) => Dataset::load(Path::new(path))?,
        _ => unreachable!("validated config has exactly one data source"),
    };
    let mut dataset = dataset;
    if cfg.data.frame_shuffle {
        dataset.shuffle_frames(hot::seeds::derive(cfg.seed, hot::seeds::FRAME_SHUFFLE));
    }
    let spec = cfg.backbone_spec(dataset.classes);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed());
    let mut model = build_backbone(&spec, &mut store, &mut rng)?;
    let plan = cfg.insertion.to_plan()?;
    let section = cfg.hblock.clone();
    model.insert_hblocks(&plan, |c| section.to_config(c), &mut store, &mut rng)?;
    Ok((model, store, dataset))
}

fn cmd_train<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (model, mut store, dataset) = build_experiment::<T>(cfg)?;
    cfg.write_resolved(out)?;
    println!("epoch\tlr\ttrain_loss\ttrain_acc\teval_acc");
    let logs = train::train(
        &model,
        &mut store,
        &dataset,
        &cfg.train,
        cfg.seed,
        Some(out),
        false,
    )?;
    let last = logs.last().expect("at least the epoch-0 line");
    println!("final eval accuracy: {:.4}", last.eval_acc);
    Ok(())
}

fn cmd_eval<T: Scalar>(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    let (model, mut store, dataset) = build_experiment::<T>(cfg)?;
    store.load_checkpoint(checkpoint)?;
    let acc = train::evaluate(&model, &mut store, &dataset.test, cfg.train.batch)?;
    println!("eval accuracy: {acc:.4}");
    Ok(())
}

fn cmd_compare<T: Scalar>(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    shuffled_arm: bool,
    verbose: bool,
) -> Result<()> {
    let xor = cfg.resolved_xor().ok_or_else(|| {
        Error::Config("compare-orders needs an inline xor data section".into())
    })?;
    let classes = xor.classes();
    let spec = cfg.backbone_spec(classes);
    let plan = cfg.insertion.to_plan()?;
    let section = cfg.hblock.clone();
    let outcome = compare_orders::<T>(
        &spec,
        &plan,
        &|c| section.to_config(c),
        &xor,
        &cfg.train,
        cfg.seed,
        shuffled_arm,
        !verbose,
    )?;
    println!("higher-order test accuracy:   {:.4}", outcome.higher_acc);
    println!("static-control test accuracy: {:.4}", outcome.static_acc);
    println!("gap:                          {:+.4}", outcome.gap());
    if let Some(acc) = outcome.shuffled_acc {
        println!("frame-shuffled control:       {acc:.4}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        cfg.write_resolved(dir)?;
        let mut report = String::from("arm\teval_acc\n");
        report.push_str(&format!("higher\t{:.6}\n", outcome.higher_acc));
        report.push_str(&format!("static\t{:.6}\n", outcome.static_acc));
        if let Some(acc) = outcome.shuffled_acc {
            report.push_str(&format!("shuffled\t{acc:.6}\n"));
        }
        std::fs::write(dir.join("compare.tsv"), report)?;
    }
    Ok(())
}

fn cmd_costs(cfg: &ExperimentConfig, out: Option<&Path>, convention: Convention) -> Result<()> {
    // Cost accounting is shape arithmetic; parameters are never touched, so
    // f32 keeps the build light.
    let classes = cfg
        .backbone
        .classes
        .or_else(|| cfg.resolved_xor().map(|x| x.classes()))
        .unwrap_or(2);
    let spec = cfg.backbone_spec(classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed());
    let mut store = ParamStore::<f32>::new();
    let mut model = build_backbone(&spec, &mut store, &mut rng)?;
    let mut base_store = ParamStore::<f32>::new();
    let mut base_rng = ChaCha8Rng::seed_from_u64(cfg.init_seed());
    let baseline = build_backbone(&spec, &mut base_store, &mut base_rng)?;
    let plan = cfg.insertion.to_plan()?;
    let section = cfg.hblock.clone();
    model.insert_hblocks(&plan, |c| section.to_config(c), &mut store, &mut rng)?;

    let report = analysis::count_costs(&model, convention)?;
    let base_report = analysis::count_costs(&baseline, convention)?;
    print!("{}", report.to_table());
    println!(
        "\nbaseline (no inserted blocks): params {}, flops {}",
        base_report.total_params, base_report.total_flops
    );
    let ratio = report.total_flops as f64 / base_report.total_flops as f64;
    println!("instrumented/baseline flop ratio: {ratio:.4}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        report.write_tsv(&dir.join("costs.tsv"))?;
        base_report.write_tsv(&dir.join("costs_baseline.tsv"))?;
    }
    Ok(())
}

fn cmd_dump<T: Scalar>(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    stage: &str,
    out: &Path,
) -> Result<()> {
    let (model, mut store, dataset) = build_experiment::<T>(cfg)?;
    if let Some(ckpt) = checkpoint {
        store.load_checkpoint(ckpt)?;
    }
    let clip = &dataset
        .test
        .first()
        .ok_or_else(|| Error::Config("dataset has no test clips".into()))?
        .clip;
    let paths = analysis::dump_feature_maps(&model, &mut store, clip, stage, out)?;
    println!("wrote {} frames to {}", paths.len(), out.display());
    Ok(())
}
