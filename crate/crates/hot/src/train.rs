//! SGD with momentum and weight decay, the training/evaluation loop, and the
//! higher-order vs static-depthwise comparison experiment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape};
use crate::hblock::HBlockConfig;
use crate::model::{build_backbone, Backbone, BackboneSpec, InsertionPlan, Mode};
use crate::ops;
use crate::seeds;
use crate::synth::{sequential_batches, shuffled_batches, Dataset, LabeledClip, XorTaskConfig};
use crate::tensor::{Scalar, Tensor5};
use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    #[serde(rename = "cross-entropy")]
    CrossEntropy,
    #[serde(rename = "binary-sigmoid")]
    BinarySigmoid,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Epochs (1-indexed) at which the learning rate divides by 10.
    pub lr_steps: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 8,
            lr: 0.01,
            lr_steps: vec![15],
            momentum: 0.9,
            weight_decay: 1e-4,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_steps.iter().filter(|&&s| s <= epoch).count();
        self.lr / 10f64.powi(drops as i32)
    }
}

/// Momentum-buffer SGD: v <- m*v + grad + wd*param, param <- param - lr*v.
/// Weight decay applies only to parameters flagged for it (convolution and
/// linear weights); biases and normalization scale/shift are excluded.
pub struct Sgd<T> {
    velocity: Vec<Tensor5<T>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, momentum: f64, weight_decay: f64) -> Sgd<T> {
        Sgd {
            velocity: store
                .param_ids()
                .map(|id| Tensor5::zeros(store.value(id).shape()))
                .collect(),
            momentum,
            weight_decay,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        let m = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        let lr = T::from_f64(lr);
        for (i, id) in store.param_ids().collect::<Vec<_>>().into_iter().enumerate() {
            if !store.grad(id).is_all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {} is not finite; aborting the update",
                    store.param(id).name
                )));
            }
            let decay = store.param(id).decay;
            let grad = store.grad(id).clone();
            let value = store.value(id).clone();
            let v = &mut self.velocity[i];
            for (j, vj) in v.data_mut().iter_mut().enumerate() {
                let mut g = grad.data()[j];
                if decay {
                    g += wd * value.data()[j];
                }
                *vj = m * *vj + g;
            }
            let value = store.value_mut(id);
            for (j, p) in value.data_mut().iter_mut().enumerate() {
                *p -= lr * v.data()[j];
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub eval_acc: f64,
}

impl EpochLog {
    fn tsv_line(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.6}"),
            None => "-".to_string(),
        };
        format!(
            "{}\t{:.6}\t{}\t{}\t{:.6}",
            self.epoch,
            self.lr,
            fmt_opt(self.train_loss),
            fmt_opt(self.train_acc),
            self.eval_acc
        )
    }
}

fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Backbone,
    store: &mut ParamStore<T>,
    x: Tensor5<T>,
    labels: &[usize],
    loss: LossKind,
    mode: Mode,
) -> Result<(crate::autodiff::Var, f64, f64)> {
    let xv = tape.constant(x);
    let logits = model.forward(tape, xv, store, mode)?;
    let acc = ops::accuracy(tape.value(logits), labels);
    let loss_var = match loss {
        LossKind::CrossEntropy => ops::cross_entropy(tape, logits, labels)?,
        LossKind::BinarySigmoid => ops::bce_with_logits(tape, logits, labels)?,
    };
    let loss_val = tape.value(loss_var).data()[0].to_f64();
    Ok((loss_var, loss_val, acc))
}

/// Accuracy of the model over the given clips, eval mode.
pub fn evaluate<T: Scalar>(
    model: &Backbone,
    store: &mut ParamStore<T>,
    clips: &[LabeledClip<T>],
    batch: usize,
) -> Result<f64> {
    let mut hits = 0.0;
    let mut count = 0usize;
    for b in sequential_batches(clips, batch) {
        let mut tape = Tape::new();
        let xv = tape.constant(b.x);
        let logits = model.forward(&mut tape, xv, store, Mode::Eval)?;
        hits += ops::accuracy(tape.value(logits), &b.labels) * b.labels.len() as f64;
        count += b.labels.len();
    }
    Ok(hits / count as f64)
}

/// Runs the training loop. Epoch 0 logs the evaluation of the initialized
/// model; each later line reports that epoch's mean train loss/accuracy and
/// the post-epoch eval accuracy. With an output directory, writes `log.tsv`
/// and a final `checkpoint/`.
pub fn train<T: Scalar>(
    model: &Backbone,
    store: &mut ParamStore<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
    quiet: bool,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let mut sgd = Sgd::new(store, cfg.momentum, cfg.weight_decay);
    let mut logs = Vec::new();
    let emit = |log: EpochLog, logs: &mut Vec<EpochLog>| {
        if !quiet {
            println!("{}", log.tsv_line());
        }
        logs.push(log);
    };
    emit(
        EpochLog {
            epoch: 0,
            lr: cfg.lr_at(1),
            train_loss: None,
            train_acc: None,
            eval_acc: evaluate(model, store, &dataset.test, cfg.batch)?,
        },
        &mut logs,
    );
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        let mut seen = 0usize;
        for b in shuffled_batches(&dataset.train, cfg.batch, seed, epoch as u64) {
            let n = b.labels.len();
            let mut tape = Tape::new();
            let (loss_var, loss_val, acc) =
                batch_loss(&mut tape, model, store, b.x, &b.labels, cfg.loss, Mode::Train)?;
            tape.backward(loss_var, store)?;
            sgd.step(store, lr)?;
            loss_sum += loss_val * n as f64;
            acc_sum += acc * n as f64;
            seen += n;
        }
        emit(
            EpochLog {
                epoch,
                lr,
                train_loss: Some(loss_sum / seen as f64),
                train_acc: Some(acc_sum / seen as f64),
                eval_acc: evaluate(model, store, &dataset.test, cfg.batch)?,
            },
            &mut logs,
        );
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut tsv = String::from("epoch\tlr\ttrain_loss\ttrain_acc\teval_acc\n");
        for log in &logs {
            let _ = writeln!(tsv, "{}", log.tsv_line());
        }
        fs::write(dir.join("log.tsv"), tsv)?;
        store.save_checkpoint(&dir.join("checkpoint"))?;
    }
    Ok(logs)
}

/// Result of the higher-order vs first-order comparison.
#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub higher_acc: f64,
    pub static_acc: f64,
    pub shuffled_acc: Option<f64>,
    pub higher_logs: Vec<EpochLog>,
    pub static_logs: Vec<EpochLog>,
}

impl CompareOutcome {
    pub fn gap(&self) -> f64 {
        self.higher_acc - self.static_acc
    }
}

/// Trains two builds of the same topology under identical seeds: one with
/// higher-order blocks at the planned sites, one with each block replaced by
/// a learned static depthwise convolution over the same kernel. Optionally
/// trains a third arm, the higher-order model on frame-shuffled data, to
/// confirm the task is motion-only.
pub fn compare_orders<T: Scalar>(
    backbone: &BackboneSpec,
    plan: &InsertionPlan,
    hblock_cfg: &dyn Fn(usize) -> HBlockConfig,
    data_cfg: &XorTaskConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    with_shuffled_arm: bool,
    quiet: bool,
) -> Result<CompareOutcome> {
    if plan.sites.is_empty() {
        return Err(Error::Config(
            "compare-orders needs at least one insertion site".into(),
        ));
    }
    let dataset: Dataset<T> = Dataset::generate(data_cfg)?;
    let template = hblock_cfg(backbone.stage_out_channels(plan.sites[0].0));

    let init_seed = seeds::derive(seed, seeds::INIT);
    let build_higher = |store: &mut ParamStore<T>| -> Result<Backbone> {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut model = build_backbone(backbone, store, &mut rng)?;
        model.insert_hblocks(plan, hblock_cfg, store, &mut rng)?;
        Ok(model)
    };

    let mut h_store = ParamStore::new();
    let h_model = build_higher(&mut h_store)?;
    let higher_logs = train(&h_model, &mut h_store, &dataset, train_cfg, seed, None, quiet)?;
    let higher_acc = higher_logs.last().expect("at least the epoch-0 line").eval_acc;

    let mut s_store = ParamStore::new();
    let s_model = {
        // Same init stream: the shared backbone weights start identical.
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut model = build_backbone(backbone, &mut s_store, &mut rng)?;
        model.insert_static_controls(plan, &template.kernel, template.residual, &mut s_store)?;
        model
    };
    let static_logs = train(&s_model, &mut s_store, &dataset, train_cfg, seed, None, quiet)?;
    let static_acc = static_logs.last().expect("at least the epoch-0 line").eval_acc;

    let shuffled_acc = if with_shuffled_arm {
        let mut shuffled = Dataset::generate(data_cfg)?;
        shuffled.shuffle_frames(seeds::derive(seed, seeds::FRAME_SHUFFLE));
        let mut store = ParamStore::new();
        let model = build_higher(&mut store)?;
        let logs = train(&model, &mut store, &shuffled, train_cfg, seed, None, quiet)?;
        Some(logs.last().expect("at least the epoch-0 line").eval_acc)
    } else {
        None
    };

    Ok(CompareOutcome {
        higher_acc,
        static_acc,
        shuffled_acc,
        higher_logs,
        static_logs,
    })
}
