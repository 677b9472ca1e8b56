//! Synthetic video tasks and the HOT1 dataset directory format.
//!
//! The main task renders a static "object" square and a moving "hand"
//! square. Two booleans describe each clip: A = the hand sweeps left to
//! right, B = the hand's range lies right of the object. The two-class label
//! is A XOR B, so no single frame is informative: a left-moving hand visits
//! exactly the same positions as a right-moving one.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::seeds;
use crate::tensor::{read_hot1, write_hot1, Scalar, Shape5, Tensor5};
use crate::{Error, Result};

const HAND_INTENSITY: f64 = 1.0;
const HAND_INTENSITY_DIM: f64 = 0.7;
const OBJECT_INTENSITY: f64 = 0.5;

#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum LabelRule {
    /// Label = A XOR B (2 classes).
    #[serde(rename = "two-class")]
    TwoClass,
    /// Label = 2A + B (4 classes), one per (motion, side) combination.
    #[serde(rename = "four-class")]
    FourClass,
    /// Motion-free control: static hand, label = hand brightness (2 classes).
    #[serde(rename = "texture")]
    Texture,
}

impl LabelRule {
    pub fn classes(self) -> usize {
        match self {
            LabelRule::TwoClass | LabelRule::Texture => 2,
            LabelRule::FourClass => 4,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XorTaskConfig {
    /// (frames, height, width).
    pub clip: (usize, usize, usize),
    pub object_size: usize,
    pub hand_size: usize,
    /// Pixels per frame of hand motion.
    pub speed: usize,
    /// Gaussian pixel noise sigma.
    pub noise: f64,
    /// Extra static squares, identical in appearance to the object, placed
    /// farther from the hand than the object is. They make global "where is
    /// the static stuff" summaries useless: the side relation is only
    /// defined against the square nearest the mover.
    pub distractors: usize,
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    pub rule: LabelRule,
}

impl Default for XorTaskConfig {
    fn default() -> Self {
        XorTaskConfig {
            clip: (8, 32, 32),
            object_size: 5,
            hand_size: 5,
            speed: 2,
            noise: 0.05,
            distractors: 0,
            seed: 0,
            train: 256,
            test: 128,
            rule: LabelRule::TwoClass,
        }
    }
}

impl XorTaskConfig {
    /// Horizontal extent the hand sweeps over a clip.
    fn span(&self) -> usize {
        self.hand_size + self.speed * (self.clip.0 - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, h, w) = self.clip;
        if t < 2 {
            return Err(Error::Config("clips need at least 2 frames".into()));
        }
        if self.object_size == 0 || self.hand_size == 0 {
            return Err(Error::Config("object and hand sizes must be positive".into()));
        }
        if self.rule != LabelRule::Texture && self.speed == 0 {
            return Err(Error::Config("motion tasks need speed >= 1".into()));
        }
        if h < self.object_size.max(self.hand_size) {
            return Err(Error::Config(format!(
                "clip height {h} cannot fit shapes of size {}",
                self.object_size.max(self.hand_size)
            )));
        }
        // Hand sweep, one-pixel gap, and object must fit side by side.
        if w < self.span() + 1 + self.object_size {
            return Err(Error::Config(format!(
                "clip width {w} cannot fit a {}px object and a {}px hand sweep",
                self.object_size,
                self.span()
            )));
        }
        for (name, count) in [("train", self.train), ("test", self.test)] {
            if count == 0 || count % 4 != 0 {
                return Err(Error::Config(format!(
                    "{name} count must be a positive multiple of 4 for exact class balance, got {count}"
                )));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.rule.classes()
    }
}

#[derive(Clone, Debug)]
pub struct LabeledClip<T> {
    pub clip: Tensor5<T>,
    pub label: usize,
    pub a: bool,
    pub b: bool,
}

/// Renders the clip with global index `index`. The (A, B) pattern cycles
/// through all four combinations, so any count divisible by four is exactly
/// balanced in A, B, and A XOR B.
fn render_clip<T: Scalar>(cfg: &XorTaskConfig, index: usize) -> LabeledClip<T> {
    let (frames, height, width) = cfg.clip;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(
        cfg.seed,
        seeds::DATA,
        index as u64,
    ));
    let pattern = index % 4;
    let a = pattern & 1 == 1;
    let b = pattern & 2 == 2;
    let span = cfg.span();

    // The hand and object form a tight pair: a small horizontal gap and
    // nearly aligned rows, so the side relation is readable from local
    // context wherever the pair floats in the frame.
    let gap = {
        let gmax = (width - cfg.object_size - span).min(3).max(1);
        rng.random_range(1..=gmax)
    };
    let pair_w = span + gap + cfg.object_size;
    let pair_x = rng.random_range(0..=width - pair_w);
    let (ox, hx0) = if b {
        (pair_x, pair_x + cfg.object_size + gap)
    } else {
        (pair_x + span + gap, pair_x)
    };
    let hy = rng.random_range(0..=height - cfg.hand_size);
    let wobble = cfg.hand_size + 1;
    let oy_lo = hy.saturating_sub(wobble);
    let oy_hi = (hy + wobble).min(height - cfg.object_size);
    let oy = rng.random_range(oy_lo..=oy_hi.max(oy_lo));

    // For the motion rules both squares render identically, so nothing but
    // motion identifies the hand; the texture rule is the appearance task and
    // keeps distinct intensities.
    let (hand_intensity, object_intensity) = match cfg.rule {
        LabelRule::Texture => (
            if a { HAND_INTENSITY } else { HAND_INTENSITY_DIM },
            OBJECT_INTENSITY,
        ),
        _ => (HAND_INTENSITY, HAND_INTENSITY),
    };
    let label = match cfg.rule {
        LabelRule::TwoClass => (a ^ b) as usize,
        LabelRule::FourClass => 2 * a as usize + b as usize,
        LabelRule::Texture => a as usize,
    };

    // Distractors are laid out in adjacent pairs that mimic the hand-object
    // configuration (two identical squares side by side), so no static
    // spatial template separates the classes; only motion bound to its pair
    // does. They sit strictly farther from the hand's sweep than the object,
    // never overlapping anything. Placement is best-effort under a bounded
    // deterministic rejection loop.
    let sweep_center = (
        hy as f64 + cfg.hand_size as f64 / 2.0,
        hx0 as f64 + span as f64 / 2.0,
    );
    let center_of = |y: usize, x: usize, size: usize| {
        (y as f64 + size as f64 / 2.0, x as f64 + size as f64 / 2.0)
    };
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let object_dist = dist(center_of(oy, ox, cfg.object_size), sweep_center);
    // Occupied boxes as (y0, x0, y1, x1), exclusive ends.
    let mut occupied = vec![
        (oy, ox, oy + cfg.object_size, ox + cfg.object_size),
        (hy, hx0, hy + cfg.hand_size, hx0 + span),
    ];
    let mut distractor_sites: Vec<(usize, usize)> = Vec::new();
    let size = cfg.object_size;
    if height > size && width > size {
        let mut remaining = cfg.distractors;
        while remaining > 0 {
            let paired = remaining >= 2;
            let mut placed = false;
            for _attempt in 0..64 {
                let gap = rng.random_range(1..=3usize);
                let pair_w = if paired { 2 * size + gap } else { size };
                if width < pair_w {
                    break;
                }
                let dy = rng.random_range(0..=height - size);
                let dx = rng.random_range(0..=width - pair_w);
                let mut boxes = vec![(dy, dx, dy + size, dx + size)];
                if paired {
                    let wob = size + 1;
                    let y2_lo = dy.saturating_sub(wob);
                    let y2_hi = (dy + wob).min(height - size);
                    let dy2 = rng.random_range(y2_lo..=y2_hi.max(y2_lo));
                    boxes.push((dy2, dx + size + gap, dy2 + size, dx + 2 * size + gap));
                }
                let ok = boxes.iter().all(|&(y0, x0, _, _)| {
                    let far = dist(center_of(y0, x0, size), sweep_center)
                        >= object_dist + 2.0;
                    let clear = occupied.iter().all(|&(oy0, ox0, oy1, ox1)| {
                        y0 + size + 1 <= oy0
                            || y0 >= oy1 + 1
                            || x0 + size + 1 <= ox0
                            || x0 >= ox1 + 1
                    });
                    far && clear
                });
                if ok {
                    for &(y0, x0, y1, x1) in &boxes {
                        occupied.push((y0, x0, y1, x1));
                        distractor_sites.push((y0, x0));
                    }
                    placed = true;
                    break;
                }
            }
            if !placed {
                break;
            }
            remaining -= if paired { 2 } else { 1 };
        }
    }

    let shape = Shape5::new(1, 1, frames, height, width);
    let mut data = vec![0.0f64; shape.numel()];
    for t in 0..frames {
        let hx = match cfg.rule {
            // Static hand, centered in its would-be sweep.
            LabelRule::Texture => hx0 + (span - cfg.hand_size) / 2,
            _ => {
                if a {
                    hx0 + cfg.speed * t
                } else {
                    hx0 + span - cfg.hand_size - cfg.speed * t
                }
            }
        };
        let frame = t * height * width;
        for y in oy..oy + cfg.object_size {
            for x in ox..ox + cfg.object_size {
                data[frame + y * width + x] = object_intensity;
            }
        }
        for &(dy, dx) in &distractor_sites {
            for y in dy..dy + cfg.object_size {
                for x in dx..dx + cfg.object_size {
                    data[frame + y * width + x] = object_intensity;
                }
            }
        }
        for y in hy..hy + cfg.hand_size {
            for x in hx..hx + cfg.hand_size {
                data[frame + y * width + x] = hand_intensity;
            }
        }
    }
    if cfg.noise > 0.0 {
        for v in &mut data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.noise * z;
        }
    }
    let clip = Tensor5::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
        .expect("rendered data matches shape");
    LabeledClip { clip, label, a, b }
}

/// In-memory generation of the raw (unnormalized) train and test clips.
pub fn generate_clips<T: Scalar>(
    cfg: &XorTaskConfig,
) -> Result<(Vec<LabeledClip<T>>, Vec<LabeledClip<T>>)> {
    cfg.validate()?;
    let train = (0..cfg.train).map(|i| render_clip(cfg, i)).collect();
    let test = (cfg.train..cfg.train + cfg.test)
        .map(|i| render_clip(cfg, i))
        .collect();
    Ok((train, test))
}

/// Writes the dataset directory: `clips/NNNNNN.hot1`, `labels.tsv`
/// (index, label, A, B), and `meta.json` echoing the config. The first
/// `train` indices are the training split.
pub fn generate_dataset<T: Scalar>(cfg: &XorTaskConfig, dir: &Path) -> Result<()> {
    cfg.validate()?;
    let clips_dir = dir.join("clips");
    fs::create_dir_all(&clips_dir)?;
    let mut labels = String::from("index\tlabel\tA\tB\n");
    for i in 0..cfg.train + cfg.test {
        let clip: LabeledClip<T> = render_clip(cfg, i);
        write_hot1(&clip.clip, &clips_dir.join(format!("{i:06}.hot1")))?;
        labels.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            i, clip.label, clip.a as u8, clip.b as u8
        ));
    }
    fs::write(dir.join("labels.tsv"), labels)?;
    let meta = serde_json::to_string_pretty(cfg)?;
    fs::write(dir.join("meta.json"), meta)?;
    Ok(())
}

/// A loaded, per-clip normalized dataset split into train and test.
pub struct Dataset<T> {
    pub train: Vec<LabeledClip<T>>,
    pub test: Vec<LabeledClip<T>>,
    pub classes: usize,
}

fn normalize<T: Scalar>(clip: &mut Tensor5<T>) {
    let n = clip.numel() as f64;
    let mean = clip.data().iter().map(|v| v.to_f64()).sum::<f64>() / n;
    let var = clip
        .data()
        .iter()
        .map(|v| (v.to_f64() - mean).powi(2))
        .sum::<f64>()
        / n;
    let inv = 1.0 / var.sqrt().max(1e-8);
    for v in clip.data_mut() {
        *v = T::from_f64((v.to_f64() - mean) * inv);
    }
}

impl<T: Scalar> Dataset<T> {
    /// Generates and normalizes in memory, bypassing the directory format.
    pub fn generate(cfg: &XorTaskConfig) -> Result<Dataset<T>> {
        let (mut train, mut test) = generate_clips(cfg)?;
        for c in train.iter_mut().chain(test.iter_mut()) {
            normalize(&mut c.clip);
        }
        Ok(Dataset {
            train,
            test,
            classes: cfg.classes(),
        })
    }

    /// Loads a generated directory and normalizes each clip.
    pub fn load(dir: &Path) -> Result<Dataset<T>> {
        let meta_path = dir.join("meta.json");
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::Format {
            path: meta_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let cfg: XorTaskConfig = serde_json::from_str(&meta)?;
        let labels_path = dir.join("labels.tsv");
        let labels = fs::read_to_string(&labels_path).map_err(|e| Error::Format {
            path: labels_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut clips = Vec::new();
        for (lineno, line) in labels.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Format {
                    path: labels_path.display().to_string(),
                    msg: format!("line {} has {} fields, expected 4", lineno + 1, fields.len()),
                });
            }
            let bad = |what: &str| Error::Format {
                path: labels_path.display().to_string(),
                msg: format!("line {}: bad {what}", lineno + 1),
            };
            let index: usize = fields[0].parse().map_err(|_| bad("index"))?;
            let label: usize = fields[1].parse().map_err(|_| bad("label"))?;
            let a = fields[2] == "1";
            let b = fields[3] == "1";
            let mut clip: Tensor5<T> =
                read_hot1(&dir.join("clips").join(format!("{index:06}.hot1")))?;
            normalize(&mut clip);
            clips.push(LabeledClip { clip, label, a, b });
        }
        if clips.len() != cfg.train + cfg.test {
            return Err(Error::Format {
                path: labels_path.display().to_string(),
                msg: format!(
                    "{} clips listed but config declares {}",
                    clips.len(),
                    cfg.train + cfg.test
                ),
            });
        }
        let test = clips.split_off(cfg.train);
        Ok(Dataset {
            train: clips,
            test,
            classes: cfg.classes(),
        })
    }

    /// Destroys temporal order: each clip's frames are permuted once, with a
    /// per-clip stream derived from `seed`.
    pub fn shuffle_frames(&mut self, seed: u64) {
        for (i, clip) in self
            .train
            .iter_mut()
            .chain(self.test.iter_mut())
            .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(
                seed,
                seeds::FRAME_SHUFFLE,
                i as u64,
            ));
            let s = clip.clip.shape();
            let mut order: Vec<usize> = (0..s.t).collect();
            order.shuffle(&mut rng);
            let mut data = vec![T::ZERO; clip.clip.numel()];
            let frame = s.h * s.w;
            for (dst, &src) in order.iter().enumerate() {
                let d = dst * frame;
                let sx = src * frame;
                data[d..d + frame].copy_from_slice(&clip.clip.data()[sx..sx + frame]);
            }
            clip.clip = Tensor5::from_vec(s, data).expect("permuted data matches shape");
        }
    }
}

/// One training batch: clips stacked on the batch axis.
pub struct Batch<T> {
    pub x: Tensor5<T>,
    pub labels: Vec<usize>,
}

fn stack<T: Scalar>(clips: &[&LabeledClip<T>]) -> Batch<T> {
    let s = clips[0].clip.shape();
    let shape = Shape5::new(clips.len(), s.c, s.t, s.h, s.w);
    let mut data = Vec::with_capacity(shape.numel());
    for c in clips {
        data.extend_from_slice(c.clip.data());
    }
    Batch {
        x: Tensor5::from_vec(shape, data).expect("stacked data matches shape"),
        labels: clips.iter().map(|c| c.label).collect(),
    }
}

/// Deterministically shuffled batches for one epoch; the last batch may be
/// short.
pub fn shuffled_batches<T: Scalar>(
    clips: &[LabeledClip<T>],
    batch: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Batch<T>> {
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, seeds::BATCH, epoch));
    order.shuffle(&mut rng);
    order
        .chunks(batch)
        .map(|chunk| stack(&chunk.iter().map(|&i| &clips[i]).collect::<Vec<_>>()))
        .collect()
}

/// In-order batches for evaluation.
pub fn sequential_batches<T: Scalar>(clips: &[LabeledClip<T>], batch: usize) -> Vec<Batch<T>> {
    (0..clips.len())
        .collect::<Vec<_>>()
        .chunks(batch)
        .map(|chunk| stack(&chunk.iter().map(|&i| &clips[i]).collect::<Vec<_>>()))
        .collect()
}
