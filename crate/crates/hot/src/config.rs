//! The JSON experiment configuration: strict parsing (unknown keys rejected),
//! menu validation, default filling, and the single-seed fan-out that makes
//! every run reproducible from one file.

use std::fs;
use std::path::Path;

use crate::analysis::Convention;
use crate::hblock::{GeneratorKind, HBlockConfig, WeightActivation};
use crate::model::{BackboneSpec, InsertionPlan, NormMode, StageId};
use crate::seeds;
use crate::synth::XorTaskConfig;
use crate::tensor::{DType, OffsetGrid};
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub width_scale: usize,
    pub blocks: [usize; 4],
    /// (frames, height, width).
    pub input: [usize; 3],
    pub in_channels: usize,
    /// Resolved from the data section when absent.
    pub classes: Option<usize>,
    pub norm: NormMode,
}

impl Default for BackboneSection {
    fn default() -> Self {
        BackboneSection {
            width_scale: 8,
            blocks: [3, 4, 6, 3],
            input: [8, 32, 32],
            in_channels: 1,
            classes: None,
            norm: NormMode::Batch,
        }
    }
}

#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsertionSection {
    /// One of none, 1-block, 3-block, 5-block.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Explicit sites as [stage, index] pairs, e.g. [["res3", 2]].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<(StageId, usize)>>,
}

impl InsertionSection {
    pub fn to_plan(&self) -> Result<InsertionPlan> {
        match (&self.preset, &self.sites) {
            (Some(_), Some(_)) => Err(Error::Config(
                "insertion takes either a preset or explicit sites, not both".into(),
            )),
            (Some(name), None) => InsertionPlan::preset(name),
            (None, Some(sites)) => Ok(InsertionPlan {
                sites: sites.clone(),
            }),
            (None, None) => Ok(InsertionPlan::empty()),
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HBlockSection {
    pub kernel: [usize; 3],
    pub context: [usize; 3],
    pub generator: GeneratorKind,
    pub activation: WeightActivation,
    pub residual: bool,
}

impl Default for HBlockSection {
    fn default() -> Self {
        HBlockSection {
            kernel: [3, 3, 3],
            context: [5, 5, 5],
            generator: GeneratorKind::ConvNet,
            activation: WeightActivation::Softmax,
            residual: true,
        }
    }
}

impl HBlockSection {
    pub fn to_config(&self, channels: usize) -> HBlockConfig {
        HBlockConfig {
            channels,
            kernel: OffsetGrid::from_extents(
                self.kernel[0] / 2,
                self.kernel[1] / 2,
                self.kernel[2] / 2,
            ),
            context: OffsetGrid::from_extents(
                self.context[0] / 2,
                self.context[1] / 2,
                self.context[2] / 2,
            ),
            generator: self.generator,
            activation: self.activation,
            residual: self.residual,
        }
    }
}

#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Inline synthetic-task generation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xor: Option<XorTaskConfig>,
    /// Previously generated dataset directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Destroy temporal order at load (control experiments).
    pub frame_shuffle: bool,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dtype: DType,
    pub backbone: BackboneSection,
    pub insertion: InsertionSection,
    pub hblock: HBlockSection,
    pub data: DataSection,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dtype: DType::F32,
            backbone: BackboneSection::default(),
            insertion: InsertionSection::default(),
            hblock: HBlockSection::default(),
            data: DataSection {
                xor: Some(XorTaskConfig::default()),
                path: None,
                frame_shuffle: false,
            },
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        crate::hblock::validate_menus(self.kernel_sizes(), self.context_sizes())?;
        let plan = self.insertion.to_plan()?;
        plan.validate(&self.backbone.blocks)?;
        self.train.validate()?;
        match (&self.data.xor, &self.data.path) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data takes either an inline xor task or a path, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "data needs an inline xor task or a dataset path".into(),
                ))
            }
            _ => {}
        }
        if let Some(xor) = &self.data.xor {
            let mut resolved = xor.clone();
            resolved.seed = self.data_seed();
            resolved.validate()?;
            if xor.clip != (self.backbone.input[0], self.backbone.input[1], self.backbone.input[2])
            {
                return Err(Error::Config(format!(
                    "backbone input {:?} and data clip {:?} disagree",
                    self.backbone.input, xor.clip
                )));
            }
            if let Some(classes) = self.backbone.classes {
                if classes != resolved.classes() {
                    return Err(Error::Config(format!(
                        "backbone declares {classes} classes but the task produces {}",
                        resolved.classes()
                    )));
                }
            }
        }
        self.backbone_spec(self.backbone.classes.unwrap_or(2))
            .validate()?;
        Ok(())
    }

    fn kernel_sizes(&self) -> (usize, usize, usize) {
        (
            self.hblock.kernel[0],
            self.hblock.kernel[1],
            self.hblock.kernel[2],
        )
    }

    fn context_sizes(&self) -> (usize, usize, usize) {
        (
            self.hblock.context[0],
            self.hblock.context[1],
            self.hblock.context[2],
        )
    }

    /// Dataset stream derived from the experiment seed; the xor section's own
    /// seed field is always overwritten by this so one seed rules the run.
    pub fn data_seed(&self) -> u64 {
        seeds::derive(self.seed, seeds::DATA)
    }

    pub fn init_seed(&self) -> u64 {
        seeds::derive(self.seed, seeds::INIT)
    }

    /// The xor task with its derived seed filled in.
    pub fn resolved_xor(&self) -> Option<XorTaskConfig> {
        self.data.xor.clone().map(|mut x| {
            x.seed = self.data_seed();
            x
        })
    }

    pub fn backbone_spec(&self, classes: usize) -> BackboneSpec {
        BackboneSpec {
            width_scale: self.backbone.width_scale,
            blocks: self.backbone.blocks,
            input: (
                self.backbone.input[0],
                self.backbone.input[1],
                self.backbone.input[2],
            ),
            in_channels: self.backbone.in_channels,
            classes,
            norm: self.backbone.norm,
        }
    }

    /// A copy with every default and derived value materialized; written next
    /// to run outputs so the run can be reproduced from one file.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut out = self.clone();
        if let Some(xor) = out.data.xor.as_mut() {
            xor.seed = seeds::derive(self.seed, seeds::DATA);
        }
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(&self.resolved())?;
        fs::write(dir.join("resolved_config.json"), text)?;
        Ok(())
    }
}

/// Parses the FLOPs convention flag used by the costs subcommand.
pub fn parse_convention(s: &str) -> Result<Convention> {
    match s {
        "mac1" => Ok(Convention::Mac1),
        "mac2" => Ok(Convention::Mac2),
        other => Err(Error::Config(format!(
            "unknown convention {other:?} (expected mac1 or mac2)"
        ))),
    }
}
