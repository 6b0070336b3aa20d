//! Run configuration (TOML). Every key has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use avsplat::deformer::{DecoderConfig, FuseOptions};
use avsplat::trainer::{LossWeights, ModelConfig, SynthConfig, TrainSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const BUILTIN_TEMPLATE: &str = "puppet";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Body template; only the built-in `puppet` is available.
    pub template: String,
    /// Dataset directory read by `train`, `render` and `eval`.
    pub dataset: PathBuf,
    /// Output directory of every command.
    pub out: PathBuf,
    pub seed: u64,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub loss: LossSection,
    pub fit: FitSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            template: BUILTIN_TEMPLATE.into(),
            dataset: PathBuf::from("data"),
            out: PathBuf::from("out"),
            seed: 0,
            synth: SynthSection::default(),
            model: ModelSection::default(),
            schedule: ScheduleSection::default(),
            loss: LossSection::default(),
            fit: FitSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub frames: usize,
    pub train_views: usize,
    pub heldout_views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub distance: f64,
    pub eye_height: f64,
    pub target_height: f64,
    pub crop_size: usize,
    pub body_resolution: usize,
    pub sh_degree: usize,
    pub beta: Vec<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            frames: d.frames,
            train_views: d.train_views,
            heldout_views: d.heldout_views,
            width: d.width,
            height: d.height,
            focal: d.focal,
            distance: d.distance,
            eye_height: d.eye_height,
            target_height: d.target_height,
            crop_size: d.crop_size,
            body_resolution: d.body_resolution,
            sh_degree: d.sh_degree,
            beta: d.beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub body_resolution: usize,
    pub densify_factor: usize,
    pub n_mlp: usize,
    pub cm: usize,
    pub sh_degree: usize,
    pub head_margin: usize,
    pub head_threshold: f64,
    pub attenuation: f64,
    pub init_scale: f64,
    pub init_opacity: f64,
    pub init_gray: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            body_resolution: d.body_resolution,
            densify_factor: d.densify_factor,
            n_mlp: d.decoder.n_mlp,
            cm: d.decoder.cm,
            sh_degree: d.sh_degree,
            head_margin: d.head_margin,
            head_threshold: d.fuse.head_threshold,
            attenuation: d.fuse.attenuation,
            init_scale: d.init_scale,
            init_opacity: d.init_opacity,
            init_gray: d.init_gray,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub pretrain_steps: usize,
    pub joint_steps: usize,
    pub face_steps: usize,
    pub decoder_lr: f64,
    pub attribute_lr: f64,
    pub face_position_lr: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let d = TrainSchedule::default();
        Self {
            pretrain_steps: d.pretrain_steps,
            joint_steps: d.joint_steps,
            face_steps: d.face_steps,
            decoder_lr: d.decoder_lr,
            attribute_lr: d.attribute_lr,
            face_position_lr: d.face_position_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub l1: f64,
    pub perceptual: f64,
    pub offset: f64,
    pub adversarial: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossWeights::default();
        Self {
            l1: d.l1,
            perceptual: d.perceptual,
            offset: d.offset,
            adversarial: d.adversarial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Target vertex/joint file.
    pub target: PathBuf,
    /// Weight of the joint term.
    pub lambda: f64,
    /// Largest accepted vertex RMS (m); above it `fit` exits with status 1.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            target: PathBuf::from("target.txt"),
            lambda: 1.0,
            tolerance: 1e-3,
            max_iterations: 5000,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let c: Config = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.template != BUILTIN_TEMPLATE {
            return Err(CliError::Validation(format!(
                "unknown template `{}` (available: {BUILTIN_TEMPLATE})",
                self.template
            )));
        }
        self.synth_config().validate()?;
        self.model_config().validate()?;
        self.schedule().validate()?;
        self.loss_weights().validate()?;
        if !(self.fit.lambda >= 0.0 && self.fit.tolerance >= 0.0) {
            return Err(CliError::Validation("fit lambda and tolerance must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            frames: s.frames,
            train_views: s.train_views,
            heldout_views: s.heldout_views,
            width: s.width,
            height: s.height,
            focal: s.focal,
            distance: s.distance,
            eye_height: s.eye_height,
            target_height: s.target_height,
            crop_size: s.crop_size,
            body_resolution: s.body_resolution,
            sh_degree: s.sh_degree,
            beta: s.beta.clone(),
            seed: self.seed,
        }
    }

    /// Model settings; the head crop size follows the dataset's.
    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            body_resolution: m.body_resolution,
            densify_factor: m.densify_factor,
            decoder: DecoderConfig { n_mlp: m.n_mlp, cm: m.cm },
            sh_degree: m.sh_degree,
            head_margin: m.head_margin,
            fuse: FuseOptions {
                head_threshold: m.head_threshold,
                attenuation: m.attenuation,
            },
            init_scale: m.init_scale,
            init_opacity: m.init_opacity,
            init_gray: m.init_gray,
            crop_size: self.synth.crop_size,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        let s = &self.schedule;
        TrainSchedule {
            pretrain_steps: s.pretrain_steps,
            joint_steps: s.joint_steps,
            face_steps: s.face_steps,
            decoder_lr: s.decoder_lr,
            attribute_lr: s.attribute_lr,
            face_position_lr: s.face_position_lr,
            seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let l = &self.loss;
        LossWeights {
            l1: l.l1,
            perceptual: l.perceptual,
            offset: l.offset,
            adversarial: l.adversarial,
        }
    }
}
