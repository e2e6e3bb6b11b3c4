//! Run configuration: a TOML file of `key = value` lines grouped into
//! sections. Every key has a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vidcount_core::data::SyntheticSceneConfig;
use vidcount_core::matching::{LossWeights, MatchWeights};
use vidcount_core::metrics::{InferenceConfig, DEFAULT_THRESHOLD};
use vidcount_core::model::{ModelConfig, QueryMode};
use vidcount_core::train::{AdamConfig, TrainSettings};

use crate::error::{read_text, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub crop_size: usize,
    pub downsample_factor: usize,
    pub backbone_channels: Vec<usize>,
    pub token_dim: usize,
    pub density_feature_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub num_queries: usize,
    pub frames: usize,
    pub reference_frame: Option<usize>,
    pub query_mode: String,
    pub sigma: f64,
}

impl From<&ModelConfig> for ModelSection {
    fn from(c: &ModelConfig) -> Self {
        ModelSection {
            crop_size: c.crop_size,
            downsample_factor: c.downsample_factor,
            backbone_channels: c.backbone_channels.clone(),
            token_dim: c.token_dim,
            density_feature_dim: c.density_feature_dim,
            encoder_layers: c.encoder_layers,
            decoder_layers: c.decoder_layers,
            attention_heads: c.attention_heads,
            num_queries: c.num_queries,
            frames: c.frames,
            reference_frame: c.reference_frame,
            query_mode: c.query_mode.as_str().into(),
            sigma: c.sigma,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        (&ModelConfig::default()).into()
    }
}

impl ModelSection {
    pub fn to_config(&self) -> Result<ModelConfig> {
        let c = ModelConfig {
            crop_size: self.crop_size,
            downsample_factor: self.downsample_factor,
            backbone_channels: self.backbone_channels.clone(),
            token_dim: self.token_dim,
            density_feature_dim: self.density_feature_dim,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            attention_heads: self.attention_heads,
            num_queries: self.num_queries,
            frames: self.frames,
            reference_frame: self.reference_frame,
            query_mode: QueryMode::parse(&self.query_mode)?,
            sigma: self.sigma,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerSection { step_size: a.step_size, beta1: a.beta1, beta2: a.beta2, eps: a.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Optimizer steps. Ignored when `epochs` is positive.
    pub steps: u64,
    /// Passes over the training frames, one clip per frame.
    pub epochs: u64,
    pub batch_clips: usize,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { steps: 300, epochs: 0, batch_clips: 1, checkpoint_every: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_reg: f64,
    pub lambda_dm: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub lambda_point: f64,
    pub lambda_conf: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossWeights::default();
        let m = MatchWeights::default();
        LossSection {
            lambda_reg: l.lambda_reg,
            lambda_dm: l.lambda_dm,
            focal_alpha: l.focal_alpha,
            focal_gamma: l.focal_gamma,
            lambda_point: m.lambda_point,
            lambda_conf: m.lambda_conf,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub threshold: f64,
    /// 0 means "the crop size".
    pub patch_size: usize,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection { threshold: DEFAULT_THRESHOLD, patch_size: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset root written by `generate` and read by the other commands.
    pub dataset: PathBuf,
    /// Directory for checkpoints, logs and reports.
    pub out: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { dataset: "data".into(), out: "runs".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub sequences: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub count_min: usize,
    pub count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub blend: f64,
    pub max_speed: f64,
    /// Sequence counts for train, val and test.
    pub splits: [usize; 3],
}

impl Default for GenerateSection {
    fn default() -> Self {
        let s = SyntheticSceneConfig::default();
        GenerateSection {
            sequences: 35,
            height: s.height,
            width: s.width,
            frames: 30,
            count_min: s.count_range.0,
            count_max: s.count_range.1,
            radius_min: s.object_radius_range.0,
            radius_max: s.object_radius_range.1,
            blend: s.blend,
            max_speed: s.max_speed,
            splits: [25, 3, 7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Split the four trained models are evaluated on.
    pub split: String,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { split: "test".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub inference: InferenceSection,
    pub data: DataSection,
    pub generate: GenerateSection,
    pub ablate: AblateSection,
}

impl RunConfig {
    /// Parses config text and checks every derived setting. Relative paths
    /// are kept as written.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses `path`; relative data paths are resolved against the
    /// directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| e.context(path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.dataset, &mut cfg.data.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_config()?;
        self.train_settings()?;
        self.inference(&model).validate(&model)?;
        self.scene(0)?.validate()?;
        if self.generate.sequences != self.generate.splits.iter().sum::<usize>() {
            return Err(CliError::Config(format!(
                "generate.splits {:?} do not add up to {} sequences",
                self.generate.splits, self.generate.sequences
            )));
        }
        if self.train.steps == 0 && self.train.epochs == 0 {
            return Err(CliError::Config("train.steps and train.epochs are both 0".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.to_config()
    }

    pub fn train_settings(&self) -> Result<TrainSettings> {
        let o = &self.optimizer;
        if !(o.step_size > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(CliError::Config(format!("optimizer settings out of range: {o:?}")));
        }
        if self.train.batch_clips == 0 {
            return Err(CliError::Config("train.batch_clips must be positive".into()));
        }
        let l = &self.loss;
        let loss = LossWeights {
            lambda_reg: l.lambda_reg,
            lambda_dm: l.lambda_dm,
            focal_alpha: l.focal_alpha,
            focal_gamma: l.focal_gamma,
        };
        loss.validate()?;
        if !(l.lambda_point >= 0.0) || !(l.lambda_conf >= 0.0) {
            return Err(CliError::Config("matching weights must be non-negative".into()));
        }
        Ok(TrainSettings {
            optimizer: AdamConfig { step_size: o.step_size, beta1: o.beta1, beta2: o.beta2, eps: o.eps },
            loss,
            matching: MatchWeights { lambda_point: l.lambda_point, lambda_conf: l.lambda_conf },
            batch_clips: self.train.batch_clips,
            seed: self.seed,
        })
    }

    pub fn inference(&self, model: &ModelConfig) -> InferenceConfig {
        let patch_size = if self.inference.patch_size == 0 { model.crop_size } else { self.inference.patch_size };
        InferenceConfig { threshold: self.inference.threshold, patch_size }
    }

    /// Scene settings for sequence `i`; its seed is `seed ^ i`.
    pub fn scene(&self, i: usize) -> Result<SyntheticSceneConfig> {
        let g = &self.generate;
        let cfg = SyntheticSceneConfig {
            height: g.height,
            width: g.width,
            num_frames: g.frames,
            count_range: (g.count_min, g.count_max),
            object_radius_range: (g.radius_min, g.radius_max),
            blend: g.blend,
            max_speed: g.max_speed,
            seed: self.seed ^ i as u64,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Total optimizer steps for a training split holding `train_frames`
    /// frames.
    pub fn total_steps(&self, train_frames: usize) -> u64 {
        if self.train.epochs > 0 {
            let per_epoch = train_frames.div_ceil(self.train.batch_clips).max(1) as u64;
            self.train.epochs * per_epoch
        } else {
            self.train.steps
        }
    }
}
