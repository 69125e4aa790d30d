use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dsp::DatasetStats;
use crate::error::{Error, Result};
use crate::masking::MaskStrategy;
use crate::model::{ClassLoss, MaskingDefaults, Objective};
use crate::numerics::AdamWConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Bce,
    Ce,
}

impl LossKind {
    pub fn class_loss(self) -> Result<ClassLoss> {
        match self {
            LossKind::Bce => Ok(ClassLoss::Bce),
            LossKind::Ce => Ok(ClassLoss::Ce),
            LossKind::Mse => Err(Error::Config(
                "MSE is the pre-training loss, not a classifier loss".into(),
            )),
        }
    }
}

/// Oversample every class to `fraction` of the reference class's clip count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub reference_class: String,
    pub fraction: f64,
}

/// One column of the pre-training / fine-tuning hyperparameter table, plus
/// the data-shape settings needed to run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub name: String,
    pub phase: Phase,
    pub optimizer: AdamWConfig,
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub weighted_sampling: bool,
    pub weighted_sampling_size: Option<usize>,
    #[serde(default)]
    pub balance: Option<BalanceConfig>,
    pub augment: AugmentConfig,
    pub drop_path: f64,
    pub dropout: f64,
    pub multilabel: Option<bool>,
    pub loss: LossKind,
    pub dataset_mean: f64,
    pub dataset_std: f64,
    pub clip_seconds: f64,
    pub target_frames: usize,
    pub n_mels: usize,
    pub masking: MaskingDefaults,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub seed: u64,
}

fn finetune_masking() -> MaskingDefaults {
    MaskingDefaults {
        strategy: MaskStrategy::TimeFrequency,
        ratio: 0.0,
        ratio_t: 0.3,
        ratio_f: 0.3,
    }
}

fn roll(noise: bool, specaug: (usize, usize), mixup: f64) -> AugmentConfig {
    AugmentConfig {
        roll: true,
        gain_jitter_db: 6.0,
        noise_snr_db: noise.then_some(20.0),
        specaug_time: specaug.0,
        specaug_freq: specaug.1,
        mixup,
        ..AugmentConfig::none()
    }
}

impl TrainConfig {
    pub const PRESETS: [&'static str; 7] =
        ["as2m-pt", "as2m", "as20k", "esc", "spc2", "spc1", "sid"];

    /// AudioSet-2M pre-training column.
    pub fn as2m_pretrain() -> Self {
        TrainConfig {
            name: "as2m-pt".into(),
            phase: Phase::Pretrain,
            optimizer: AdamWConfig::default(),
            base_lr: 2e-4,
            min_lr: 1e-6,
            warmup_epochs: 3,
            epochs: 32,
            batch_size: 512,
            weighted_sampling: false,
            weighted_sampling_size: None,
            balance: None,
            augment: roll(false, (0, 0), 0.0),
            drop_path: 0.0,
            dropout: 0.0,
            multilabel: None,
            loss: LossKind::Mse,
            dataset_mean: -4.268,
            dataset_std: 4.569,
            clip_seconds: 10.0,
            target_frames: 1024,
            n_mels: 128,
            masking: MaskingDefaults::default(),
            objective: Objective::Reconstruction,
            seed: 0,
        }
    }

    fn finetune(name: &str) -> Self {
        TrainConfig {
            name: name.into(),
            phase: Phase::Finetune,
            drop_path: 0.1,
            masking: finetune_masking(),
            ..Self::as2m_pretrain()
        }
    }

    pub fn as2m_finetune() -> Self {
        TrainConfig {
            base_lr: 2e-4,
            warmup_epochs: 20,
            epochs: 100,
            batch_size: 512,
            weighted_sampling: true,
            weighted_sampling_size: Some(200_000),
            augment: roll(false, (192, 48), 0.5),
            multilabel: Some(true),
            loss: LossKind::Bce,
            ..Self::finetune("as2m")
        }
    }

    pub fn as20k_finetune() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            warmup_epochs: 4,
            epochs: 60,
            batch_size: 32,
            augment: roll(false, (192, 48), 0.5),
            multilabel: Some(true),
            loss: LossKind::Bce,
            ..Self::finetune("as20k")
        }
    }

    pub fn esc_finetune() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            warmup_epochs: 4,
            epochs: 60,
            batch_size: 64,
            augment: roll(false, (96, 24), 0.0),
            multilabel: Some(false),
            loss: LossKind::Ce,
            dataset_mean: -6.627,
            dataset_std: 5.359,
            clip_seconds: 5.0,
            target_frames: 512,
            ..Self::finetune("esc")
        }
    }

    pub fn spc2_finetune() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            warmup_epochs: 4,
            epochs: 60,
            batch_size: 256,
            augment: roll(true, (48, 48), 0.5),
            multilabel: Some(false),
            loss: LossKind::Bce,
            dataset_mean: -6.846,
            dataset_std: 5.565,
            clip_seconds: 1.0,
            target_frames: 128,
            ..Self::finetune("spc2")
        }
    }

    pub fn spc1_finetune() -> Self {
        TrainConfig {
            name: "spc1".into(),
            warmup_epochs: 1,
            epochs: 10,
            balance: Some(BalanceConfig {
                reference_class: "unknown".into(),
                fraction: 0.5,
            }),
            dataset_mean: -6.702,
            dataset_std: 5.448,
            ..Self::spc2_finetune()
        }
    }

    pub fn sid_finetune() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            warmup_epochs: 4,
            epochs: 60,
            batch_size: 64,
            augment: roll(true, (192, 48), 0.0),
            multilabel: Some(false),
            loss: LossKind::Ce,
            dataset_mean: -6.370,
            dataset_std: 3.074,
            ..Self::finetune("sid")
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "as2m-pt" => Ok(Self::as2m_pretrain()),
            "as2m" => Ok(Self::as2m_finetune()),
            "as20k" => Ok(Self::as20k_finetune()),
            "esc" => Ok(Self::esc_finetune()),
            "spc2" => Ok(Self::spc2_finetune()),
            "spc1" => Ok(Self::spc1_finetune()),
            "sid" => Ok(Self::sid_finetune()),
            "toy-pt" => Ok(Self::toy_pretrain()),
            "toy-ft" => Ok(Self::toy_finetune()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {:?} or toy-pt / toy-ft",
                Self::PRESETS
            ))),
        }
    }

    /// Desk-scale pre-training on 0.64 s clips (62 frames padded to 64, 32 mels).
    pub fn toy_pretrain() -> Self {
        TrainConfig {
            name: "toy-pt".into(),
            base_lr: 0.128,
            min_lr: 1e-6,
            warmup_epochs: 5,
            epochs: 500,
            batch_size: 8,
            augment: AugmentConfig::none(),
            // measured over the synthetic tone set
            dataset_mean: -4.0,
            dataset_std: 3.3,
            clip_seconds: 0.64,
            target_frames: 64,
            n_mels: 32,
            ..Self::as2m_pretrain()
        }
    }

    pub fn toy_finetune() -> Self {
        TrainConfig {
            name: "toy-ft".into(),
            base_lr: 0.016,
            warmup_epochs: 1,
            epochs: 8,
            batch_size: 16,
            augment: AugmentConfig::none(),
            multilabel: Some(false),
            loss: LossKind::Ce,
            ..Self::finetune("toy-ft")
        }
        .with_shape_of(&Self::toy_pretrain())
    }

    fn with_shape_of(mut self, other: &TrainConfig) -> Self {
        self.dataset_mean = other.dataset_mean;
        self.dataset_std = other.dataset_std;
        self.clip_seconds = other.clip_seconds;
        self.target_frames = other.target_frames;
        self.n_mels = other.n_mels;
        self
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        DatasetStats::new(self.dataset_mean, self.dataset_std)
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.stats()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config("warm-up longer than training".into()));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return Err(Error::Config(format!(
                "drop path {} outside [0, 1)",
                self.drop_path
            )));
        }
        if self.weighted_sampling && self.weighted_sampling_size.is_none() {
            return Err(Error::Config(
                "weighted sampling needs weighted_sampling_size".into(),
            ));
        }
        match (self.phase, self.loss) {
            (Phase::Pretrain, LossKind::Mse) => {}
            (Phase::Pretrain, _) | (Phase::Finetune, LossKind::Mse) => {
                return Err(Error::Config(format!(
                    "{:?} loss does not fit {:?}",
                    self.loss, self.phase
                )))
            }
            (Phase::Finetune, LossKind::Ce) => {
                // multi-label data or mixup call for BCE
                if self.multilabel == Some(true) || self.augment.mixup > 0.0 {
                    return Err(Error::Config(
                        "multi-label data or mixup requires BCE".into(),
                    ));
                }
            }
            (Phase::Finetune, LossKind::Bce) => {}
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
