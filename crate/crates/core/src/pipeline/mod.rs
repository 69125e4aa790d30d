//! Data, training and evaluation.

pub mod config;
pub mod data;
pub mod manifest;
pub mod metrics;
pub mod reconstruct;
pub mod sampling;
pub mod synth;
pub mod train;

pub use config::{BalanceConfig, LossKind, Phase, TrainConfig};
pub use data::{ClipSource, Example, FeaturePipeline, InMemoryClips, Loader, ManifestClips, Mode};
pub use manifest::{ClipRecord, Manifest};
pub use metrics::{accuracy, average_precision, mean_average_precision, EvalReport};
pub use reconstruct::{reconstruct, Reconstruction, ReconstructionInfo};
pub use sampling::{
    balance_expand, class_weights, instance_weights, weighted_sample_without_replacement,
};
pub use synth::{synth_clip, synth_dataset, SynthConfig, SynthKind};
pub use train::{
    classifier_from_checkpoint, evaluate, masked_mse, run_finetune, run_pretrain, EpochEval,
    FinetuneLog, PretrainLog, RunOptions,
};
