//! Fine-tuning a toy classifier on synthetic tone classes.

use smae::model::{AudioMaeModel, ModelConfig};
use smae::pipeline::{
    evaluate, run_finetune, FeaturePipeline, InMemoryClips, RunOptions, SynthConfig, TrainConfig,
};

fn main() -> smae::Result<()> {
    let train = InMemoryClips::from_synth(&SynthConfig::tones(4, 25, 0.64, 1))?;
    let test = InMemoryClips::from_synth(&SynthConfig::tones(4, 10, 0.64, 2))?;
    let cfg = TrainConfig::toy_finetune();
    let mut model = AudioMaeModel::new(
        ModelConfig {
            decoder: None,
            n_classes: Some(4),
            ..ModelConfig::toy()
        },
        0,
    )?;

    let run = run_finetune(
        &mut model,
        &train,
        Some(&test),
        &cfg,
        &RunOptions::default(),
    )?;
    for e in &run.epochs {
        let acc = e.eval.as_ref().map(|r| r.accuracy).unwrap_or(f64::NAN);
        println!(
            "epoch {} train acc {:.3} test acc {:.3}",
            e.epoch, e.train_accuracy, acc
        );
    }
    let report = evaluate(&model, &test, &FeaturePipeline::from_config(&cfg)?, None)?;
    println!(
        "final: accuracy {:.3}, mAP {:.3} over {} clips",
        report.accuracy, report.map, report.n_items
    );
    Ok(())
}
