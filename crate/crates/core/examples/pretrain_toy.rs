//! Masked pre-training of the toy model on synthetic harmonic tones.
//!
//! `cargo run --release --example pretrain_toy [steps]`

use smae::model::{AudioMaeModel, ModelConfig};
use smae::pipeline::{
    masked_mse, run_pretrain, InMemoryClips, RunOptions, SynthConfig, SynthKind, TrainConfig,
};

fn main() -> smae::Result<()> {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let sc = SynthConfig {
        kind: SynthKind::Harmonic,
        noise_floor: 0.0,
        ..SynthConfig::tones(4, 2, 0.64, 0)
    };
    let data = InMemoryClips::from_synth(&sc)?;
    // eight clips at batch 8: one step per epoch, so the schedule spans `steps`
    let cfg = TrainConfig {
        epochs: steps.max(5),
        ..TrainConfig::toy_pretrain()
    };
    let mut model = AudioMaeModel::new(ModelConfig::toy(), 0)?;

    let before = masked_mse(&model, &data, &cfg, 8, 1)?;
    let run = run_pretrain(&mut model, &data, &cfg, &RunOptions::default())?;
    let after = masked_mse(&model, &data, &cfg, 8, 1)?;
    for l in run.log.iter().step_by((steps / 5).max(1)) {
        println!("step {:>4} lr {:.5} l_r {:.4}", l.step, l.lr, l.l_r);
    }
    println!(
        "masked MSE on fixed masks: {before:.4} -> {after:.4} after {} steps",
        run.steps
    );
    Ok(())
}
