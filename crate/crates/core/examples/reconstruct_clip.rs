//! Masks a clip, fills the gaps with a (briefly trained) decoder and renders the result.
//!
//! `cargo run --release --example reconstruct_clip [out_dir] [steps]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smae::dsp::{log_mel, normalize, pad_or_trim, MelParams};
use smae::masking::{plan_for, MaskStrategy};
use smae::model::{AudioMaeModel, ModelConfig};
use smae::pipeline::{
    reconstruct, run_pretrain, synth_clip, InMemoryClips, RunOptions, SynthConfig, SynthKind,
    TrainConfig,
};
use smae::render::{cell_mask, value_range, write_png, RenderOptions};

fn main() -> smae::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let sc = SynthConfig {
        kind: SynthKind::Harmonic,
        noise_floor: 0.0,
        ..SynthConfig::tones(4, 2, 0.64, 0)
    };
    let steps: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(150);
    let cfg = TrainConfig {
        epochs: steps.max(5),
        ..TrainConfig::toy_pretrain()
    };
    let mut model = AudioMaeModel::new(ModelConfig::toy(), 0)?;
    let data = InMemoryClips::from_synth(&sc)?;
    run_pretrain(&mut model, &data, &cfg, &RunOptions::default())?;

    let stats = cfg.stats()?;
    let spec = log_mel(&synth_clip(&sc, 2, 0)?, &MelParams::with_mels(32))?;
    let spec = pad_or_trim(&normalize(&spec, stats), 64)?;
    let plan = plan_for(
        model.grid(),
        MaskStrategy::Time,
        0.25,
        0.0,
        &mut ChaCha8Rng::seed_from_u64(3),
    )?;
    let r = reconstruct(&model, &spec, &plan, stats, false)?;
    println!("{} of {} patches masked", r.info.n_masked, plan.n_total);

    let opts = RenderOptions {
        range: Some(value_range(&r.original)),
        scale: 4,
    };
    let mask = cell_mask(model.grid(), &plan, spec.frames, spec.bins)?;
    write_png(out.join("original.png"), &r.original, None, opts)?;
    write_png(out.join("masked.png"), &r.masked, Some(&mask), opts)?;
    write_png(out.join("restored.png"), &r.restored, None, opts)?;
    let n_masked = mask.iter().filter(|&&m| m).count() as f64;
    let cells = || r.original.values.iter().zip(&mask);
    let visible_mean =
        cells().filter(|(_, &m)| !m).map(|(v, _)| v).sum::<f64>() / (mask.len() as f64 - n_masked);
    let mse = |fill: &dyn Fn(usize) -> f64| {
        cells()
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(|(i, (v, _))| (fill(i) - v).powi(2))
            .sum::<f64>()
            / n_masked
    };
    let model_err = mse(&|i| r.restored.values[i]);
    let mean_err = mse(&|_| visible_mean);
    println!(
        "masked-cell MSE in log-mel units: decoder {model_err:.3}, visible-mean fill {mean_err:.3}"
    );
    println!("wrote original/masked/restored.png to {}", out.display());
    Ok(())
}
