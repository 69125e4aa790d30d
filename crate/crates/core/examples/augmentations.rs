//! Waveform and spectrogram augmentations on a synthetic tone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smae::augment::{cyclic_roll, gain_jitter, mixup, spec_augment, AugmentConfig};
use smae::dsp::{log_mel, MelParams};
use smae::pipeline::{synth_clip, SynthConfig};

fn main() -> smae::Result<()> {
    let cfg = SynthConfig::tones(4, 1, 1.0, 3);
    let a = synth_clip(&cfg, 0, 0)?;
    let b = synth_clip(&cfg, 3, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let rolled = cyclic_roll(&a, 4000)?;
    println!(
        "roll by 4000: first sample {:.4} was sample 4000 ({:.4})",
        rolled.samples[0], a.samples[4000]
    );
    let louder = gain_jitter(&a, 6.0)?;
    println!("+6 dB gain: rms {:.4} -> {:.4}", a.rms(), louder.rms());

    let noisy = AugmentConfig {
        noise_snr_db: Some(20.0),
        ..AugmentConfig::none()
    }
    .apply_wave(&a, &mut rng)?;
    let noise: f64 = noisy
        .samples
        .iter()
        .zip(&a.samples)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    println!(
        "20 dB SNR noise: measured {:.1} dB",
        10.0 * (a.power() / noise).log10()
    );

    let sa = log_mel(&a, &MelParams::with_mels(64))?;
    let sb = log_mel(&b, &MelParams::with_mels(64))?;
    let masked = spec_augment(&sa, 20, 8, &mut rng)?;
    let zeros = masked.values.iter().filter(|&&v| v == 0.0).count();
    println!(
        "specaugment (<=20 frames, <=8 bins): {zeros} of {} cells zeroed",
        masked.values.len()
    );

    let (mixed, y) = mixup(&sa, &[1.0, 0.0], &sb, &[0.0, 1.0], 0.7)?;
    println!(
        "mixup lambda 0.7: targets {y:?}, cell 0 {:.3} = 0.7*{:.3} + 0.3*{:.3}",
        mixed.values[0], sa.values[0], sb.values[0]
    );
    Ok(())
}
