//! Log-mel features of a two-tone clip and a Griffin-Lim round trip.
//!
//! `cargo run --example logmel_griffin_lim [out_dir]`

use std::f64::consts::PI;

use smae::dsp::{encode_wav, griffin_lim, log_mel, pad_or_trim, MelParams, Waveform};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let sr = 16_000;
    let samples: Vec<f64> = (0..sr as usize)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.3 * (2.0 * PI * 440.0 * t).sin() + 0.2 * (2.0 * PI * 1800.0 * t).sin()
        })
        .collect();
    let wave = Waveform::new(samples, sr)?;
    let spec = log_mel(&wave, &MelParams::default())?;
    println!(
        "1 s at {sr} Hz -> {} frames x {} mel bins",
        spec.frames, spec.bins
    );
    let padded = pad_or_trim(&spec, 128)?;
    println!("padded to {} frames", padded.frames);

    let peak = |t: usize| {
        let f = spec.frame(t);
        (0..f.len()).fold(0, |b, i| if f[i] > f[b] { i } else { b })
    };
    println!("loudest mel bin in frame 50: {}", peak(50));

    let gl = griffin_lim(&spec, sr, 32)?;
    let inc = &gl.inconsistency;
    println!(
        "griffin-lim: {} samples, inconsistency {:.3} -> {:.3}",
        gl.waveform.len(),
        inc[0],
        inc[inc.len() - 1]
    );
    let path = out.join("griffin_lim.wav");
    std::fs::write(&path, encode_wav(&gl.waveform)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
