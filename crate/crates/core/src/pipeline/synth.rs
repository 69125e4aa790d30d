//! Synthetic labelled clips for desk-scale runs: pure tones, linear chirps
//! and band-limited noise, one class per frequency band.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Tones,
    /// Tone plus overtones with 1/k amplitudes up to 7.8 kHz.
    Harmonic,
    Chirps,
    Noise,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tones" => Ok(SynthKind::Tones),
            "harmonic" => Ok(SynthKind::Harmonic),
            "chirps" => Ok(SynthKind::Chirps),
            "noise" => Ok(SynthKind::Noise),
            other => Err(Error::Config(format!("unknown synthetic kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n_classes: usize,
    pub per_class: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Broadband noise standard deviation relative to the clip amplitude.
    #[serde(default = "default_floor")]
    pub noise_floor: f64,
}

fn default_floor() -> f64 {
    0.01
}

impl SynthConfig {
    pub fn tones(n_classes: usize, per_class: usize, seconds: f64, seed: u64) -> Self {
        SynthConfig {
            kind: SynthKind::Tones,
            n_classes,
            per_class,
            seconds,
            sample_rate: 16_000,
            seed,
            noise_floor: default_floor(),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes)
            .map(|c| {
                format!(
                    "{:?}-{:.0}hz",
                    self.kind,
                    class_frequency(c, self.n_classes)
                )
                .to_lowercase()
            })
            .collect()
    }
}

/// Centre frequency of class `c`, log-spaced over 250 Hz – 4 kHz.
pub fn class_frequency(c: usize, n_classes: usize) -> f64 {
    if n_classes <= 1 {
        return 1000.0;
    }
    250.0 * 16f64.powf(c as f64 / (n_classes - 1) as f64)
}

fn band_noise(n: usize, sr: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(normal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f < lo || f > hi {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    x.into_iter().map(|v| v / peak).collect()
}

/// One clip of class `c`; identical (config, c, item) always give identical samples.
pub fn synth_clip(cfg: &SynthConfig, c: usize, item: usize) -> Result<Waveform> {
    if c >= cfg.n_classes {
        return Err(Error::InvalidArgument(format!(
            "class {c} of {}",
            cfg.n_classes
        )));
    }
    let sr = cfg.sample_rate as f64;
    let n = (cfg.seconds * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ ((c as u64) << 32) ^ (item as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let f0 = class_frequency(c, cfg.n_classes) * rng.gen_range(0.97..1.03);
    let amp = rng.gen_range(0.1..0.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut x: Vec<f64> = match cfg.kind {
        SynthKind::Tones => (0..n)
            .map(|i| amp * (2.0 * PI * f0 * i as f64 / sr + phase).sin())
            .collect(),
        SynthKind::Harmonic => {
            let partials: Vec<(f64, f64)> = (1..)
                .map(|k| k as f64)
                .take_while(|k| k * f0 < 7800.0)
                .map(|k| (k * f0, rng.gen_range(0.0..2.0 * PI) + k * phase))
                .collect();
            let norm: f64 = (1..=partials.len()).map(|k| 1.0 / k as f64).sum();
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let v: f64 = partials
                        .iter()
                        .enumerate()
                        .map(|(k, (f, p))| (2.0 * PI * f * t + p).sin() / (k + 1) as f64)
                        .sum();
                    amp * v / norm
                })
                .collect()
        }
        SynthKind::Chirps => {
            // sweep one octave upwards over the clip
            let dur = n as f64 / sr;
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    amp * (2.0 * PI * (f0 * t + 0.5 * f0 / dur * t * t) + phase).sin()
                })
                .collect()
        }
        SynthKind::Noise => band_noise(n, sr, f0 / 1.25, f0 * 1.25, &mut rng)
            .into_iter()
            .map(|v| amp * v)
            .collect(),
    };
    if cfg.noise_floor > 0.0 {
        let floor = Normal::new(0.0, amp * cfg.noise_floor).unwrap();
        x.iter_mut().for_each(|v| *v += floor.sample(&mut rng));
    }
    Waveform::new(x, cfg.sample_rate)
}

/// All clips, class-major, with their labels.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<(Waveform, usize)>> {
    let mut out = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for item in 0..cfg.per_class {
        for c in 0..cfg.n_classes {
            out.push((synth_clip(cfg, c, item)?, c));
        }
    }
    Ok(out)
}
