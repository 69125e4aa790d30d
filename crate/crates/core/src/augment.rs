//! Training-time augmentations: cyclic roll, gain jitter, fixed-SNR noise,
//! SpecAug stripes and mixup.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{LogMelSpectrogram, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDomain {
    #[default]
    Wave,
    Spec,
}

impl std::str::FromStr for NoiseDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave" => Ok(NoiseDomain::Wave),
            "spec" => Ok(NoiseDomain::Spec),
            other => Err(Error::Config(format!("unknown noise domain {other:?}"))),
        }
    }
}

/// Augmentation settings; key names follow the hyperparameter table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub roll: bool,
    pub gain_jitter_db: f64,
    pub noise_snr_db: Option<f64>,
    #[serde(default)]
    pub noise_domain: NoiseDomain,
    pub specaug_time: usize,
    pub specaug_freq: usize,
    /// Probability of mixing a batch item.
    pub mixup: f64,
    /// Beta(α, α) parameter for the mixing coefficient.
    #[serde(default = "default_mixup_alpha")]
    pub mixup_alpha: f64,
}

fn default_mixup_alpha() -> f64 {
    1.0
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig::none()
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            roll: false,
            gain_jitter_db: 0.0,
            noise_snr_db: None,
            noise_domain: NoiseDomain::Wave,
            specaug_time: 0,
            specaug_freq: 0,
            mixup: 0.0,
            mixup_alpha: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mixup) {
            return Err(Error::Config(format!(
                "mixup probability {} outside [0,1]",
                self.mixup
            )));
        }
        if !(0.0..=6.0).contains(&self.gain_jitter_db) {
            return Err(Error::Config(format!(
                "gain jitter {} dB outside [0,6]",
                self.gain_jitter_db
            )));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::Config("mixup_alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        !self.roll
            && self.gain_jitter_db == 0.0
            && self.noise_snr_db.is_none()
            && self.specaug_time == 0
            && self.specaug_freq == 0
            && self.mixup == 0.0
    }

    /// Waveform stage: random-start roll, gain jitter, waveform-domain noise.
    pub fn apply_wave(&self, w: &Waveform, rng: &mut impl Rng) -> Result<Waveform> {
        let mut out = w.clone();
        if self.roll && !w.is_empty() {
            out = cyclic_roll(&out, rng.gen_range(0..w.len()))?;
        }
        if self.gain_jitter_db > 0.0 {
            let db = rng.gen_range(-self.gain_jitter_db..=self.gain_jitter_db);
            out = gain_jitter(&out, db)?;
        }
        if let (Some(snr), NoiseDomain::Wave) = (self.noise_snr_db, self.noise_domain) {
            add_noise_snr(&mut out.samples, snr, rng);
        }
        Ok(out)
    }

    /// Spectrogram stage (after normalization): spectrogram-domain noise, SpecAug.
    pub fn apply_spec(
        &self,
        s: &LogMelSpectrogram,
        rng: &mut impl Rng,
    ) -> Result<LogMelSpectrogram> {
        let mut out = s.clone();
        if let (Some(snr), NoiseDomain::Spec) = (self.noise_snr_db, self.noise_domain) {
            add_noise_snr(&mut out.values, snr, rng);
        }
        if self.specaug_time > 0 || self.specaug_freq > 0 {
            out = spec_augment(
                &out,
                self.specaug_time.min(out.frames),
                self.specaug_freq.min(out.bins),
                rng,
            )?;
        }
        Ok(out)
    }

    /// Draws `Some(λ)` when this item should be mixed.
    pub fn draw_mixup(&self, rng: &mut impl Rng) -> Option<f64> {
        if self.mixup > 0.0 && rng.gen_bool(self.mixup) {
            let beta = Beta::new(self.mixup_alpha, self.mixup_alpha).expect("validated alpha");
            Some(beta.sample(rng))
        } else {
            None
        }
    }
}

/// `samples[start..] ++ samples[..start]`.
pub fn cyclic_roll(w: &Waveform, start: usize) -> Result<Waveform> {
    if start >= w.len() && !(start == 0 && w.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "roll start {start} >= length {}",
            w.len()
        )));
    }
    let mut s = w.samples[start..].to_vec();
    s.extend_from_slice(&w.samples[..start]);
    Waveform::new(s, w.sample_rate)
}

/// Scales by `10^(db/20)` and clamps to `[-1, 1]`.
pub fn gain_jitter(w: &Waveform, db: f64) -> Result<Waveform> {
    if db.abs() > 6.0 {
        return Err(Error::InvalidArgument(format!(
            "gain {db} dB outside ±6 dB"
        )));
    }
    let g = 10f64.powf(db / 20.0);
    Waveform::new(
        w.samples.iter().map(|s| (s * g).clamp(-1.0, 1.0)).collect(),
        w.sample_rate,
    )
}

/// Adds white Gaussian noise at `snr_db` relative to the mean-square power of
/// `values`. Infinite SNR and zero-power signals are left untouched.
pub fn add_noise_snr(values: &mut [f64], snr_db: f64, rng: &mut impl Rng) {
    if snr_db == f64::INFINITY || values.is_empty() {
        return;
    }
    let power = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    if power <= 0.0 {
        return;
    }
    let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, noise_std).expect("finite std");
    values.iter_mut().for_each(|v| *v += normal.sample(rng));
}

/// Zeroes one random time stripe of width in `[0, time_width]` and one
/// frequency stripe of width in `[0, freq_width]`.
pub fn spec_augment(
    spec: &LogMelSpectrogram,
    time_width: usize,
    freq_width: usize,
    rng: &mut impl Rng,
) -> Result<LogMelSpectrogram> {
    if time_width > spec.frames || freq_width > spec.bins {
        return Err(Error::InvalidArgument(format!(
            "stripe widths {time_width}/{freq_width} exceed {}x{}",
            spec.frames, spec.bins
        )));
    }
    let mut out = spec.clone();
    let tw = rng.gen_range(0..=time_width);
    let t0 = rng.gen_range(0..=spec.frames - tw);
    let fw = rng.gen_range(0..=freq_width);
    let f0 = rng.gen_range(0..=spec.bins - fw);
    for t in 0..spec.frames {
        for f in 0..spec.bins {
            if (t0..t0 + tw).contains(&t) || (f0..f0 + fw).contains(&f) {
                out.values[t * spec.bins + f] = 0.0;
            }
        }
    }
    Ok(out)
}

/// `λ·a + (1−λ)·b` on both spectrograms and label vectors.
pub fn mixup(
    a: &LogMelSpectrogram,
    ya: &[f64],
    b: &LogMelSpectrogram,
    yb: &[f64],
    lam: f64,
) -> Result<(LogMelSpectrogram, Vec<f64>)> {
    if (a.frames, a.bins) != (b.frames, b.bins) || ya.len() != yb.len() {
        return Err(Error::shape(
            "mixup",
            format!(
                "{}x{} / {} labels vs {}x{} / {} labels",
                a.frames,
                a.bins,
                ya.len(),
                b.frames,
                b.bins,
                yb.len()
            ),
        ));
    }
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidArgument(format!(
            "mixup λ {lam} outside [0,1]"
        )));
    }
    let mut out = a.clone();
    for (o, (&x, &y)) in out.values.iter_mut().zip(a.values.iter().zip(&b.values)) {
        *o = lam * x + (1.0 - lam) * y;
    }
    let labels = ya
        .iter()
        .zip(yb)
        .map(|(x, y)| lam * x + (1.0 - lam) * y)
        .collect();
    Ok((out, labels))
}
