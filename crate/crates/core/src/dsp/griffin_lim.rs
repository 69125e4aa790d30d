use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::mel::MelFilterbank;
use crate::dsp::stft::Stft;
use crate::dsp::{LogMelSpectrogram, Waveform};
use crate::error::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 32;
const PEAK: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct GriffinLimOutput {
    pub waveform: Waveform,
    /// `‖|STFT(xₙ)| − S‖` after each iteration.
    pub inconsistency: Vec<f64>,
}

/// Linear-frequency magnitudes recovered through the clamped pseudo-inverse
/// of the mel filterbank, `frames × n_bins`.
pub fn mel_to_linear(spec: &LogMelSpectrogram, fb: &MelFilterbank) -> Result<Vec<Vec<f64>>> {
    if spec.bins != fb.n_mels {
        return Err(Error::InvalidArgument(format!(
            "spectrogram has {} bins, filterbank {}",
            spec.bins, fb.n_mels
        )));
    }
    let m = DMatrix::from_row_slice(fb.n_mels, fb.n_bins, &fb.weights);
    let pinv = m
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::InvalidArgument(format!("filterbank pseudo-inverse: {e}")))?;
    Ok((0..spec.frames)
        .map(|t| {
            let mel_power: Vec<f64> = spec.frame(t).iter().map(|v| v.exp()).collect();
            (0..fb.n_bins)
                .map(|k| {
                    let p: f64 = (0..fb.n_mels).map(|j| pinv[(k, j)] * mel_power[j]).sum();
                    p.max(0.0).sqrt()
                })
                .collect()
        })
        .collect())
}

/// Weighted norm over one-sided spectra equal to the full two-sided norm.
fn two_sided_distance(a: &[Vec<Complex64>], target: &[Vec<f64>], n_fft: usize) -> f64 {
    let nb = n_fft / 2 + 1;
    let mut acc = 0.0;
    for (fa, ft) in a.iter().zip(target) {
        for k in 0..nb {
            let w = if k == 0 || (n_fft % 2 == 0 && k == nb - 1) {
                1.0
            } else {
                2.0
            };
            let d = fa[k].norm() - ft[k];
            acc += w * d * d;
        }
    }
    acc.sqrt()
}

/// Phase retrieval from a raw (denormalized) log-mel spectrogram.
pub fn griffin_lim(
    spec: &LogMelSpectrogram,
    sample_rate: u32,
    n_iter: usize,
) -> Result<GriffinLimOutput> {
    griffin_lim_seeded(spec, sample_rate, n_iter, 0)
}

pub fn griffin_lim_seeded(
    spec: &LogMelSpectrogram,
    sample_rate: u32,
    n_iter: usize,
    seed: u64,
) -> Result<GriffinLimOutput> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument(
            "griffin_lim needs at least one iteration".into(),
        ));
    }
    let p = &spec.params;
    let win = p.window_samples(sample_rate);
    let hop = p.hop_samples(sample_rate);
    let stft = Stft::new(win, hop, p.n_fft);
    let fb = MelFilterbank::for_params(p, sample_rate);
    let mag = mel_to_linear(spec, &fb)?;
    let len = (spec.frames - 1) * hop + win;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectra: Vec<Vec<Complex64>> = mag
        .iter()
        .map(|row| {
            row.iter()
                .map(|&m| {
                    Complex64::from_polar(
                        m,
                        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                    )
                })
                .collect()
        })
        .collect();
    let mut x = stft.inverse(&spectra, len);
    let mut inconsistency = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        let est = stft.forward(&x);
        inconsistency.push(two_sided_distance(&est, &mag, p.n_fft));
        for (dst, (e, m)) in spectra.iter_mut().zip(est.iter().zip(&mag)) {
            for k in 0..dst.len() {
                let n = e[k].norm();
                dst[k] = if n > 0.0 {
                    e[k] * (m[k] / n)
                } else {
                    Complex64::new(m[k], 0.0)
                };
            }
        }
        x = stft.inverse(&spectra, len);
    }

    // An all-floor spectrogram stays at its natural (near-silent) level.
    let floor = p.log_floor.ln();
    let degenerate = spec.values.iter().all(|&v| v <= floor + 1e-9);
    let peak = x.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
    if !degenerate && peak > 0.0 {
        let g = PEAK / peak;
        x.iter_mut().for_each(|s| *s *= g);
    }
    Ok(GriffinLimOutput {
        waveform: Waveform::new(x, sample_rate)?,
        inconsistency,
    })
}
