use crate::dsp::stft::{frame_count, Stft};
use crate::dsp::{LogMelSpectrogram, MelParams, Waveform};
use crate::error::{Error, Result};

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `n_mels × (n_fft/2 + 1)`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Row-major weights.
    pub weights: Vec<f64>,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let lo = hz_to_mel(fmin);
        let hi = hz_to_mel(fmax);
        let step = (hi - lo) / (n_mels + 1) as f64;
        let edges: Vec<f64> = (0..n_mels + 2).map(|i| lo + step * i as f64).collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let bin_mel: Vec<f64> = (0..n_bins).map(|k| hz_to_mel(k as f64 * bin_hz)).collect();
        let mut weights = vec![0.0; n_mels * n_bins];
        let mut centers_hz = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            centers_hz.push(mel_to_hz(center));
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (k, &bm) in bin_mel.iter().enumerate() {
                let up = (bm - left) / (center - left);
                let down = (right - bm) / (right - center);
                row[k] = up.min(down).max(0.0);
            }
            // Narrow low-frequency triangles can fall between FFT bins; such a
            // filter takes the bin nearest its center instead of staying empty.
            if row.iter().all(|&w| w == 0.0) {
                let k = ((mel_to_hz(center) / bin_hz).round() as usize).min(n_bins - 1);
                row[k] = 1.0;
            }
        }
        MelFilterbank {
            n_mels,
            n_bins,
            weights,
            centers_hz,
        }
    }

    pub fn for_params(p: &MelParams, sample_rate: u32) -> Self {
        Self::new(sample_rate, p.n_fft, p.n_mels, p.fmin, p.fmax)
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Log-mel energies, `ln(max(mel power, floor))`, one row per frame.
pub fn log_mel(w: &Waveform, p: &MelParams) -> Result<LogMelSpectrogram> {
    p.validate(w.sample_rate)?;
    let win = p.window_samples(w.sample_rate);
    let hop = p.hop_samples(w.sample_rate);
    if w.samples.len() < win {
        return Err(Error::WaveformTooShort {
            samples: w.samples.len(),
            window: win,
        });
    }
    let stft = Stft::new(win, hop, p.n_fft);
    let fb = MelFilterbank::for_params(p, w.sample_rate);
    let frames = frame_count(w.samples.len(), win, hop);
    let mut values = Vec::with_capacity(frames * p.n_mels);
    for power in stft.power(&w.samples) {
        values.extend(
            fb.apply(&power)
                .into_iter()
                .map(|e| e.max(p.log_floor).ln()),
        );
    }
    LogMelSpectrogram::new(frames, p.n_mels, values)
}
