//! Waveforms, the log-mel frontend, dataset normalization and Griffin-Lim.

mod griffin_lim;
mod mel;
pub mod stft;
mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use griffin_lim::{
    griffin_lim, griffin_lim_seeded, mel_to_linear, GriffinLimOutput, DEFAULT_ITERATIONS,
};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, MelFilterbank};
pub use wav::{decode_wav, encode_wav};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }
}

/// Linear-interpolation resampling; output length is `⌊N·target/source⌋`.
pub fn resample_linear(w: &Waveform, target_hz: u32) -> Result<Waveform> {
    if target_hz == 0 {
        return Err(Error::InvalidArgument(
            "target rate must be positive".into(),
        ));
    }
    if target_hz == w.sample_rate {
        return Ok(w.clone());
    }
    let n = w.samples.len();
    let out_len = (n as u64 * target_hz as u64 / w.sample_rate as u64) as usize;
    let ratio = w.sample_rate as f64 / target_hz as f64;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            match (w.samples.get(j), w.samples.get(j + 1)) {
                (Some(&a), Some(&b)) => a + (b - a) * frac,
                (Some(&a), None) => a,
                _ => *w.samples.last().unwrap(),
            }
        })
        .collect();
    Waveform::new(samples, target_hz)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hanning,
}

/// Framing and filterbank settings for [`log_mel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelParams {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_fft: usize,
    pub window: WindowKind,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        MelParams {
            window_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 128,
            n_fft: 512,
            window: WindowKind::Hanning,
            fmin: 20.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelParams {
    pub fn with_mels(n_mels: usize) -> Self {
        MelParams {
            n_mels,
            ..Default::default()
        }
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.window_ms > self.hop_ms && self.hop_ms > 0.0) {
            return Err(Error::Config(format!(
                "need window_ms > hop_ms > 0, got {} / {}",
                self.window_ms, self.hop_ms
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if self.fmax > sample_rate as f64 / 2.0 || self.fmin < 0.0 || self.fmin >= self.fmax {
            return Err(Error::Config(format!(
                "band {}..{} Hz invalid at {} Hz sampling",
                self.fmin, self.fmax, sample_rate
            )));
        }
        if self.n_fft < self.window_samples(sample_rate) || self.hop_samples(sample_rate) == 0 {
            return Err(Error::Config(format!(
                "n_fft {} shorter than the window",
                self.n_fft
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log floor must be positive".into()));
        }
        Ok(())
    }
}

/// `frames × bins` grid of log-mel values, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
    pub params: MelParams,
}

impl LogMelSpectrogram {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        Self::with_params(frames, bins, values, MelParams::with_mels(bins))
    }

    pub fn with_params(
        frames: usize,
        bins: usize,
        values: Vec<f64>,
        params: MelParams,
    ) -> Result<Self> {
        if frames == 0 || bins == 0 || values.len() != frames * bins {
            return Err(Error::shape(
                "spectrogram",
                format!("{frames}x{bins} grid with {} values", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram cell".into()));
        }
        Ok(LogMelSpectrogram {
            frames,
            bins,
            values,
            params,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn at(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.bins], self.values.clone()).expect("validated grid")
    }

    pub fn from_tensor(t: &Tensor, params: MelParams) -> Result<Self> {
        let (frames, bins) = t.dims2()?;
        Self::with_params(frames, bins, t.data().to_vec(), params)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        LogMelSpectrogram {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Zero-pads at the end or truncates to exactly `target_frames`.
///
/// Intended for normalized spectrograms, where 0 is the dataset mean.
pub fn pad_or_trim(spec: &LogMelSpectrogram, target_frames: usize) -> Result<LogMelSpectrogram> {
    if target_frames == 0 {
        return Err(Error::InvalidArgument(
            "target frame count must be positive".into(),
        ));
    }
    let mut values = spec.values.clone();
    values.resize(target_frames * spec.bins, 0.0);
    LogMelSpectrogram::with_params(target_frames, spec.bins, values, spec.params.clone())
}

/// Dataset-wise mean and population standard deviation over spectrogram cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: f64,
    pub std: f64,
}

impl DatasetStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(Error::DegenerateStats(format!("mean {mean}, std {std}")));
        }
        Ok(DatasetStats { mean, std })
    }

    /// AudioSet values used for pre-training and AudioSet fine-tuning.
    pub const AUDIOSET: DatasetStats = DatasetStats {
        mean: -4.268,
        std: 4.569,
    };
}

pub fn normalize(spec: &LogMelSpectrogram, stats: DatasetStats) -> LogMelSpectrogram {
    spec.map(|v| (v - stats.mean) / stats.std)
}

pub fn denormalize(spec: &LogMelSpectrogram, stats: DatasetStats) -> LogMelSpectrogram {
    spec.map(|v| v * stats.std + stats.mean)
}

/// Streaming (Welford) accumulator of cell statistics.
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StatsAccumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn extend(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.push(x));
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<DatasetStats> {
        if self.count < 2 {
            return Err(Error::DegenerateStats(format!(
                "need at least 2 cells, saw {}",
                self.count
            )));
        }
        DatasetStats::new(self.mean, (self.m2 / self.count as f64).sqrt())
    }
}

pub fn estimate_stats<'a>(
    specs: impl IntoIterator<Item = &'a LogMelSpectrogram>,
) -> Result<DatasetStats> {
    let mut acc = StatsAccumulator::default();
    let mut seen = 0;
    for s in specs {
        acc.extend(&s.values);
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::DegenerateStats("empty spectrogram stream".into()));
    }
    acc.finish()
}

#[cfg(test)]
mod tests;
