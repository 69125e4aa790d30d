use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::*;

fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
    let n = (secs * 16000.0) as usize;
    let s = (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / 16000.0).sin())
        .collect();
    Waveform::new(s, 16000).unwrap()
}

/// Filterbank and spectrum evaluated from first principles: natural-log mel
/// formula, explicit triangle evaluation and an O(N²) DFT.
mod oracle {
    use super::*;

    fn mel(f: f64) -> f64 {
        1127.0 * (1.0 + f / 700.0).ln()
    }

    fn hz(m: f64) -> f64 {
        700.0 * ((m / 1127.0).exp() - 1.0)
    }

    pub fn weights(n_mels: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = (mel(20.0), mel(8000.0));
        (0..n_mels)
            .map(|m| {
                let l = lo + (hi - lo) * m as f64 / (n_mels + 1) as f64;
                let c = lo + (hi - lo) * (m + 1) as f64 / (n_mels + 1) as f64;
                let r = lo + (hi - lo) * (m + 2) as f64 / (n_mels + 1) as f64;
                let mut row: Vec<f64> = (0..257)
                    .map(|k| {
                        let b = mel(k as f64 * 16000.0 / 512.0);
                        if b <= l || b >= r {
                            0.0
                        } else if b <= c {
                            (b - l) / (c - l)
                        } else {
                            (r - b) / (r - c)
                        }
                    })
                    .collect();
                if row.iter().all(|&w| w == 0.0) {
                    let k = (hz(c) / 31.25).round() as usize;
                    row[k] = 1.0;
                }
                row
            })
            .collect()
    }

    pub fn frame_power(x: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = (0..400)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / 399.0).cos())
            .collect();
        (0..257)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..400 {
                    let a = -2.0 * PI * (k * n) as f64 / 512.0;
                    re += x[n] * w[n] * a.cos();
                    im += x[n] * w[n] * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }
}

#[test]
fn ten_seconds_gives_998_frames_then_1024_after_padding() {
    let w = Waveform::new(vec![0.0; 160_000], 16000).unwrap();
    let s = log_mel(&w, &MelParams::default()).unwrap();
    assert_eq!((s.frames, s.bins), (998, 128));
    let p = pad_or_trim(&s, 1024).unwrap();
    assert_eq!((p.frames, p.bins), (1024, 128));
    assert!(p.values[998 * 128..].iter().all(|&v| v == 0.0));
}

#[test]
fn silence_sits_on_the_floor() {
    let w = Waveform::new(vec![0.0; 8000], 16000).unwrap();
    let s = log_mel(&w, &MelParams::default()).unwrap();
    let floor = 1e-10f64.ln();
    assert!(s.values.iter().all(|&v| v == floor));
}

#[test]
fn too_short_waveform_is_rejected() {
    let w = Waveform::new(vec![0.0; 399], 16000).unwrap();
    let err = log_mel(&w, &MelParams::default()).unwrap_err();
    assert!(matches!(
        err,
        Error::WaveformTooShort {
            samples: 399,
            window: 400
        }
    ));
    assert!(err.to_string().contains("pad"));
}

#[test]
fn tone_argmax_matches_filterbank_oracle() {
    let w = tone(440.0, 0.5, 0.5);
    let s = log_mel(&w, &MelParams::default()).unwrap();
    let fb = oracle::weights(128);
    for t in [0, 7, 20, s.frames - 1] {
        let frame = &w.samples[t * 160..t * 160 + 400];
        let power = oracle::frame_power(frame);
        let energies: Vec<f64> = fb
            .iter()
            .map(|row| row.iter().zip(&power).map(|(a, b)| a * b).sum())
            .collect();
        let want = argmax(&energies);
        assert_eq!(argmax(s.frame(t)), want, "frame {t}");
        for (m, e) in energies.iter().enumerate() {
            assert!(
                (e.max(1e-10).ln() - s.at(t, m)).abs() < 1e-6,
                "frame {t} bin {m}"
            );
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[test]
fn rolling_by_whole_hops_rolls_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<f64> = (0..16000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let w = Waveform::new(samples.clone(), 16000).unwrap();
    let k = 7;
    let mut rolled = samples[k * 160..].to_vec();
    rolled.extend_from_slice(&samples[..k * 160]);
    let r = Waveform::new(rolled, 16000).unwrap();
    let p = MelParams::default();
    let a = log_mel(&w, &p).unwrap();
    let b = log_mel(&r, &p).unwrap();
    // frame j of the rolled clip is frame j + k of the original while the
    // window does not straddle the seam
    for j in 0..a.frames - k - 3 {
        for f in 0..128 {
            assert!((b.at(j, f) - a.at(j + k, f)).abs() < 1e-9);
        }
    }
}

#[test]
fn resample_identity_constant_and_midpoints() {
    let w = tone(100.0, 0.1, 0.3);
    assert_eq!(resample_linear(&w, 16000).unwrap(), w);

    let c = Waveform::new(vec![0.25; 333], 22050).unwrap();
    let r = resample_linear(&c, 16000).unwrap();
    assert_eq!(r.len(), 333 * 16000 / 22050);
    assert!(r.samples.iter().all(|&s| (s - 0.25).abs() < 1e-15));

    let ramp = Waveform::new((0..800).map(|i| i as f64 / 800.0).collect(), 8000).unwrap();
    let up = resample_linear(&ramp, 16000).unwrap();
    assert_eq!(up.len(), 1600);
    for j in 0..799 {
        assert_eq!(up.samples[2 * j], ramp.samples[j]);
        let mid = (ramp.samples[j] + ramp.samples[j + 1]) / 2.0;
        assert!((up.samples[2 * j + 1] - mid).abs() < 1e-15);
    }
}

#[test]
fn pad_trim_identity_and_esc_length() {
    let w = Waveform::new(vec![0.0; 80_000], 16000).unwrap();
    let s = log_mel(&w, &MelParams::default()).unwrap();
    assert_eq!(s.frames, 498);
    assert_eq!(pad_or_trim(&s, 512).unwrap().frames, 512);
    assert_eq!(pad_or_trim(&s, 498).unwrap(), s);
    assert_eq!(
        pad_or_trim(&s, 100).unwrap().values,
        s.values[..100 * 128].to_vec()
    );
}

#[test]
fn normalization_cases() {
    let s = LogMelSpectrogram::new(1, 2, vec![-4.268, 1.0]).unwrap();
    let n = normalize(&s, DatasetStats::AUDIOSET);
    assert_eq!(n.values[0], 0.0);
    let id = DatasetStats::new(0.0, 1.0).unwrap();
    assert_eq!(normalize(&s, id), s);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let specs: Vec<LogMelSpectrogram> = (0..4)
        .map(|_| {
            LogMelSpectrogram::new(10, 8, (0..80).map(|_| rng.gen_range(-12.0..3.0)).collect())
                .unwrap()
        })
        .collect();
    let stats = estimate_stats(&specs).unwrap();
    let normed: Vec<_> = specs.iter().map(|s| normalize(s, stats)).collect();
    let again = estimate_stats(&normed).unwrap();
    assert!(again.mean.abs() < 1e-6 && (again.std - 1.0).abs() < 1e-6);
    for (s, n) in specs.iter().zip(&normed) {
        let back = denormalize(n, stats);
        for (a, b) in s.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn stats_edge_cases() {
    let flat = LogMelSpectrogram::new(2, 2, vec![3.0; 4]).unwrap();
    assert!(matches!(
        estimate_stats([&flat]),
        Err(Error::DegenerateStats(_))
    ));
    let two = LogMelSpectrogram::new(1, 2, vec![0.0, 2.0]).unwrap();
    let s = estimate_stats([&two]).unwrap();
    assert_eq!((s.mean, s.std), (1.0, 1.0));
    assert!(estimate_stats(std::iter::empty()).is_err());
}

#[test]
fn welford_matches_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cells: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-20.0..5.0)).collect();
    let spec = LogMelSpectrogram::new(100, 100, cells.clone()).unwrap();
    let s = estimate_stats([&spec]).unwrap();
    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    let var = cells.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / cells.len() as f64;
    assert!((s.mean - mean).abs() < 1e-9);
    assert!((s.std - var.sqrt()).abs() < 1e-9);
}

#[test]
fn griffin_lim_of_silence_is_quiet() {
    let w = Waveform::new(vec![0.0; 8000], 16000).unwrap();
    let s = log_mel(&w, &MelParams::default()).unwrap();
    let out = griffin_lim(&s, 16000, 8).unwrap();
    assert!(out.waveform.rms() < 1e-3);
}

fn fft_peak_hz(x: &[f64], sr: f64) -> f64 {
    let mut buf: Vec<Complex64> = x.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    let half = buf.len() / 2;
    let k = argmax(&buf[..half].iter().map(|c| c.norm()).collect::<Vec<_>>());
    k as f64 * sr / buf.len() as f64
}

#[test]
fn griffin_lim_tone_peaks_near_440_and_never_gets_worse() {
    let w = tone(440.0, 1.0, 0.5);
    let s = log_mel(&w, &MelParams::default()).unwrap();
    let out = griffin_lim(&s, 16000, DEFAULT_ITERATIONS).unwrap();
    let peak = fft_peak_hz(&out.waveform.samples, 16000.0);
    assert!((peak - 440.0).abs() <= 16000.0 / 512.0, "peak at {peak} Hz");
    let max = out
        .waveform
        .samples
        .iter()
        .fold(0.0f64, |a, s| a.max(s.abs()));
    assert!((max - 0.9).abs() < 1e-12);
    for pair in out.inconsistency.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-6, "{:?}", out.inconsistency);
    }
}
