use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Symmetric Hann window, `0.5 - 0.5 cos(2πn / (N-1))`.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

pub fn frame_count(n_samples: usize, win: usize, hop: usize) -> usize {
    if n_samples < win {
        0
    } else {
        1 + (n_samples - win) / hop
    }
}

/// Short-time Fourier transform with a zero-padded FFT per frame.
pub struct Stft {
    pub win: usize,
    pub hop: usize,
    pub n_fft: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(win: usize, hop: usize, n_fft: usize) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            win,
            hop,
            n_fft,
            window: hann(win),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// One-sided spectra, `frames × n_bins`.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let t = frame_count(x.len(), self.win, self.hop);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        (0..t)
            .map(|j| {
                buf.fill(Complex64::new(0.0, 0.0));
                let frame = &x[j * self.hop..j * self.hop + self.win];
                for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                    b.re = s * w;
                }
                self.forward.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Power spectrum `|X|²` per frame.
    pub fn power(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.forward(x)
            .into_iter()
            .map(|f| f.iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// Least-squares inverse: overlap-add of windowed frames divided by the
    /// summed squared window. Samples no window covers come out as zero.
    pub fn inverse(&self, spectra: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let nb = self.n_bins();
        for (j, spec) in spectra.iter().enumerate() {
            // rebuild the Hermitian full spectrum
            for k in 0..self.n_fft {
                buf[k] = if k < nb {
                    spec[k]
                } else {
                    spec[self.n_fft - k].conj()
                };
            }
            buf[0].im = 0.0;
            if self.n_fft % 2 == 0 {
                buf[nb - 1].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = j * self.hop;
            for n in 0..self.win {
                if start + n >= len {
                    break;
                }
                let w = self.window[n];
                out[start + n] += w * buf[n].re / self.n_fft as f64;
                norm[start + n] += w * w;
            }
        }
        for (o, &z) in out.iter_mut().zip(&norm) {
            if z > 1e-12 {
                *o /= z;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}
