use std::io::Cursor;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Decodes a 16-bit PCM RIFF/WAVE file, averaging stereo down to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let mut reader = WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Wav(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "only 16-bit integer PCM is supported, got {:?} at {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Wav(format!(
            "{channels} channels; expected mono or stereo"
        )));
    }
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Wav(e.to_string()))?;
    if raw.len() % channels != 0 {
        return Err(Error::Wav("truncated final frame".into()));
    }
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Encodes mono 16-bit PCM; samples are clamped to the representable range.
pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut buf, spec).map_err(|e| Error::Wav(e.to_string()))?;
        for &s in &w.samples {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer
                .write_sample(q)
                .map_err(|e| Error::Wav(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::Wav(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16(channels: u16, frames: &[Vec<i16>]) -> Vec<u8> {
        let spec = WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut buf, spec).unwrap();
            for f in frames {
                for &s in f {
                    w.write_sample(s).unwrap();
                }
            }
            w.finalize().unwrap();
        }
        buf.into_inner()
    }

    #[test]
    fn silent_second() {
        let w = decode_wav(&pcm16(1, &vec![vec![0]; 16000])).unwrap();
        assert_eq!(w.samples.len(), 16000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn opposite_stereo_channels_cancel() {
        let w = decode_wav(&pcm16(2, &vec![vec![16384, -16384]; 100])).unwrap();
        assert_eq!(w.samples.len(), 100);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn tone_round_trips_within_one_lsb() {
        let amp = 10f64.powf(-6.0 / 20.0);
        let samples: Vec<f64> = (0..16000)
            .map(|n| amp * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let back = decode_wav(&encode_wav(&w).unwrap()).unwrap();
        let lsb = 1.0 / 32768.0;
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= lsb, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_garbage_and_float_pcm() {
        assert!(matches!(
            decode_wav(b"definitely not a wav"),
            Err(Error::Wav(_))
        ));
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut buf, spec).unwrap();
            w.write_sample(0.5f32).unwrap();
            w.finalize().unwrap();
        }
        let err = decode_wav(&buf.into_inner()).unwrap_err().to_string();
        assert!(err.contains("16-bit"), "{err}");
    }
}
