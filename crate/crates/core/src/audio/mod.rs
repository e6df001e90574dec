//! PCM ingestion and the causal log-filterbank spectrogram.
//!
//! The front-end runs at 44.1 kHz with a 4096-sample Hann window and a
//! 1024-sample hop. Windows are left-aligned: frame `t` ends exactly at sample
//! `t·1024`, so extraction adds no look-ahead of its own.

mod features;
mod filterbank;
mod resample;
mod stft;
mod wav;

pub use features::{
    frame_features, stream_features, FeatureExtractor, FeatureFrame, FeatureStream,
};
pub use filterbank::{build_filterbank, FilterBank, BAND_MAX_HZ, BAND_MIN_HZ, N_BANDS};
pub use resample::Resampler;
pub use stft::{hann_window, stft_frame, Stft, N_BINS};
pub use wav::{read_wav, read_wav_from, write_wav, WavStream};

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 44_100;
pub const HOP: usize = 1024;
pub const WINDOW: usize = 4096;

/// Frames per second of the feature stream (≈ 43.07).
pub const FPS: f64 = SAMPLE_RATE as f64 / HOP as f64;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    Format(String),
    #[error("audio input is empty")]
    Empty,
    #[error("{0}")]
    Range(String),
    #[error("unsupported channel count {0} (expected 1 or 2)")]
    Channels(u16),
    #[error("invalid sample rate {0}")]
    Rate(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono 44.1 kHz audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
}

impl AudioClip {
    /// Wraps samples that are already mono at 44.1 kHz.
    pub fn from_mono(samples: Vec<f32>) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::Format("non-finite sample".into()));
        }
        Ok(AudioClip { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// Downmixes interleaved frames by per-sample mean.
pub fn downmix(interleaved: &[f32], channels: u16) -> Result<Vec<f32>, AudioError> {
    match channels {
        1 => Ok(interleaved.to_vec()),
        2 => Ok(interleaved
            .chunks_exact(2)
            .map(|f| (f[0] + f[1]) * 0.5)
            .collect()),
        c => Err(AudioError::Channels(c)),
    }
}

/// Converts interleaved PCM at any rate into a mono 44.1 kHz [`AudioClip`].
pub fn ingest(interleaved: &[f32], rate: u32, channels: u16) -> Result<AudioClip, AudioError> {
    if rate == 0 {
        return Err(AudioError::Rate(rate));
    }
    if interleaved.is_empty() {
        return Err(AudioError::Empty);
    }
    let mono = downmix(interleaved, channels)?;
    if rate == SAMPLE_RATE {
        return AudioClip::from_mono(mono);
    }
    let mut rs = Resampler::new(rate, SAMPLE_RATE);
    let mut out = rs.push(&mono);
    out.extend(rs.flush());
    AudioClip::from_mono(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    #[test]
    fn mono_passthrough_is_bit_identical() {
        let x: Vec<f32> = (0..1000).map(|i| (i as f32 * 0.37).sin() * 0.9).collect();
        let clip = ingest(&x, 44100, 1).unwrap();
        assert_eq!(clip.samples(), &x[..]);
    }

    #[test]
    fn stereo_downmix_by_mean() {
        let clip = ingest(&[0.5, -0.5], 44100, 2).unwrap();
        assert_eq!(clip.samples(), &[0.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(ingest(&[], 44100, 1), Err(AudioError::Empty)));
        assert!(matches!(
            ingest(&[0.0], 44100, 3),
            Err(AudioError::Channels(3))
        ));
        assert!(matches!(ingest(&[0.0], 0, 1), Err(AudioError::Rate(0))));
    }

    #[test]
    fn upsampled_sine_keeps_its_pitch() {
        let x: Vec<f32> = (0..22050)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 22050.0).sin() as f32)
            .collect();
        let clip = ingest(&x, 22050, 1).unwrap();
        assert_eq!(clip.len(), 44100);

        let dominant = |s: &[f32]| {
            let mut buf: Vec<Complex<f64>> =
                s.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
            FftPlanner::new()
                .plan_fft_forward(buf.len())
                .process(&mut buf);
            (1..buf.len() / 2)
                .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
                .unwrap()
        };
        // Oracle: an ideal 440 Hz sine rendered directly at 44.1 kHz.
        let ideal: Vec<f32> = (0..44100)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44100.0).sin() as f32)
            .collect();
        let expected = dominant(&ideal);
        assert_eq!(expected, 440);
        assert!(dominant(clip.samples()).abs_diff(expected) <= 1);
    }
}
