use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{AudioClip, AudioError, HOP, WINDOW};

/// Magnitude bins of a 4096-point real FFT.
pub const N_BINS: usize = WINDOW / 2 + 1;

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
        .collect()
}

/// Reusable FFT plan and window.
#[derive(Clone)]
pub struct Stft {
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("window", &self.window.len())
            .finish()
    }
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        Stft {
            fft: FftPlanner::new().plan_fft_forward(WINDOW),
            window: hann_window(WINDOW),
        }
    }

    /// Magnitude spectrum of one 4096-sample segment (oldest sample first).
    pub fn magnitudes(&self, segment: &[f32]) -> Vec<f32> {
        debug_assert_eq!(segment.len(), WINDOW);
        let mut buf: Vec<Complex<f32>> = segment
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..N_BINS].iter().map(|c| c.norm()).collect()
    }
}

/// Copies the causal window of frame `t`: samples `t·1024 − 4095 ..= t·1024`,
/// zero-filled before the start of the signal.
pub(crate) fn causal_segment(samples: &[f32], first_index: usize, frame: usize, out: &mut [f32]) {
    let end = frame * HOP; // inclusive
    for (n, o) in out.iter_mut().enumerate() {
        let idx = end as i64 - (WINDOW as i64 - 1) + n as i64;
        *o = if idx < first_index as i64 {
            0.0
        } else {
            samples[(idx - first_index as i64) as usize]
        };
    }
}

/// Magnitude spectrum of frame `frame_index` of `clip`. Only samples at or
/// before `frame_index·1024` are read.
pub fn stft_frame(stft: &Stft, clip: &AudioClip, frame_index: i64) -> Result<Vec<f32>, AudioError> {
    if frame_index < 0 {
        return Err(AudioError::Range(format!(
            "frame index {frame_index} is negative"
        )));
    }
    let t = frame_index as usize;
    if t * HOP >= clip.len() {
        return Err(AudioError::Range(format!(
            "frame {t} ends at sample {} past the clip ({} samples)",
            t * HOP,
            clip.len()
        )));
    }
    let mut seg = vec![0.0; WINDOW];
    causal_segment(clip.samples(), 0, t, &mut seg);
    Ok(stft.magnitudes(&seg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(f: impl Fn(usize) -> f32, n: usize) -> AudioClip {
        AudioClip::from_mono((0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn zero_audio_gives_zero_spectrum() {
        let stft = Stft::new();
        let s = stft_frame(&stft, &clip(|_| 0.0, 20_000), 10).unwrap();
        assert_eq!(s.len(), N_BINS);
        assert!(s.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn dc_bin_equals_window_sum() {
        let stft = Stft::new();
        let s = stft_frame(&stft, &clip(|_| 1.0, 20_000), 8).unwrap();
        // Analytic sum of a periodic Hann window of length N is N/2.
        let expected = WINDOW as f32 / 2.0;
        assert!((s[0] / expected - 1.0).abs() < 1e-3, "{}", s[0]);
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let stft = Stft::new();
        let c = clip(
            |i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 44100.0).sin() as f32,
            44_100,
        );
        let s = stft_frame(&stft, &c, 20).unwrap();
        let arg = (0..N_BINS).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(arg, (1000.0f64 * 4096.0 / 44100.0).round() as usize);
        assert_eq!(arg, 93);
    }

    #[test]
    fn negative_frame_is_a_range_error() {
        let stft = Stft::new();
        assert!(matches!(
            stft_frame(&stft, &clip(|_| 0.0, 5000), -1),
            Err(AudioError::Range(_))
        ));
    }

    #[test]
    fn future_samples_are_not_read() {
        let stft = Stft::new();
        let a = clip(|i| (i as f32 * 0.01).sin(), 30_000);
        let mut b_samples = a.samples().to_vec();
        for s in &mut b_samples[10 * HOP + 1..] {
            *s = 0.3;
        }
        let b = AudioClip::from_mono(b_samples).unwrap();
        assert_eq!(
            stft_frame(&stft, &a, 10).unwrap(),
            stft_frame(&stft, &b, 10).unwrap()
        );
    }
}
