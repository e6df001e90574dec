use super::filterbank::{build_filterbank, FilterBank, N_BANDS};
use super::stft::{causal_segment, Stft};
use super::{AudioClip, FPS, HOP, WINDOW};

/// One 128-band log-magnitude frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub values: Vec<f32>,
    pub frame_index: usize,
}

impl FeatureFrame {
    pub fn time_s(&self) -> f64 {
        self.frame_index as f64 / FPS
    }
}

/// `values[k] = ln(1 + Σ_j w[k][j]·spectrum[j])`.
pub fn frame_features(spectrum: &[f32], fb: &FilterBank, frame_index: usize) -> FeatureFrame {
    assert_eq!(
        spectrum.len(),
        fb.n_bins(),
        "spectrum length must match the filterbank"
    );
    let values = (0..fb.n_bands())
        .map(|k| fb.apply_band(k, spectrum).ln_1p())
        .collect();
    FeatureFrame {
        values,
        frame_index,
    }
}

/// STFT plan plus filterbank; shareable across threads.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    stft: Stft,
    fb: FilterBank,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor {
    pub fn new() -> Self {
        FeatureExtractor {
            stft: Stft::new(),
            fb: build_filterbank(),
        }
    }

    pub fn filterbank(&self) -> &FilterBank {
        &self.fb
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    fn frame_from_segment(&self, seg: &[f32], t: usize) -> FeatureFrame {
        frame_features(&self.stft.magnitudes(seg), &self.fb, t)
    }

    /// Offline extraction of all `floor(len/1024)` frames.
    pub fn extract(&self, clip: &AudioClip) -> Vec<FeatureFrame> {
        let mut seg = vec![0.0; WINDOW];
        (0..clip.len() / HOP)
            .map(|t| {
                causal_segment(clip.samples(), 0, t, &mut seg);
                self.frame_from_segment(&seg, t)
            })
            .collect()
    }

    /// Offline extraction as a row-major `[T, 128]` buffer.
    pub fn extract_matrix(&self, clip: &AudioClip) -> Vec<f32> {
        self.extract(clip)
            .into_iter()
            .flat_map(|f| f.values)
            .collect()
    }

    pub fn stream(&self) -> FeatureStream<'_> {
        FeatureStream {
            extractor: self,
            buf: Vec::new(),
            first_index: 0,
            total: 0,
            next_frame: 0,
            seg: vec![0.0; WINDOW],
        }
    }
}

/// Incremental extractor. Frame `t` is emitted once hop `t` is complete
/// (`(t+1)·1024` samples received), so a stream always yields the same frames as
/// [`FeatureExtractor::extract`] on the concatenated input.
pub struct FeatureStream<'a> {
    extractor: &'a FeatureExtractor,
    buf: Vec<f32>,
    first_index: usize,
    total: usize,
    next_frame: usize,
    seg: Vec<f32>,
}

impl FeatureStream<'_> {
    pub fn push(&mut self, samples: &[f32]) -> Vec<FeatureFrame> {
        self.buf.extend_from_slice(samples);
        self.total += samples.len();
        let mut out = Vec::new();
        while (self.next_frame + 1) * HOP <= self.total {
            let t = self.next_frame;
            causal_segment(&self.buf, self.first_index, t, &mut self.seg);
            out.push(self.extractor.frame_from_segment(&self.seg, t));
            self.next_frame += 1;
        }
        // Keep what the next frame's window can still reach.
        let keep_from = (self.next_frame * HOP).saturating_sub(WINDOW - 1);
        if keep_from > self.first_index + 8 * HOP {
            self.buf.drain(..keep_from - self.first_index);
            self.first_index = keep_from;
        }
        out
    }

    pub fn frames_emitted(&self) -> usize {
        self.next_frame
    }

    pub fn samples_seen(&self) -> usize {
        self.total
    }
}

/// Lazily yields the frames of `clip` in order.
pub fn stream_features<'a>(
    extractor: &'a FeatureExtractor,
    clip: &'a AudioClip,
) -> impl Iterator<Item = FeatureFrame> + 'a {
    let mut seg = vec![0.0; WINDOW];
    (0..clip.len() / HOP).map(move |t| {
        causal_segment(clip.samples(), 0, t, &mut seg);
        extractor.frame_from_segment(&seg, t)
    })
}

const _: () = assert!(N_BANDS == 128);
