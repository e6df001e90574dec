//! Audio in, numbered beats out: features → model → decoder, frame by frame.

use std::io::Read;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError, FeatureExtractor, FeatureFrame, WavStream, N_BANDS};
use crate::dbn::{BeatDecoder, BeatEvent, DbnConfig, DbnError};
use crate::encoder::BlockConfig;
use crate::eval::{f_measure, EvalResult, DEFAULT_TOLERANCE_S};
use crate::model::{ActivationFrame, Model, ModelError, ModelStream};
use crate::tensor::Tensor;
use crate::train::SyntheticClip;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dbn(#[from] DbnError),
}

/// Streaming tracker fed with feature frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    model: ModelStream,
    decoder: BeatDecoder,
}

impl Tracker {
    pub fn new(model: &Model, block: BlockConfig, dbn: DbnConfig) -> Result<Self, PipelineError> {
        Ok(Tracker {
            model: model.stream(block)?,
            decoder: BeatDecoder::new(dbn)?,
        })
    }

    /// Feeds one feature frame; returns the activations it completed and any beats they produced.
    pub fn push(
        &mut self,
        frame: &FeatureFrame,
    ) -> Result<(Vec<ActivationFrame>, Vec<BeatEvent>), PipelineError> {
        let acts = self.model.push(&frame.values)?;
        let beats = self.decoder.decode(&acts);
        Ok((acts, beats))
    }

    /// Flushes the frames still waiting for look-ahead at end of stream.
    pub fn finish(&mut self) -> Result<(Vec<ActivationFrame>, Vec<BeatEvent>), PipelineError> {
        let acts = self.model.finish()?;
        let beats = self.decoder.decode(&acts);
        Ok((acts, beats))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrackOutput {
    pub beats: Vec<BeatEvent>,
    pub activations: Vec<ActivationFrame>,
}

/// Progress seen by [`track_reader`] callers after each decoded chunk.
#[derive(Debug, Clone, Copy)]
pub struct ChunkProgress {
    /// Mono 44.1 kHz samples decoded so far.
    pub samples: usize,
    /// Activation frames emitted so far.
    pub activations: usize,
}

/// Streams a WAV source through the tracker `chunk` input frames at a time,
/// exactly as live input would arrive.
pub fn track_reader<R: Read>(
    model: &Model,
    source: R,
    block: BlockConfig,
    dbn: DbnConfig,
    chunk: usize,
    mut on_chunk: impl FnMut(ChunkProgress),
) -> Result<TrackOutput, PipelineError> {
    let mut wav = WavStream::new(source)?;
    let extractor = FeatureExtractor::new();
    let mut features = extractor.stream();
    let mut tracker = Tracker::new(model, block, dbn)?;
    let mut out = TrackOutput::default();
    while let Some(samples) = wav.next_chunk(chunk.max(1))? {
        for f in features.push(&samples) {
            let (a, b) = tracker.push(&f)?;
            out.activations.extend(a);
            out.beats.extend(b);
        }
        on_chunk(ChunkProgress {
            samples: features.samples_seen(),
            activations: out.activations.len(),
        });
    }
    if features.frames_emitted() == 0 {
        return Err(AudioError::Empty.into());
    }
    let (a, b) = tracker.finish()?;
    out.activations.extend(a);
    out.beats.extend(b);
    Ok(out)
}

/// Streams an in-memory clip in hop-sized pieces.
pub fn track_clip_streaming(
    model: &Model,
    clip: &AudioClip,
    block: BlockConfig,
    dbn: DbnConfig,
) -> Result<TrackOutput, PipelineError> {
    let extractor = FeatureExtractor::new();
    let mut features = extractor.stream();
    let mut tracker = Tracker::new(model, block, dbn)?;
    let mut out = TrackOutput::default();
    for piece in clip.samples().chunks(crate::audio::HOP) {
        for f in features.push(piece) {
            let (a, b) = tracker.push(&f)?;
            out.activations.extend(a);
            out.beats.extend(b);
        }
    }
    let (a, b) = tracker.finish()?;
    out.activations.extend(a);
    out.beats.extend(b);
    Ok(out)
}

/// Same result as [`track_clip_streaming`], computed over the whole clip at
/// once (used for fast evaluation).
pub fn track_clip(
    model: &Model,
    clip: &AudioClip,
    block: BlockConfig,
    dbn: DbnConfig,
) -> Result<TrackOutput, PipelineError> {
    let feats = FeatureExtractor::new().extract_matrix(clip);
    let n = feats.len() / N_BANDS;
    if n == 0 {
        return Err(AudioError::Empty.into());
    }
    let x = Tensor::new(vec![n, N_BANDS], feats).expect("feature matrix shape");
    let activations = model.activations(&x, &block)?;
    let beats = BeatDecoder::new(dbn)?.decode(&activations);
    Ok(TrackOutput { beats, activations })
}

/// Beat and downbeat scores on one annotated clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub beats: EvalResult,
    pub downbeats: EvalResult,
}

pub fn score_clip(out: &TrackOutput, clip: &SyntheticClip) -> ClipScores {
    let est: Vec<f64> = out.beats.iter().map(|b| b.time_s).collect();
    let est_down: Vec<f64> = out
        .beats
        .iter()
        .filter(|b| b.beat_number == 1)
        .map(|b| b.time_s)
        .collect();
    ClipScores {
        beats: f_measure(&clip.beat_times_s, &est, DEFAULT_TOLERANCE_S),
        downbeats: f_measure(&clip.downbeat_times_s, &est_down, DEFAULT_TOLERANCE_S),
    }
}

/// Mean F1 over a set of clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub beat_f1: f64,
    pub downbeat_f1: f64,
    pub n_clips: usize,
}

/// Scores clips in parallel on at most `threads` workers (`None` = all cores).
pub fn evaluate_corpus(
    model: &Model,
    clips: &[SyntheticClip],
    block: BlockConfig,
    dbn: &DbnConfig,
    threads: Option<usize>,
) -> Result<CorpusScores, PipelineError> {
    use rayon::prelude::*;
    let run = || {
        clips
            .par_iter()
            .map(|c| track_clip(model, &c.audio, block, dbn.clone()).map(|o| score_clip(&o, c)))
            .collect::<Result<Vec<_>, _>>()
    };
    let scores = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(run)?,
        None => run()?,
    };
    let n = scores.len().max(1) as f64;
    Ok(CorpusScores {
        beat_f1: scores.iter().map(|s| s.beats.f1).sum::<f64>() / n,
        downbeat_f1: scores.iter().map(|s| s.downbeats.f1).sum::<f64>() / n,
        n_clips: scores.len(),
    })
}

/// Worker cap from `BEAST_THREADS`, if set to a positive integer.
pub fn thread_cap_from_env() -> Option<usize> {
    std::env::var("BEAST_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub latency_ms: u64,
    pub first_run: f64,
    pub median: f64,
    pub runs: Vec<f64>,
}

/// Real-time factor of the full streaming pipeline (features, model,
/// decoder) on `clip`: wall time over audio duration, for `runs` runs.
pub fn measure_rtf(
    model: &Model,
    clip: &AudioClip,
    block: BlockConfig,
    dbn: &DbnConfig,
    runs: usize,
) -> Result<RtfReport, PipelineError> {
    let mut times = Vec::with_capacity(runs.max(1));
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        track_clip_streaming(model, clip, block, dbn.clone())?;
        times.push(start.elapsed().as_secs_f64() / clip.duration_s());
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(RtfReport {
        latency_ms: crate::eval::latency_ms(&block),
        first_run: times[0],
        median: sorted[sorted.len() / 2],
        runs: times,
    })
}
