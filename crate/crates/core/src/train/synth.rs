//! Synthetic click tracks with exact beat and downbeat annotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{AudioClip, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    /// Click pitch for ordinary beats, Hz.
    pub beat_hz: f64,
    /// Click pitch for downbeats, Hz; lower than `beat_hz`.
    pub downbeat_hz: f64,
    pub beat_gain: f32,
    pub downbeat_gain: f32,
    /// Exponential decay time constant of a click, seconds.
    pub decay_s: f64,
    /// Standard deviation of the white noise floor.
    pub noise_std: f32,
    /// Beat times are displaced uniformly within `±jitter_s`.
    pub jitter_s: f64,
    /// Time of the first beat.
    pub offset_s: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            beat_hz: 1760.0,
            downbeat_hz: 880.0,
            beat_gain: 0.45,
            downbeat_gain: 0.9,
            decay_s: 0.025,
            noise_std: 0.0,
            jitter_s: 0.0,
            offset_s: 0.0,
        }
    }
}

impl SynthOptions {
    /// Randomized options for training/evaluation corpora: noise, ±5 ms jitter,
    /// random start phase and timbre.
    pub fn randomized(rng: &mut ChaCha8Rng, period_s: f64) -> Self {
        let pitch = rng.gen_range(0.8..1.25);
        SynthOptions {
            beat_hz: 1760.0 * pitch,
            downbeat_hz: 880.0 * pitch,
            beat_gain: rng.gen_range(0.3..0.5),
            downbeat_gain: rng.gen_range(0.7..1.0),
            decay_s: rng.gen_range(0.015..0.04),
            noise_std: rng.gen_range(0.005..0.05),
            jitter_s: 0.005,
            offset_s: rng.gen_range(0.0..period_s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub audio: AudioClip,
    pub beat_times_s: Vec<f64>,
    pub downbeat_times_s: Vec<f64>,
    pub bpm: f64,
    pub meter: usize,
}

/// Renders clicks at `offset + k·60/bpm` (jittered); beat 0 and every
/// `meter`-th beat after it is a downbeat.
pub fn gen_click_track(
    bpm: f64,
    meter: usize,
    duration_s: f64,
    seed: u64,
    opts: &SynthOptions,
) -> SyntheticClip {
    assert!(
        bpm > 0.0 && meter > 0 && duration_s > 0.0,
        "invalid click track request"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let mut samples = vec![0.0f32; n];
    if opts.noise_std > 0.0 {
        let normal = Normal::new(0.0, opts.noise_std as f64).expect("finite std");
        for s in &mut samples {
            *s = normal.sample(&mut rng) as f32;
        }
    }

    let period = 60.0 / bpm;
    let click_len = ((opts.decay_s * 8.0) * sr) as usize;
    let mut beats = Vec::new();
    let mut downbeats = Vec::new();
    let mut k = 0usize;
    loop {
        let jitter = if opts.jitter_s > 0.0 {
            rng.gen_range(-opts.jitter_s..=opts.jitter_s)
        } else {
            0.0
        };
        let t = (opts.offset_s + k as f64 * period + jitter).max(0.0);
        if opts.offset_s + k as f64 * period >= duration_s {
            break;
        }
        if t < duration_s {
            let down = k.is_multiple_of(meter);
            let (hz, gain) = if down {
                (opts.downbeat_hz, opts.downbeat_gain)
            } else {
                (opts.beat_hz, opts.beat_gain)
            };
            let start = (t * sr).round() as usize;
            for i in 0..click_len.min(n.saturating_sub(start)) {
                let ts = i as f64 / sr;
                let v = (2.0 * std::f64::consts::PI * hz * ts).sin() * (-ts / opts.decay_s).exp();
                samples[start + i] += gain * v as f32;
            }
            beats.push(t);
            if down {
                downbeats.push(t);
            }
        }
        k += 1;
    }
    SyntheticClip {
        audio: AudioClip::from_mono(samples).expect("non-empty clip"),
        beat_times_s: beats,
        downbeat_times_s: downbeats,
        bpm,
        meter,
    }
}

/// Requested corpus of random click tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_clips: usize,
    pub duration_s: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_clips: 200,
            duration_s: 12.0,
            min_bpm: 60.0,
            max_bpm: 180.0,
            seed: 0,
        }
    }
}

/// Random tempo, meter, timbre, noise and jitter per clip; deterministic in `spec.seed`.
pub fn gen_corpus(spec: &CorpusSpec) -> Vec<SyntheticClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_clips)
        .map(|_| {
            let bpm = rng.gen_range(spec.min_bpm..=spec.max_bpm);
            let meter = if rng.gen_bool(0.5) { 3 } else { 4 };
            let opts = SynthOptions::randomized(&mut rng, 60.0 / bpm);
            gen_click_track(bpm, meter, spec.duration_s, rng.gen(), &opts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_120_bpm() {
        let c = gen_click_track(120.0, 4, 10.0, 1, &SynthOptions::default());
        assert_eq!(c.beat_times_s.len(), 20);
        for (k, t) in c.beat_times_s.iter().enumerate() {
            assert!((t - 0.5 * k as f64).abs() < 1e-12);
        }
        assert_eq!(c.downbeat_times_s, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn seeded_and_jittered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = SynthOptions::randomized(&mut rng, 0.5);
        let a = gen_click_track(100.0, 3, 6.0, 9, &opts);
        let b = gen_click_track(100.0, 3, 6.0, 9, &opts);
        assert_eq!(a.audio.samples(), b.audio.samples());
        assert_eq!(a.beat_times_s, b.beat_times_s);
        let period = 0.6;
        for w in a.beat_times_s.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - period).abs() <= 0.010 + 1e-12);
        }
        for d in &a.downbeat_times_s {
            assert!(a.beat_times_s.contains(d));
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = CorpusSpec {
            n_clips: 3,
            duration_s: 5.0,
            ..CorpusSpec::default()
        };
        let (a, b) = (gen_corpus(&spec), gen_corpus(&spec));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.audio.samples(), y.audio.samples());
            assert!((60.0..=180.0).contains(&x.bpm));
        }
    }
}
