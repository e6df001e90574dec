//! Online beat decoding: a tempo/phase lattice filtered with the forward
//! algorithm, plus downbeat selection by meter/phase voting.

mod downbeat;

pub use downbeat::{downbeat_select, DownbeatTracker};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::FPS;
use crate::model::ActivationFrame;

/// Lower bound on observation likelihoods so a hard 0/1 activation never
/// zeroes the whole distribution.
pub const OBS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DbnError {
    #[error("invalid decoder configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbnConfig {
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub observation_lambda: u32,
    pub transition_lambda: f64,
    pub fps: f64,
}

impl Default for DbnConfig {
    fn default() -> Self {
        DbnConfig {
            min_bpm: 55.0,
            max_bpm: 215.0,
            observation_lambda: 16,
            transition_lambda: 100.0,
            fps: FPS,
        }
    }
}

/// Tempo rows, one per integer beat interval `τ` (frames), each holding `τ`
/// phase states laid out contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatStateSpace {
    intervals: Vec<usize>,
    offsets: Vec<usize>,
    beat_states: Vec<usize>,
    is_beat: Vec<bool>,
}

impl BeatStateSpace {
    pub fn intervals(&self) -> &[usize] {
        &self.intervals
    }

    pub fn n_rows(&self) -> usize {
        self.intervals.len()
    }

    pub fn n_states(&self) -> usize {
        self.is_beat.len()
    }

    /// Index of the state `(row, phase)`.
    pub fn state(&self, row: usize, phase: usize) -> usize {
        debug_assert!(phase < self.intervals[row]);
        self.offsets[row] + phase
    }

    /// `(row, phase)` of a state index.
    pub fn locate(&self, s: usize) -> (usize, usize) {
        let row = self.offsets.partition_point(|&o| o <= s) - 1;
        (row, s - self.offsets[row])
    }

    pub fn is_beat(&self, s: usize) -> bool {
        self.is_beat[s]
    }

    /// Beat-flagged states in `row`.
    pub fn beat_states_in_row(&self, row: usize) -> usize {
        self.beat_states[row]
    }

    pub fn min_interval(&self) -> usize {
        self.intervals[0]
    }
}

pub fn build_state_space(
    min_bpm: f64,
    max_bpm: f64,
    fps: f64,
    observation_lambda: u32,
) -> Result<BeatStateSpace, DbnError> {
    if !(min_bpm > 0.0 && min_bpm < max_bpm && fps > 0.0) {
        return Err(DbnError::Config(format!(
            "need 0 < min_bpm < max_bpm and fps > 0 (got {min_bpm}, {max_bpm}, {fps})"
        )));
    }
    if observation_lambda == 0 {
        return Err(DbnError::Config(
            "observation_lambda must be at least 1".into(),
        ));
    }
    let lo = (fps * 60.0 / max_bpm).ceil().max(1.0) as usize;
    let hi = (fps * 60.0 / min_bpm).floor() as usize;
    if hi < lo {
        return Err(DbnError::Config(format!(
            "{min_bpm}–{max_bpm} BPM contains no integer beat interval at {fps} fps"
        )));
    }
    let intervals: Vec<usize> = (lo..=hi).collect();
    let mut offsets = Vec::with_capacity(intervals.len());
    let mut beat_states = Vec::with_capacity(intervals.len());
    let mut is_beat = Vec::new();
    for &tau in &intervals {
        offsets.push(is_beat.len());
        let n_beat = tau.div_ceil(observation_lambda as usize);
        beat_states.push(n_beat);
        is_beat.extend((0..tau).map(|phase| phase < n_beat));
    }
    Ok(BeatStateSpace {
        intervals,
        offsets,
        beat_states,
        is_beat,
    })
}

/// Phase advances deterministically; on wrapping past the last phase of row
/// `τ`, the next row `τ′` is drawn with probability `∝ exp(−λ·|ln(τ′/τ)|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    /// `wrap[r * n_rows + r2]`: probability of entering row `r2` when row `r` wraps.
    wrap: Vec<f64>,
    n_rows: usize,
}

impl TransitionModel {
    pub fn new(ss: &BeatStateSpace, lambda: f64) -> Result<Self, DbnError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(DbnError::Config(format!(
                "transition_lambda {lambda} must be finite and >= 0"
            )));
        }
        let n = ss.n_rows();
        let mut wrap = vec![0.0; n * n];
        for (r, &tau) in ss.intervals.iter().enumerate() {
            let row = &mut wrap[r * n..(r + 1) * n];
            for (r2, &tau2) in ss.intervals.iter().enumerate() {
                row[r2] = (-lambda * (tau2 as f64 / tau as f64).ln().abs()).exp();
            }
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
        }
        Ok(TransitionModel { wrap, n_rows: n })
    }

    pub fn wrap_probability(&self, from_row: usize, to_row: usize) -> f64 {
        self.wrap[from_row * self.n_rows + to_row]
    }

    /// Probability of moving from state `s` to state `s2`.
    pub fn probability(&self, ss: &BeatStateSpace, s: usize, s2: usize) -> f64 {
        let (r, ph) = ss.locate(s);
        let (r2, ph2) = ss.locate(s2);
        if ph + 1 < ss.intervals[r] {
            if r2 == r && ph2 == ph + 1 {
                1.0
            } else {
                0.0
            }
        } else if ph2 == 0 {
            self.wrap_probability(r, r2)
        } else {
            0.0
        }
    }
}

pub fn observation_likelihoods(act: f64, ss: &BeatStateSpace, observation_lambda: u32) -> Vec<f64> {
    let other = if observation_lambda > 1 {
        (1.0 - act) / (observation_lambda - 1) as f64
    } else {
        0.0
    };
    ss.is_beat
        .iter()
        .map(|&b| if b { act } else { other })
        .collect()
}

/// Filtered posterior over the lattice plus emission bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    pub p: Vec<f64>,
    pub last_beat: Option<usize>,
    /// Frames consumed so far; the next frame's index.
    pub frame: usize,
}

impl ForwardState {
    pub fn uniform(ss: &BeatStateSpace) -> Self {
        let n = ss.n_states();
        ForwardState {
            p: vec![1.0 / n as f64; n],
            last_beat: None,
            frame: 0,
        }
    }
}

/// `Tᵀ p` using the lattice structure: each phase shifts by one, and the
/// wrapping mass of every row is redistributed over the rows' first phases.
pub fn predict(p: &[f64], ss: &BeatStateSpace, tm: &TransitionModel) -> Vec<f64> {
    let n_rows = ss.n_rows();
    let mut out = vec![0.0; p.len()];
    let wrapping: Vec<f64> = (0..n_rows)
        .map(|r| p[ss.offsets[r] + ss.intervals[r] - 1])
        .collect();
    for r in 0..n_rows {
        let o = ss.offsets[r];
        let tau = ss.intervals[r];
        out[o + 1..o + tau].copy_from_slice(&p[o..o + tau - 1]);
    }
    for (r, &mass) in wrapping.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for r2 in 0..n_rows {
            out[ss.offsets[r2]] += mass * tm.wrap_probability(r, r2);
        }
    }
    out
}

/// One filtering step on activation `act`. Returns the frame index when a
/// beat is emitted at this frame.
pub fn forward_step(
    state: &mut ForwardState,
    act: f64,
    tm: &TransitionModel,
    ss: &BeatStateSpace,
    observation_lambda: u32,
) -> Option<usize> {
    let act = act.clamp(0.0, 1.0);
    let obs = observation_likelihoods(act, ss, observation_lambda);
    let mut p = predict(&state.p, ss, tm);
    let mut z = 0.0;
    for (v, o) in p.iter_mut().zip(&obs) {
        *v *= o.max(OBS_FLOOR);
        z += *v;
    }
    p.iter_mut().for_each(|v| *v /= z);
    state.p = p;

    let frame = state.frame;
    state.frame += 1;
    let best = argmax(&state.p);
    let debounce = ss.min_interval() as f64 / 2.0;
    let clear = state
        .last_beat
        .is_none_or(|last| (frame - last) as f64 > debounce);
    if ss.is_beat(best) && clear {
        state.last_beat = Some(frame);
        Some(frame)
    } else {
        None
    }
}

/// First index of the maximum.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// A decoded beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatEvent {
    pub frame: usize,
    pub time_s: f64,
    /// Position in the bar, 1 = downbeat.
    pub beat_number: usize,
}

/// Streaming decoder from activation frames to numbered beats.
#[derive(Debug, Clone)]
pub struct BeatDecoder {
    cfg: DbnConfig,
    ss: BeatStateSpace,
    tm: TransitionModel,
    state: ForwardState,
    downbeats: DownbeatTracker,
}

impl BeatDecoder {
    pub fn new(cfg: DbnConfig) -> Result<Self, DbnError> {
        let ss = build_state_space(cfg.min_bpm, cfg.max_bpm, cfg.fps, cfg.observation_lambda)?;
        let tm = TransitionModel::new(&ss, cfg.transition_lambda)?;
        Ok(BeatDecoder {
            state: ForwardState::uniform(&ss),
            downbeats: DownbeatTracker::new(&[3, 4]),
            cfg,
            ss,
            tm,
        })
    }

    pub fn state_space(&self) -> &BeatStateSpace {
        &self.ss
    }

    /// Frames must arrive in order, starting at 0.
    pub fn push(&mut self, frame: &ActivationFrame) -> Option<BeatEvent> {
        debug_assert_eq!(frame.frame_index, self.state.frame);
        let t = forward_step(
            &mut self.state,
            frame.beat as f64,
            &self.tm,
            &self.ss,
            self.cfg.observation_lambda,
        )?;
        Some(BeatEvent {
            frame: t,
            time_s: t as f64 / self.cfg.fps,
            beat_number: self.downbeats.push(frame.downbeat as f64),
        })
    }

    pub fn decode(&mut self, frames: &[ActivationFrame]) -> Vec<BeatEvent> {
        frames.iter().filter_map(|f| self.push(f)).collect()
    }
}
