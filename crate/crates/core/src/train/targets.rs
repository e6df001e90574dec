use crate::audio::FPS;
use crate::model::ModelOutputs;
use crate::tensor::{Real, Tape, TensorError, Var};

/// Frame-rate training targets for one excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub beat: Vec<f32>,
    pub downbeat: Vec<f32>,
    /// One-hot over the tempo bins.
    pub tempo: Vec<f32>,
}

/// Marks `round(t·fps)` with 1; with `widen`, the frames either side get 0.5
/// unless already marked.
pub fn frame_targets(times_s: &[f64], n_frames: usize, widen: bool) -> Vec<f32> {
    let mut out = vec![0.0f32; n_frames];
    let hits: Vec<usize> = times_s
        .iter()
        .map(|t| (t * FPS).round() as usize)
        .filter(|&f| f < n_frames)
        .collect();
    if widen {
        for &f in &hits {
            for g in [f.wrapping_sub(1), f + 1] {
                if g < n_frames {
                    out[g] = out[g].max(0.5);
                }
            }
        }
    }
    for f in hits {
        out[f] = 1.0;
    }
    out
}

pub fn tempo_target(bpm: f64, n_bins: usize) -> Vec<f32> {
    let mut out = vec![0.0; n_bins];
    out[(bpm.round() as usize).min(n_bins - 1)] = 1.0;
    out
}

/// Unweighted sum of the mean binary cross-entropies of the beat, downbeat
/// and tempo outputs.
pub fn multitask_loss<F: Real>(
    tape: &mut Tape<F>,
    out: &ModelOutputs,
    targets: &FrameTargets,
) -> Result<Var, TensorError> {
    let cast = |v: &[f32]| v.iter().map(|&x| F::lit(x as f64)).collect::<Vec<F>>();
    let b = tape.bce_with_logits(out.beat_logits, &cast(&targets.beat), None)?;
    let d = tape.bce_with_logits(out.downbeat_logits, &cast(&targets.downbeat), None)?;
    let t = tape.bce_with_logits(out.tempo_logits, &cast(&targets.tempo), None)?;
    let bd = tape.add(b, d)?;
    tape.add(bd, t)
}
