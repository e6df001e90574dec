use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::synth::SyntheticClip;
use super::targets::{frame_targets, multitask_loss, tempo_target, FrameTargets};
use crate::audio::{FeatureExtractor, FPS, N_BANDS};
use crate::encoder::{BlockConfig, Mode};
use crate::model::{model_forward, ModelConfig, ModelError};
use crate::params::ParamStore;
use crate::tensor::{adam_step, AdamState, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step} (epoch {epoch}): loss is not finite")]
    Diverged { step: usize, epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Block layouts cycled over training steps so one model serves several
    /// latencies. Validation uses the first.
    pub blocks: Vec<BlockConfig>,
    pub epochs: usize,
    pub lr: f64,
    /// Validation epochs without improvement before the learning rate drops.
    pub patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
    /// Longer excerpts are split into segments of at most this length.
    pub segment_s: f64,
    pub widen_targets: bool,
    /// Stop after the first epoch that ends past this many seconds.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::toy(),
            blocks: vec![
                BlockConfig::new(64, 16, 16).expect("valid"),
                BlockConfig::new(64, 1, 1).expect("valid"),
            ],
            epochs: 12,
            lr: 1e-3,
            patience: 6,
            lr_factor: 0.2,
            min_lr: 1e-7,
            seed: 0,
            segment_s: 30.0,
            widen_targets: true,
            time_budget_s: None,
        }
    }
}

/// One training excerpt: features and aligned targets.
#[derive(Debug, Clone)]
pub struct Example {
    pub features: Tensor<f32>,
    pub targets: FrameTargets,
}

impl Example {
    pub fn n_frames(&self) -> usize {
        self.features.rows()
    }
}

/// Features and targets for a clip, split into segments of at most `segment_s`.
pub fn examples_from_clip(
    clip: &SyntheticClip,
    extractor: &FeatureExtractor,
    n_tempo_bins: usize,
    segment_s: f64,
    widen: bool,
) -> Vec<Example> {
    let feats = extractor.extract_matrix(&clip.audio);
    let total = feats.len() / N_BANDS;
    let beat = frame_targets(&clip.beat_times_s, total, widen);
    let down = frame_targets(&clip.downbeat_times_s, total, widen);
    let tempo = tempo_target(clip.bpm, n_tempo_bins);
    let seg = ((segment_s * FPS).floor() as usize).max(1);
    (0..total)
        .step_by(seg)
        .map(|start| {
            let end = (start + seg).min(total);
            Example {
                features: Tensor::new(
                    vec![end - start, N_BANDS],
                    feats[start * N_BANDS..end * N_BANDS].to_vec(),
                )
                .expect("segment shape"),
                targets: FrameTargets {
                    beat: beat[start..end].to_vec(),
                    downbeat: down[start..end].to_vec(),
                    tempo: tempo.clone(),
                },
            }
        })
        .collect()
}

/// Multiplies the learning rate by `factor` once the monitored loss has not
/// improved for `patience` consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    best: f64,
    stalled: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        Plateau {
            lr,
            best: f64::INFINITY,
            stalled: 0,
            patience,
            factor,
            min_lr,
        }
    }

    /// Returns true when this observation lowered the learning rate.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stalled = 0;
            return false;
        }
        self.stalled += 1;
        if self.stalled < self.patience {
            return false;
        }
        self.stalled = 0;
        let next = (self.lr * self.factor).max(self.min_lr);
        let changed = next < self.lr;
        self.lr = next;
        changed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub steps: usize,
    pub seconds: f64,
    pub param_count: usize,
}

fn example_loss(
    tape: &mut Tape<f32>,
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
    block: &BlockConfig,
    ex: &Example,
    mode: Mode,
) -> Result<(crate::params::Bound, crate::tensor::Var), ModelError> {
    let bound = store.bind(tape, mode.is_train());
    let x = tape.constant(ex.features.clone());
    let out = model_forward(tape, &bound, cfg, block, x, mode)?;
    let loss = multitask_loss(tape, &out, &ex.targets)?;
    Ok((bound, loss))
}

fn is_non_finite(e: &ModelError) -> bool {
    e.is_numeric()
}

/// Mean loss over `examples` in inference mode.
pub fn evaluate_loss(
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
    block: &BlockConfig,
    examples: &[Example],
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new();
        let (_, loss) = example_loss(&mut tape, store, cfg, block, ex, Mode::Infer)?;
        total += tape.value(loss).data()[0] as f64;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Trains from a fresh seeded initialization. `on_epoch` sees each finished
/// epoch's report so far.
///
/// The optimizer is plain Adam (β = 0.9/0.999) rather than RAdam with
/// Lookahead; the learning rate drops by `lr_factor` after `patience` epochs
/// without a validation improvement.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    mut on_epoch: impl FnMut(&TrainReport),
) -> Result<(ParamStore<f32>, TrainReport), TrainError> {
    cfg.model.validate()?;
    if cfg.blocks.is_empty() {
        return Err(ModelError::Config("at least one block layout is required".into()).into());
    }
    let started = Instant::now();
    let mut store = cfg.model.init_params::<f32>(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut plateau = Plateau::new(cfg.lr, cfg.patience, cfg.lr_factor, cfg.min_lr);
    let mut report = TrainReport {
        param_count: store.num_scalars(),
        ..TrainReport::default()
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let block = &cfg.blocks[step % cfg.blocks.len()];
            let mode = Mode::Train {
                seed: cfg.seed,
                step: step as u64,
            };
            let mut tape = Tape::new();
            let diverged = TrainError::Diverged { step, epoch };
            let (bound, loss) =
                match example_loss(&mut tape, &store, &cfg.model, block, &train_set[i], mode) {
                    Ok(v) => v,
                    Err(e) if is_non_finite(&e) => return Err(diverged),
                    Err(e) => return Err(e.into()),
                };
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(diverged);
            }
            epoch_loss += value;
            let mut grads = match tape.backward(loss) {
                Ok(g) => g,
                Err(TensorError::NonFinite { .. }) => return Err(diverged),
                Err(e) => return Err(ModelError::from(e).into()),
            };
            store.absorb_grads(&bound, &mut grads);
            adam.lr = plateau.lr;
            adam_step(store.tensors_mut(), &mut adam).map_err(ModelError::from)?;
            step += 1;
        }
        report
            .train_loss
            .push(epoch_loss / train_set.len().max(1) as f64);
        let val = evaluate_loss(&store, &cfg.model, &cfg.blocks[0], val_set)?;
        if !val.is_finite() {
            return Err(TrainError::Diverged { step, epoch });
        }
        report.val_loss.push(val);
        report.lr.push(plateau.lr);
        plateau.observe(val);
        report.steps = step;
        report.seconds = started.elapsed().as_secs_f64();
        on_epoch(&report);
        if cfg.time_budget_s.is_some_and(|b| report.seconds > b) {
            break;
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok((store, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_drops_lr_after_exactly_patience_epochs() {
        let mut p = Plateau::new(1e-3, 6, 0.2, 1e-7);
        assert!(!p.observe(1.0));
        for _ in 0..5 {
            assert!(!p.observe(1.0));
        }
        assert!(p.observe(1.0));
        assert!((p.lr - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn lr_never_drops_below_floor() {
        let mut p = Plateau::new(1e-7, 1, 0.2, 1e-7);
        p.observe(1.0);
        assert!(!p.observe(1.0));
        assert_eq!(p.lr, 1e-7);
    }
}
