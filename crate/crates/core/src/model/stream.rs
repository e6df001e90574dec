use std::path::Path;
use std::sync::Arc;

use super::{model_forward, weights, ModelConfig, ModelError};
use crate::encoder::{BlockConfig, EncoderStream, Mode};
use crate::frontend::{frontend_forward, FrontendStream};
use crate::params::{ParamStore, SharedParams};
use crate::tensor::{Tape, Tensor};

/// Beat and downbeat probabilities for one feature frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationFrame {
    pub frame_index: usize,
    pub beat: f32,
    pub downbeat: f32,
}

/// Trained network ready for inference.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: Arc<SharedParams<f32>>,
}

impl Model {
    pub fn new(cfg: ModelConfig, params: ParamStore<f32>) -> Result<Self, ModelError> {
        cfg.validate()?;
        cfg.check_params(&params)?;
        Ok(Model {
            cfg,
            params: Arc::new(params.into()),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (cfg, params) = weights::load(path)?;
        Model::new(cfg, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        weights::save(path, &self.cfg, &self.params.to_store())?;
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &SharedParams<f32> {
        &self.params
    }

    pub fn stream(&self, block: BlockConfig) -> Result<ModelStream, ModelError> {
        Ok(ModelStream {
            frontend: FrontendStream::new(&self.cfg.frontend),
            encoder: EncoderStream::new(Arc::clone(&self.params), self.cfg.encoder.clone(), block)?,
            params: Arc::clone(&self.params),
            cfg: self.cfg.clone(),
            next_out: 0,
        })
    }

    /// Whole-sequence inference on a `[T, 128]` feature matrix; identical to
    /// streaming the same frames.
    pub fn activations(
        &self,
        features: &Tensor<f32>,
        block: &BlockConfig,
    ) -> Result<Vec<ActivationFrame>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(features.clone());
        let out = model_forward(&mut tape, &bound, &self.cfg, block, x, Mode::Infer)?;
        let b = tape.sigmoid(out.beat_logits)?;
        let db = tape.sigmoid(out.downbeat_logits)?;
        let (b, db) = (tape.value(b), tape.value(db));
        Ok((0..b.len())
            .map(|t| ActivationFrame {
                frame_index: t,
                beat: b.data()[t],
                downbeat: db.data()[t],
            })
            .collect())
    }
}

/// Frame-synchronous inference: feature frames in, activations out with the
/// block latency.
#[derive(Debug, Clone)]
pub struct ModelStream {
    frontend: FrontendStream,
    encoder: EncoderStream,
    params: Arc<SharedParams<f32>>,
    cfg: ModelConfig,
    next_out: usize,
}

impl ModelStream {
    pub fn block_config(&self) -> &BlockConfig {
        self.encoder.block_config()
    }

    pub fn push(&mut self, features: &[f32]) -> Result<Vec<ActivationFrame>, ModelError> {
        let window = self.frontend.push(features);
        let n = window.rows();
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(window);
        let y = frontend_forward(&mut tape, x, &self.cfg.frontend, &bound)?;
        let centers = self.encoder.push(tape.value(y).row(n - 1))?;
        self.heads(centers)
    }

    pub fn finish(&mut self) -> Result<Vec<ActivationFrame>, ModelError> {
        let centers = self.encoder.finish()?;
        self.heads(centers)
    }

    fn heads(&mut self, centers: Vec<Vec<f32>>) -> Result<Vec<ActivationFrame>, ModelError> {
        if centers.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&centers)?);
        let b = tape.linear(
            x,
            bound.var("head.beat.weight"),
            bound.var("head.beat.bias"),
        )?;
        let b = tape.sigmoid(b)?;
        let db = tape.linear(
            x,
            bound.var("head.downbeat.weight"),
            bound.var("head.downbeat.bias"),
        )?;
        let db = tape.sigmoid(db)?;
        let (b, db) = (tape.value(b), tape.value(db));
        let out = (0..centers.len())
            .map(|i| ActivationFrame {
                frame_index: self.next_out + i,
                beat: b.data()[i],
                downbeat: db.data()[i],
            })
            .collect();
        self.next_out += centers.len();
        Ok(out)
    }
}
