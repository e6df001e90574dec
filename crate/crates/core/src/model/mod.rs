//! Full network: convolutional front-end, block encoder, and the beat,
//! downbeat and tempo heads.

mod stream;
pub mod weights;

pub use stream::{ActivationFrame, Model, ModelStream};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    encode_sequence, BlockConfig, EncoderConfig, EncoderError, EncoderVars, Mode,
};
use crate::frontend::{frontend_forward, ConvFrontendConfig};
use crate::params::{xavier, Bound, ParamStore};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Weights(#[from] weights::WeightsError),
}

impl ModelError {
    /// True when the failure is a NaN/Inf produced during computation.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ModelError::Tensor(TensorError::NonFinite { .. })
                | ModelError::Encoder(EncoderError::Tensor(TensorError::NonFinite { .. }))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frontend: ConvFrontendConfig,
    pub encoder: EncoderConfig,
    /// Tempo classes, one per integer BPM starting at 0.
    pub n_tempo_bins: usize,
    pub tempo_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frontend: ConvFrontendConfig::default(),
            encoder: EncoderConfig::default(),
            n_tempo_bins: 300,
            tempo_dropout: 0.5,
        }
    }
}

impl ModelConfig {
    /// A small configuration that trains on a CPU in minutes.
    pub fn toy() -> Self {
        ModelConfig {
            frontend: ConvFrontendConfig {
                channels: vec![8, 16, 32],
                ..ConvFrontendConfig::default()
            },
            encoder: EncoderConfig {
                n_layers: 2,
                n_heads: 2,
                d_model: 32,
                d_ffn: 128,
                dropout: 0.1,
            },
            n_tempo_bins: 300,
            tempo_dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.frontend.validate().map_err(ModelError::Config)?;
        self.encoder.validate()?;
        if self.n_tempo_bins == 0 {
            return Err(ModelError::Config("need at least one tempo bin".into()));
        }
        if !(0.0..1.0).contains(&self.tempo_dropout) {
            return Err(ModelError::Config(format!(
                "tempo dropout {} not in [0, 1)",
                self.tempo_dropout
            )));
        }
        Ok(())
    }

    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.encoder.d_model;
        let mut out = self.frontend.expected_shapes(d);
        out.extend(self.encoder.expected_shapes());
        out.push(("head.beat.weight".into(), vec![d, 1]));
        out.push(("head.beat.bias".into(), vec![1]));
        out.push(("head.downbeat.weight".into(), vec![d, 1]));
        out.push(("head.downbeat.bias".into(), vec![1]));
        out.push(("head.tempo.weight".into(), vec![d, self.n_tempo_bins]));
        out.push(("head.tempo.bias".into(), vec![self.n_tempo_bins]));
        out
    }

    /// Scalar parameter count implied by the configuration.
    pub fn param_count(&self) -> usize {
        self.expected_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn init_params<F: Real>(&self, seed: u64) -> ParamStore<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = self.encoder.d_model;
        self.frontend.init_params(d, &mut rng, &mut store);
        self.encoder.init_params(&mut rng, &mut store);
        store.insert("head.beat.weight", xavier(&mut rng, &[d, 1], d, 1));
        store.insert("head.beat.bias", Tensor::zeros(&[1]));
        store.insert("head.downbeat.weight", xavier(&mut rng, &[d, 1], d, 1));
        store.insert("head.downbeat.bias", Tensor::zeros(&[1]));
        store.insert(
            "head.tempo.weight",
            xavier(&mut rng, &[d, self.n_tempo_bins], d, self.n_tempo_bins),
        );
        store.insert("head.tempo.bias", Tensor::zeros(&[self.n_tempo_bins]));
        store
    }

    /// Checks that `store` holds exactly the expected tensors.
    pub fn check_params<F: Real>(&self, store: &ParamStore<F>) -> Result<(), ModelError> {
        let expected = self.expected_shapes();
        for (name, shape) in &expected {
            match store.get(name) {
                None => return Err(ModelError::Config(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(ModelError::Config(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if store.len() != expected.len() {
            return Err(ModelError::Config(format!(
                "{} parameters stored, configuration has {}",
                store.len(),
                expected.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutputs {
    /// `[T, 1]` logits.
    pub beat_logits: Var,
    pub downbeat_logits: Var,
    /// `[1, n_tempo_bins]` logits for the whole excerpt.
    pub tempo_logits: Var,
}

/// Runs the network over a `[T, 128]` feature matrix.
pub fn model_forward<F: Real>(
    tape: &mut Tape<F>,
    params: &Bound,
    cfg: &ModelConfig,
    block: &BlockConfig,
    features: Var,
    mode: Mode,
) -> Result<ModelOutputs, ModelError> {
    let x = frontend_forward(tape, features, &cfg.frontend, params)?;
    let vars = EncoderVars::bind(tape, params, &cfg.encoder, block.block_len())?;
    let enc = encode_sequence(tape, &vars, &cfg.encoder, block, x, mode)?;
    let beat_logits = tape.linear(
        enc.centers,
        params.var("head.beat.weight"),
        params.var("head.beat.bias"),
    )?;
    let downbeat_logits = tape.linear(
        enc.centers,
        params.var("head.downbeat.weight"),
        params.var("head.downbeat.bias"),
    )?;

    // Sum of per-layer time averages.
    let mut pooled = None;
    for &layer in &enc.layer_outputs {
        let m = tape.mean_rows(layer)?;
        pooled = Some(match pooled {
            None => m,
            Some(acc) => tape.add(acc, m)?,
        });
    }
    let pooled = pooled.expect("encoder has layers");
    let pooled = tape.dropout(
        pooled,
        cfg.tempo_dropout,
        mode.key(u64::MAX),
        mode.is_train(),
    )?;
    let tempo_logits = tape.linear(
        pooled,
        params.var("head.tempo.weight"),
        params.var("head.tempo.bias"),
    )?;
    Ok(ModelOutputs {
        beat_logits,
        downbeat_logits,
        tempo_logits,
    })
}
