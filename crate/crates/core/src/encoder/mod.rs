//! Contextual block-processing Transformer encoder with relative positions.
//!
//! The frame sequence is cut into blocks of left context, center and right
//! look-ahead frames. Each layer attends within the block plus one extra
//! context row carried from the previous block, so a block's outputs depend
//! only on frames up to the end of its look-ahead.

mod attention;
mod blocks;
mod layer;
mod relpos;
mod sequence;
mod stream;

pub use attention::{block_attention, AttentionOutput};
pub use blocks::{chunk_blocks, BlockConfig, BlockSpan};
pub use layer::{encode_block, BlockInputs, BlockOutputs};
pub use relpos::{
    block_delta_index, delta_index, rel_attention_scores, sinusoid_table, table_row, RelPosParams,
};
pub use sequence::{encode_sequence, SequenceOutputs};
pub use stream::{EncoderStream, StreamState};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{xavier, Bound, ParamStore};
use crate::tensor::{DropoutKey, Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Range(String),
    #[error("stream contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 9,
            n_heads: 8,
            d_model: 256,
            d_ffn: 1024,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return Err(EncoderError::Config("sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(EncoderError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ffn);
        let mut out = Vec::new();
        for n in 0..self.n_layers {
            let p = |s: &str| format!("encoder.layer{n}.{s}");
            for (name, shape) in [
                ("ln1.gain", vec![d]),
                ("ln1.bias", vec![d]),
                ("attn.wq", vec![d, d]),
                ("attn.bq", vec![d]),
                ("attn.wk", vec![d, d]),
                ("attn.bk", vec![d]),
                ("attn.wv", vec![d, d]),
                ("attn.bv", vec![d]),
                ("attn.wo", vec![d, d]),
                ("attn.bo", vec![d]),
                ("attn.w_r", vec![d, d]),
                ("attn.u", vec![d]),
                ("attn.v", vec![d]),
                ("ln2.gain", vec![d]),
                ("ln2.bias", vec![d]),
                ("ffn.w1", vec![d, f]),
                ("ffn.b1", vec![f]),
                ("ffn.w2", vec![f, d]),
                ("ffn.b2", vec![d]),
            ] {
                out.push((p(name), shape));
            }
        }
        out.push(("encoder.final_ln.gain".into(), vec![d]));
        out.push(("encoder.final_ln.bias".into(), vec![d]));
        out
    }

    pub fn init_params<F: Real>(&self, rng: &mut ChaCha8Rng, store: &mut ParamStore<F>) {
        for (name, shape) in self.expected_shapes() {
            let t = if name.ends_with(".gain") {
                Tensor::filled(&shape, F::one())
            } else if name.ends_with(".u") || name.ends_with(".v") {
                Tensor::from_fn(&shape, |_| F::lit(rng.gen_range(-0.1..0.1)))
            } else if shape.len() == 2 {
                xavier(rng, &shape, shape[0], shape[1])
            } else {
                Tensor::zeros(&shape)
            };
            store.insert(name, t);
        }
    }
}

/// Inference or training; training enables dropout with masks keyed by
/// `(seed, step, call site)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Infer,
    Train { seed: u64, step: u64 },
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    pub(crate) fn key(&self, site: u64) -> DropoutKey {
        match *self {
            Mode::Infer => DropoutKey {
                seed: 0,
                site,
                step: 0,
            },
            Mode::Train { seed, step } => DropoutKey { seed, site, step },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub u: Var,
    pub v: Var,
    /// Projected position table `R · W_R`, `[2·max_len − 1, d]`.
    pub positions: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub ln1: (Var, Var),
    pub attn: AttentionVars,
    pub ln2: (Var, Var),
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Encoder parameters on a tape, plus the projected position tables sized for
/// blocks of at most `max_len` rows.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub layers: Vec<LayerVars>,
    pub final_ln: (Var, Var),
    pub max_len: usize,
}

impl EncoderVars {
    /// Computes each layer's position table on the tape so `W_R` receives gradients.
    pub fn bind<F: Real>(
        tape: &mut Tape<F>,
        params: &Bound,
        cfg: &EncoderConfig,
        max_len: usize,
    ) -> Result<Self, EncoderError> {
        let table = tape.constant(sinusoid_table(max_len, cfg.d_model));
        let mut positions = Vec::with_capacity(cfg.n_layers);
        for n in 0..cfg.n_layers {
            let w_r = params.var(&format!("encoder.layer{n}.attn.w_r"));
            positions.push(tape.matmul(table, w_r)?);
        }
        Ok(Self::with_positions(params, max_len, positions))
    }

    /// Uses precomputed position tables (one per layer).
    pub fn with_positions(params: &Bound, max_len: usize, positions: Vec<Var>) -> Self {
        let layers = positions
            .into_iter()
            .enumerate()
            .map(|(n, positions)| {
                let v = |s: &str| params.var(&format!("encoder.layer{n}.{s}"));
                LayerVars {
                    ln1: (v("ln1.gain"), v("ln1.bias")),
                    attn: AttentionVars {
                        wq: v("attn.wq"),
                        bq: v("attn.bq"),
                        wk: v("attn.wk"),
                        bk: v("attn.bk"),
                        wv: v("attn.wv"),
                        bv: v("attn.bv"),
                        wo: v("attn.wo"),
                        bo: v("attn.bo"),
                        u: v("attn.u"),
                        v: v("attn.v"),
                        positions,
                    },
                    ln2: (v("ln2.gain"), v("ln2.bias")),
                    w1: v("ffn.w1"),
                    b1: v("ffn.b1"),
                    w2: v("ffn.w2"),
                    b2: v("ffn.b2"),
                }
            })
            .collect();
        EncoderVars {
            layers,
            final_ln: (
                params.var("encoder.final_ln.gain"),
                params.var("encoder.final_ln.bias"),
            ),
            max_len,
        }
    }
}

/// Position tables `R · W_R` per layer, computed off the tape.
pub fn projected_positions<'a, F: Real>(
    get: impl Fn(&str) -> Option<&'a Tensor<F>>,
    cfg: &EncoderConfig,
    max_len: usize,
) -> Result<Vec<Tensor<F>>, EncoderError> {
    let table = sinusoid_table::<F>(max_len, cfg.d_model);
    (0..cfg.n_layers)
        .map(|n| {
            let name = format!("encoder.layer{n}.attn.w_r");
            let w = get(&name)
                .ok_or_else(|| EncoderError::Config(format!("missing parameter {name}")))?;
            Ok(table.matmul(w)?)
        })
        .collect()
}
