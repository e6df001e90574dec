use std::collections::VecDeque;
use std::sync::Arc;

use super::blocks::BlockConfig;
use super::layer::{encode_block, BlockInputs};
use super::{projected_positions, EncoderConfig, EncoderError, EncoderVars, Mode};
use crate::params::SharedParams;
use crate::tensor::{Tape, Tensor};

/// What the encoder carries from one block to the next: the left-context rows
/// entering each layer and the context row each layer used as its query.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    history: Vec<VecDeque<Vec<f32>>>,
    context: Vec<Vec<f32>>,
    next_block: usize,
}

impl StreamState {
    pub fn new(cfg: &EncoderConfig) -> Self {
        StreamState {
            history: vec![VecDeque::new(); cfg.n_layers],
            context: vec![vec![0.0; cfg.d_model]; cfg.n_layers],
            next_block: 0,
        }
    }

    pub fn next_block(&self) -> usize {
        self.next_block
    }

    /// Left-context rows held for layer `n`.
    pub fn history_len(&self, n: usize) -> usize {
        self.history[n].len()
    }

    pub fn context(&self, n: usize) -> &[f32] {
        &self.context[n]
    }
}

/// Block-synchronous streaming encoder. Frames go in one at a time; center
/// frames come out once their block's look-ahead has arrived.
#[derive(Debug, Clone)]
pub struct EncoderStream {
    params: Arc<SharedParams<f32>>,
    positions: Vec<Arc<Tensor<f32>>>,
    cfg: EncoderConfig,
    block: BlockConfig,
    state: StreamState,
    pending: VecDeque<Vec<f32>>,
}

impl EncoderStream {
    pub fn new(
        params: Arc<SharedParams<f32>>,
        cfg: EncoderConfig,
        block: BlockConfig,
    ) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let positions = projected_positions(|n| params.get(n), &cfg, block.block_len())?
            .into_iter()
            .map(Arc::new)
            .collect();
        Ok(EncoderStream {
            state: StreamState::new(&cfg),
            params,
            positions,
            cfg,
            block,
            pending: VecDeque::new(),
        })
    }

    pub fn block_config(&self) -> &BlockConfig {
        &self.block
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    /// Frames received but not yet emitted.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Adds one encoder-input frame and returns any center frames it completes.
    pub fn push(&mut self, frame: &[f32]) -> Result<Vec<Vec<f32>>, EncoderError> {
        if frame.len() != self.cfg.d_model {
            return Err(EncoderError::Config(format!(
                "frame width {} != d_model {}",
                frame.len(),
                self.cfg.d_model
            )));
        }
        self.pending.push_back(frame.to_vec());
        let need = self.block.n_center + self.block.n_right;
        if self.pending.len() < need {
            return Ok(Vec::new());
        }
        self.flush_block(self.block.n_center)
    }

    /// Processes the remaining frames with truncated look-ahead.
    pub fn finish(&mut self) -> Result<Vec<Vec<f32>>, EncoderError> {
        let mut out = Vec::new();
        while !self.pending.is_empty() {
            let n_center = self.block.n_center.min(self.pending.len());
            out.extend(self.flush_block(n_center)?);
        }
        Ok(out)
    }

    fn flush_block(&mut self, n_center: usize) -> Result<Vec<Vec<f32>>, EncoderError> {
        let take = (n_center + self.block.n_right).min(self.pending.len());
        let frames: Vec<Vec<f32>> = self.pending.iter().take(take).cloned().collect();
        let out = self.stream_step(self.state.next_block, &frames, n_center)?;
        self.pending.drain(..n_center);
        Ok(out)
    }

    /// Encodes block `block_index` from its center and right frames
    /// (`frames[..n_center]` are the centers). Blocks must arrive in order.
    pub fn stream_step(
        &mut self,
        block_index: usize,
        frames: &[Vec<f32>],
        n_center: usize,
    ) -> Result<Vec<Vec<f32>>, EncoderError> {
        if block_index != self.state.next_block {
            return Err(EncoderError::Contract(format!(
                "expected block {}, got {block_index}",
                self.state.next_block
            )));
        }
        if n_center == 0 || n_center > frames.len() || frames.len() > n_center + self.block.n_right
        {
            return Err(EncoderError::Config(format!(
                "{} frames with {n_center} centers do not fit the block layout",
                frames.len()
            )));
        }
        let d = self.cfg.d_model;
        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape);
        let positions = self
            .positions
            .iter()
            .map(|p| tape.constant_shared(Arc::clone(p)))
            .collect();
        let vars = EncoderVars::with_positions(&bound, self.block.block_len(), positions);

        let mut left = Vec::with_capacity(self.cfg.n_layers);
        for h in &self.state.history {
            left.push(if h.is_empty() {
                None
            } else {
                let rows: Vec<&Vec<f32>> = h.iter().collect();
                Some(tape.constant(Tensor::from_rows(&rows)?))
            });
        }
        let current = tape.constant(Tensor::from_rows(frames)?);
        let prev_context = self
            .state
            .context
            .iter()
            .map(|c| tape.constant(Tensor::new(vec![1, d], c.clone()).expect("context width")))
            .collect();
        let out = encode_block(
            &mut tape,
            &vars,
            &self.cfg,
            &BlockInputs {
                left,
                current,
                n_center,
                prev_context,
                block_index,
            },
            Mode::Infer,
        )?;

        for n in 0..self.cfg.n_layers {
            let rows = tape.value(out.layer_centers[n]);
            let hist = &mut self.state.history[n];
            for r in 0..rows.rows() {
                hist.push_back(rows.row(r).to_vec());
            }
            while hist.len() > self.block.n_left {
                hist.pop_front();
            }
            self.state.context[n] = tape.value(out.contexts[n]).data().to_vec();
        }
        self.state.next_block += 1;
        let centers = tape.value(out.centers);
        Ok((0..centers.rows())
            .map(|r| centers.row(r).to_vec())
            .collect())
    }
}
