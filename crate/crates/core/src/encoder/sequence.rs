use super::blocks::{chunk_blocks, BlockConfig};
use super::layer::{encode_block, BlockInputs};
use super::{EncoderConfig, EncoderError, EncoderVars, Mode};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct SequenceOutputs {
    /// Final-normalized encoder output, `[T, d]`.
    pub centers: Var,
    /// Output of each layer (before the final norm), `[T, d]` each.
    pub layer_outputs: Vec<Var>,
}

/// Rows `range` of a history stored as consecutive chunks of `chunk` rows.
fn gather<F: Real>(
    tape: &mut Tape<F>,
    chunks: &[Var],
    chunk: usize,
    range: std::ops::Range<usize>,
) -> Result<Var, EncoderError> {
    let mut parts = Vec::new();
    for i in range.start / chunk..range.end.div_ceil(chunk) {
        let lo = range.start.max(i * chunk) - i * chunk;
        let hi = range.end.min((i + 1) * chunk) - i * chunk;
        parts.push(tape.slice_rows(chunks[i], lo..hi)?);
    }
    Ok(tape.concat(&parts, 0)?)
}

/// Encodes a whole `[T, d]` sequence block by block on one tape, so gradients
/// flow through the carried context and left-context history. Produces exactly
/// the values [`super::EncoderStream`] emits for the same frames.
pub fn encode_sequence<F: Real>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    block: &BlockConfig,
    frames: Var,
    mode: Mode,
) -> Result<SequenceOutputs, EncoderError> {
    let [total, d] = *tape.shape(frames) else {
        return Err(EncoderError::Config("encoder input must be [T, d]".into()));
    };
    if d != cfg.d_model || total == 0 {
        return Err(EncoderError::Config(format!(
            "encoder input is [{total}, {d}], expected [T > 0, {}]",
            cfg.d_model
        )));
    }
    if vars.max_len < block.block_len() {
        return Err(EncoderError::Config(format!(
            "position table for {} rows is smaller than blocks of {}",
            vars.max_len,
            block.block_len()
        )));
    }
    let n_layers = vars.layers.len();
    let zero = tape.constant(Tensor::zeros(&[1, d]));
    let mut prev_context = vec![zero; n_layers];
    // history[n]: center chunks entering layer n, for n >= 1
    let mut history: Vec<Vec<Var>> = vec![Vec::new(); n_layers];
    let mut centers = Vec::new();
    let mut layer_outputs: Vec<Vec<Var>> = vec![Vec::new(); n_layers];

    for span in chunk_blocks(total, block) {
        let mut left = Vec::with_capacity(n_layers);
        for (n, chunks) in history.iter().enumerate() {
            left.push(if span.left.is_empty() {
                None
            } else if n == 0 {
                Some(tape.slice_rows(frames, span.left.clone())?)
            } else {
                Some(gather(tape, chunks, block.n_center, span.left.clone())?)
            });
        }
        let current = tape.slice_rows(frames, span.center.start..span.right.end)?;
        let out = encode_block(
            tape,
            vars,
            cfg,
            &BlockInputs {
                left,
                current,
                n_center: span.center.len(),
                prev_context,
                block_index: span.index,
            },
            mode,
        )?;
        for n in 1..n_layers {
            history[n].push(out.layer_centers[n]);
        }
        for (n, outs) in layer_outputs.iter_mut().enumerate() {
            outs.push(out.layer_centers[n + 1]);
        }
        centers.push(out.centers);
        prev_context = out.contexts;
    }

    let centers = tape.concat(&centers, 0)?;
    let layer_outputs = layer_outputs
        .iter()
        .map(|parts| tape.concat(parts, 0))
        .collect::<Result<_, _>>()?;
    Ok(SequenceOutputs {
        centers,
        layer_outputs,
    })
}
