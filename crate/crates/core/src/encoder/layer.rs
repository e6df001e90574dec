use super::attention::block_attention;
use super::{EncoderConfig, EncoderError, EncoderVars, Mode};
use crate::tensor::{Real, Tape, Var};

/// Everything one block needs besides the parameters.
#[derive(Debug, Clone)]
pub struct BlockInputs {
    /// Left-context rows entering each layer (`None` when there are none yet).
    pub left: Vec<Option<Var>>,
    /// Center followed by right look-ahead rows entering layer 0.
    pub current: Var,
    /// Number of center rows at the top of `current`.
    pub n_center: usize,
    /// Key/value context row per layer, carried from the previous block
    /// (zeros for the first block), each `[1, d]`.
    pub prev_context: Vec<Var>,
    pub block_index: usize,
}

#[derive(Debug, Clone)]
pub struct BlockOutputs {
    /// Center rows after the final layer norm, `[n_center, d]`.
    pub centers: Var,
    /// Center rows entering each layer, then leaving the last one:
    /// `n_layers + 1` entries. Entry `n` is the next blocks' left context for layer `n`.
    pub layer_centers: Vec<Var>,
    /// Query context row used at each layer; the next block's key context.
    pub contexts: Vec<Var>,
    /// Attention weights per layer and head.
    pub attention: Vec<Vec<Var>>,
}

/// Dropout call sites must not collide across blocks, layers and sublayers.
fn site(block: usize, layer: usize, sub: u64) -> u64 {
    ((block as u64) << 20) | ((layer as u64) << 4) | sub
}

/// Runs one contextual block through every layer.
pub fn encode_block<F: Real>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    input: &BlockInputs,
    mode: Mode,
) -> Result<BlockOutputs, EncoderError> {
    let n_layers = vars.layers.len();
    if input.left.len() != n_layers || input.prev_context.len() != n_layers {
        return Err(EncoderError::Config(format!(
            "block inputs cover {} / {} layers, encoder has {n_layers}",
            input.left.len(),
            input.prev_context.len()
        )));
    }
    let n_rows = tape.shape(input.current)[0];
    if input.n_center == 0 || input.n_center > n_rows {
        return Err(EncoderError::Config(format!(
            "{} center rows requested from a block of {n_rows}",
            input.n_center
        )));
    }
    let train = mode.is_train();
    let mut cur = input.current;
    let mut ctx_out: Option<Var> = None;
    let mut layer_centers = vec![tape.slice_rows(cur, 0..input.n_center)?];
    let mut contexts = Vec::with_capacity(n_layers);
    let mut attention = Vec::with_capacity(n_layers);

    for (n, lv) in vars.layers.iter().enumerate() {
        let (x_all, query_from) = match input.left[n] {
            Some(left) => (tape.concat(&[left, cur], 0)?, tape.shape(left)[0]),
            None => (cur, 0),
        };
        let len = tape.shape(x_all)[0];
        if len > vars.max_len {
            return Err(EncoderError::Range(format!(
                "block of {len} rows exceeds position table for {} rows",
                vars.max_len
            )));
        }
        let c_q = match ctx_out {
            Some(c) => c,
            None => tape.mean_rows(x_all)?,
        };
        let z = tape.layernorm(x_all, lv.ln1.0, lv.ln1.1)?;
        let cqn = tape.layernorm(c_q, lv.ln1.0, lv.ln1.1)?;
        let ckvn = tape.layernorm(input.prev_context[n], lv.ln1.0, lv.ln1.1)?;
        let att = block_attention(
            tape,
            z,
            query_from,
            cqn,
            ckvn,
            &lv.attn,
            cfg.n_heads,
            vars.max_len,
        )?;
        let a = tape.dropout(
            att.out,
            cfg.dropout,
            mode.key(site(input.block_index, n, 0)),
            train,
        )?;
        let q_rows = tape.slice_rows(x_all, query_from..len)?;
        let res = tape.concat(&[q_rows, c_q], 0)?;
        let h = tape.add(res, a)?;

        let h2 = tape.layernorm(h, lv.ln2.0, lv.ln2.1)?;
        let f = tape.linear(h2, lv.w1, lv.b1)?;
        let f = tape.relu(f)?;
        let f = tape.linear(f, lv.w2, lv.b2)?;
        let f = tape.dropout(
            f,
            cfg.dropout,
            mode.key(site(input.block_index, n, 1)),
            train,
        )?;
        let out = tape.add(h, f)?;

        cur = tape.slice_rows(out, 0..n_rows)?;
        ctx_out = Some(tape.slice_rows(out, n_rows..n_rows + 1)?);
        layer_centers.push(tape.slice_rows(cur, 0..input.n_center)?);
        contexts.push(c_q);
        attention.push(att.weights);
    }

    let last = *layer_centers.last().expect("at least the input entry");
    let centers = tape.layernorm(last, vars.final_ln.0, vars.final_ln.1)?;
    Ok(BlockOutputs {
        centers,
        layer_centers,
        contexts,
        attention,
    })
}
