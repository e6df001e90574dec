use super::relpos::block_delta_index;
use super::{AttentionVars, EncoderError};
use crate::tensor::{Real, RelScoreLayout, Tape, Var};

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[n_queries + 1, d]`: the query rows followed by the context row.
    pub out: Var,
    /// Softmax weights per head, `[n_queries + 1, len + 1]`.
    pub weights: Vec<Var>,
}

/// Multi-head relative-position attention over one block.
///
/// `z` holds the (normalized) block rows `[len, d]`; rows `query_from..len` and
/// the query context `c_q` form the queries, all of `z` plus the previous
/// block's context `c_kv` form the keys and values. The context rows sit at
/// relative offset 0 from every other position.
#[allow(clippy::too_many_arguments)]
pub fn block_attention<F: Real>(
    tape: &mut Tape<F>,
    z: Var,
    query_from: usize,
    c_q: Var,
    c_kv: Var,
    attn: &AttentionVars,
    n_heads: usize,
    max_len: usize,
) -> Result<AttentionOutput, EncoderError> {
    let [len, d] = *tape.shape(z) else {
        return Err(EncoderError::Config("block rows must be a matrix".into()));
    };
    if query_from >= len {
        return Err(EncoderError::Config(format!(
            "block of {len} rows has no queries after {query_from}"
        )));
    }
    if d % n_heads != 0 {
        return Err(EncoderError::Config(format!(
            "{d} columns do not split into {n_heads} heads"
        )));
    }
    let dh = d / n_heads;
    let q_rows = tape.slice_rows(z, query_from..len)?;
    let xq = tape.concat(&[q_rows, c_q], 0)?;
    let xk = tape.concat(&[z, c_kv], 0)?;
    let q = tape.linear(xq, attn.wq, attn.bq)?;
    let k = tape.linear(xk, attn.wk, attn.bk)?;
    let v = tape.linear(xk, attn.wv, attn.bv)?;
    let delta_index = block_delta_index(query_from, len, max_len)?;
    let n_queries = len - query_from + 1;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let layout = RelScoreLayout {
            n_queries,
            n_keys: len + 1,
            head_offset: h * dh,
            head_dim: dh,
            scale,
            delta_index: delta_index.clone(),
        };
        let scores = tape.rel_scores(q, k, attn.positions, attn.u, attn.v, layout)?;
        let w = tape.softmax_rows(scores)?;
        let vh = tape.slice_cols(v, h * dh..(h + 1) * dh)?;
        heads.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let cat = tape.concat(&heads, 1)?;
    let out = tape.linear(cat, attn.wo, attn.bo)?;
    Ok(AttentionOutput { out, weights })
}
