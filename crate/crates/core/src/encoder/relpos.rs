//! Sinusoid relative-position table and score layouts.

use crate::tensor::{rel_scores_forward, Real, RelScoreLayout, Tensor};

use super::EncoderError;

/// `[2·max_len − 1, d]` table whose row `r` encodes offset `δ = r − (max_len − 1)`:
/// even columns `sin(δ·ω_k)`, odd columns `cos(δ·ω_k)`, `ω_k = 10000^(−2k/d)`.
pub fn sinusoid_table<F: Real>(max_len: usize, d: usize) -> Tensor<F> {
    let rows = 2 * max_len.max(1) - 1;
    let center = max_len.max(1) as f64 - 1.0;
    Tensor::from_fn(&[rows, d], |i| {
        let (r, c) = (i / d, i % d);
        let delta = r as f64 - center;
        let k = (c / 2) as f64;
        let omega = 10_000f64.powf(-2.0 * k / d as f64);
        F::lit(if c % 2 == 0 {
            (delta * omega).sin()
        } else {
            (delta * omega).cos()
        })
    })
}

/// Table row for offset `delta`, or a range error if the table cannot hold it.
pub fn table_row(delta: i64, max_len: usize) -> Result<u32, EncoderError> {
    let r = delta + max_len as i64 - 1;
    if r < 0 || r >= (2 * max_len - 1) as i64 {
        return Err(EncoderError::Range(format!(
            "relative offset {delta} outside table for block length {max_len}"
        )));
    }
    Ok(r as u32)
}

/// Offsets for a block of `len` rows whose queries are rows `query_from..len`
/// plus an appended context row, against keys `0..len` plus a context row.
/// The context position has no temporal location and sits at offset 0 from
/// everything.
pub fn block_delta_index(
    query_from: usize,
    len: usize,
    max_len: usize,
) -> Result<Vec<u32>, EncoderError> {
    let q_pos: Vec<Option<i64>> = (query_from..len)
        .map(|i| Some(i as i64))
        .chain([None])
        .collect();
    let k_pos: Vec<Option<i64>> = (0..len).map(|j| Some(j as i64)).chain([None]).collect();
    delta_index(&q_pos, &k_pos, max_len)
}

/// `None` marks a context position.
pub fn delta_index(
    q_pos: &[Option<i64>],
    k_pos: &[Option<i64>],
    max_len: usize,
) -> Result<Vec<u32>, EncoderError> {
    let mut out = Vec::with_capacity(q_pos.len() * k_pos.len());
    for qi in q_pos {
        for kj in k_pos {
            let delta = match (qi, kj) {
                (Some(i), Some(j)) => i - j,
                _ => 0,
            };
            out.push(table_row(delta, max_len)?);
        }
    }
    Ok(out)
}

/// Relative-position parameters of one attention layer.
#[derive(Debug, Clone)]
pub struct RelPosParams<F: Real = f32> {
    /// `[d, d]` projection of sinusoid rows into location-based keys.
    pub w_r: Tensor<F>,
    /// Query content bias, `[n_heads · d_head]`.
    pub u: Tensor<F>,
    /// Query position bias, `[n_heads · d_head]`.
    pub v: Tensor<F>,
    pub n_heads: usize,
    pub max_len: usize,
}

impl<F: Real> RelPosParams<F> {
    pub fn d_model(&self) -> usize {
        self.w_r.shape()[0]
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.n_heads
    }

    /// `R · W_R` for every offset in the table.
    pub fn projected_table(&self) -> Tensor<F> {
        sinusoid_table::<F>(self.max_len, self.d_model())
            .matmul(&self.w_r)
            .expect("square projection")
    }
}

/// Unscaled relative-position scores of one head:
/// `A[i,j] = q_i·k_j + q_i·p_{i−j} + u·k_j + v·p_{i−j}` with `p_δ = R_δ W_R`
/// restricted to the head's columns. `q` is `[Lq, d_head]`, `k` is `[Lk, d_head]`;
/// positions are absolute indices, `None` for the context row.
pub fn rel_attention_scores<F: Real>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    relpos: &RelPosParams<F>,
    head: usize,
    q_pos: &[Option<i64>],
    k_pos: &[Option<i64>],
) -> Result<Tensor<F>, EncoderError> {
    let dh = relpos.d_head();
    if q.shape() != [q_pos.len(), dh] || k.shape() != [k_pos.len(), dh] || head >= relpos.n_heads {
        return Err(EncoderError::Config(
            "score operands do not match head layout".into(),
        ));
    }
    let index = delta_index(q_pos, k_pos, relpos.max_len)?;
    let full = relpos.projected_table();
    let h0 = head * dh;
    let p_head: Vec<F> = (0..full.rows())
        .flat_map(|r| full.row(r)[h0..h0 + dh].to_vec())
        .collect();
    let layout = RelScoreLayout {
        n_queries: q_pos.len(),
        n_keys: k_pos.len(),
        head_offset: 0,
        head_dim: dh,
        scale: 1.0,
        delta_index: index,
    };
    let out = rel_scores_forward(
        q.data(),
        k.data(),
        &p_head,
        &relpos.u.data()[h0..h0 + dh],
        &relpos.v.data()[h0..h0 + dh],
        dh,
        &layout,
    );
    Ok(Tensor::new(vec![q_pos.len(), k_pos.len()], out)?)
}
