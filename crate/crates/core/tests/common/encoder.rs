use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streambeat::encoder::{
    encode_sequence, BlockConfig, EncoderConfig, EncoderStream, EncoderVars, Mode,
};
use streambeat::params::{ParamStore, SharedParams};
use streambeat::tensor::{Real, Tape, Tensor};

pub fn toy() -> EncoderConfig {
    EncoderConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ffn: 16,
        dropout: 0.1,
    }
}

/// Initialized parameters with every tensor jittered so no term is trivially zero.
pub fn params<F: Real>(cfg: &EncoderConfig, seed: u64) -> ParamStore<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    cfg.init_params(&mut rng, &mut store);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = *v + F::lit(rng.gen_range(-0.2..0.2));
        }
    }
    store
}

pub fn frames<F: Real>(t: usize, d: usize, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[t, d], |_| F::lit(rng.gen_range(-1.5..1.5)))
}

pub fn offline(
    store: &ParamStore<f32>,
    cfg: &EncoderConfig,
    block: &BlockConfig,
    x: &Tensor<f32>,
) -> Tensor<f32> {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, false);
    let vars = EncoderVars::bind(&mut tape, &b, cfg, block.block_len()).unwrap();
    let x = tape.constant(x.clone());
    let out = encode_sequence(&mut tape, &vars, cfg, block, x, Mode::Infer).unwrap();
    tape.value(out.centers).clone()
}

pub fn streamed(
    store: &ParamStore<f32>,
    cfg: &EncoderConfig,
    block: &BlockConfig,
    x: &Tensor<f32>,
) -> Vec<Vec<f32>> {
    let shared = Arc::new(SharedParams::from(store.clone()));
    let mut s = EncoderStream::new(shared, cfg.clone(), *block).unwrap();
    let mut out = Vec::new();
    for t in 0..x.rows() {
        out.extend(s.push(x.row(t)).unwrap());
    }
    out.extend(s.finish().unwrap());
    out
}

// Independent dense multi-head attention over the rows of `x`.
pub fn dense_mha(
    x: &[Vec<f64>],
    w: &[Vec<Vec<f64>>; 4],
    b: &[Vec<f64>; 4],
    n_heads: usize,
) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let dh = d / n_heads;
    let proj = |m: usize| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..d)
                    .map(|j| b[m][j] + (0..d).map(|i| row[i] * w[m][i][j]).sum::<f64>())
                    .collect()
            })
            .collect()
    };
    let (q, k, v) = (proj(0), proj(1), proj(2));
    let n = x.len();
    let mut cat = vec![vec![0.0; d]; n];
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    cat.iter()
        .map(|row| {
            (0..d)
                .map(|j| b[3][j] + (0..d).map(|i| row[i] * w[3][i][j]).sum::<f64>())
                .collect()
        })
        .collect()
}
