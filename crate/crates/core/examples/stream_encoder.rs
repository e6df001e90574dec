//! Streams frames through the block-processing encoder one at a time and
//! confirms the output equals offline block-wise encoding exactly.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streambeat::encoder::{
    encode_sequence, BlockConfig, EncoderConfig, EncoderStream, EncoderVars, Mode,
};
use streambeat::params::{ParamStore, SharedParams};
use streambeat::tensor::{Tape, Tensor};

fn main() -> anyhow::Result<()> {
    let cfg = EncoderConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ffn: 64,
        dropout: 0.1,
    };
    let block = BlockConfig::new(32, 4, 2)?;
    let mut params = ParamStore::<f32>::new();
    cfg.init_params(&mut ChaCha8Rng::seed_from_u64(5), &mut params);
    let shared = Arc::new(SharedParams::from(params.clone()));

    let n_frames = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames: Vec<Vec<f32>> = (0..n_frames)
        .map(|_| (0..cfg.d_model).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut stream = EncoderStream::new(shared, cfg.clone(), block)?;
    let mut streamed = Vec::new();
    for (t, f) in frames.iter().enumerate() {
        let out = stream.push(f)?;
        if !out.is_empty() {
            println!(
                "after frame {t:>2}: {} outputs (frames {}..{}), {} frames buffered",
                out.len(),
                streamed.len(),
                streamed.len() + out.len(),
                stream.pending()
            );
        }
        streamed.extend(out);
    }
    streamed.extend(stream.finish()?);

    let mut tape = Tape::<f32>::new();
    let bound = params.bind(&mut tape, false);
    let vars = EncoderVars::bind(&mut tape, &bound, &cfg, block.block_len())?;
    let x = tape.constant(Tensor::from_rows(&frames)?);
    let offline = encode_sequence(&mut tape, &vars, &cfg, &block, x, Mode::Infer)?;
    let offline = tape.value(offline.centers);

    let identical = streamed
        .iter()
        .enumerate()
        .all(|(t, row)| row.as_slice() == offline.row(t));
    println!(
        "{} streamed frames, offline {:?}, bit-identical: {identical}",
        streamed.len(),
        offline.shape()
    );
    println!(
        "state after the stream: {} history rows per layer (cap {})",
        stream.state().history_len(0),
        block.n_left
    );
    Ok(())
}
