//! Saves model weights in the BEASTWT1 format, reloads them and shows the
//! errors raised for damaged files.

use streambeat::model::weights::{from_bytes, to_bytes, MAGIC};
use streambeat::model::ModelConfig;

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::toy();
    let params = cfg.init_params::<f32>(42);
    let bytes = to_bytes(&cfg, &params);
    let header_len = u32::from_le_bytes(bytes[8..12].try_into()?) as usize;
    println!(
        "{} tensors, {} parameters, {} bytes ({} header)",
        params.len(),
        params.num_scalars(),
        bytes.len(),
        header_len
    );

    let (cfg2, params2) = from_bytes(&bytes)?;
    let identical = cfg2 == cfg
        && params
            .iter()
            .zip(params2.iter())
            .all(|((n1, t1), (n2, t2))| n1 == n2 && t1 == t2);
    println!("reloaded bit-identical: {identical}");

    let mut bad_magic = bytes.clone();
    bad_magic[..8].copy_from_slice(b"NOTBEAST");
    println!(
        "wrong magic ({:?} expected): {}",
        std::str::from_utf8(MAGIC)?,
        from_bytes(&bad_magic).unwrap_err()
    );
    println!(
        "truncated:   {}",
        from_bytes(&bytes[..bytes.len() - 10]).unwrap_err()
    );

    let mut small = cfg.clone();
    small.encoder.d_ffn = 64;
    let mut mixed = to_bytes(&small, &small.init_params::<f32>(0));
    let header_end = 12 + u32::from_le_bytes(mixed[8..12].try_into()?) as usize;
    let data = mixed.split_off(header_end);
    let mut header: serde_json::Value = serde_json::from_slice(&mixed[12..])?;
    header["config"] = serde_json::to_value(&cfg)?;
    let header = serde_json::to_vec(&header)?;
    let mut forged = MAGIC.to_vec();
    forged.extend((header.len() as u32).to_le_bytes());
    forged.extend(header);
    forged.extend(data);
    println!("shape mismatch: {}", from_bytes(&forged).unwrap_err());
    Ok(())
}
