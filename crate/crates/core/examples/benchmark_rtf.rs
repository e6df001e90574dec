//! Real-time factor of the full streaming pipeline for several block layouts.
//!
//! cargo run --release --example benchmark_rtf -- [model.bin]
//!
//! Without weights a seeded untrained toy model is used; speed does not
//! depend on the weight values.

use std::path::Path;

use streambeat::dbn::DbnConfig;
use streambeat::encoder::BlockConfig;
use streambeat::model::{Model, ModelConfig};
use streambeat::pipeline::measure_rtf;
use streambeat::train::{gen_click_track, SynthOptions};

fn main() -> anyhow::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => Model::load(Path::new(&p))?,
        None => {
            let cfg = ModelConfig::toy();
            Model::new(cfg.clone(), cfg.init_params(0))?
        }
    };
    let clip = gen_click_track(120.0, 4, 30.0, 0, &SynthOptions::default()).audio;
    for (nc, nr) in [(1, 1), (4, 4), (16, 16)] {
        let block = BlockConfig::new(64, nc, nr)?;
        let r = measure_rtf(&model, &clip, block, &DbnConfig::default(), 5)?;
        println!(
            "N_c {nc:>2} N_r {nr:>2}: latency {:>4} ms, RTF first {:.4}, median {:.4}",
            r.latency_ms, r.first_run, r.median
        );
    }
    Ok(())
}
