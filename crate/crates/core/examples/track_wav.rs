//! Tracks beats in a WAV file by streaming it through a trained model.
//!
//! cargo run --release --example track_wav -- [model.bin] [input.wav] [n_center]
//!
//! Without an input file a 20 s click track at 128 BPM is rendered and used.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use streambeat::audio::write_wav;
use streambeat::dbn::DbnConfig;
use streambeat::encoder::BlockConfig;
use streambeat::eval::latency_ms;
use streambeat::model::Model;
use streambeat::pipeline::track_reader;
use streambeat::train::{gen_click_track, SynthOptions};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model_path = PathBuf::from(args.first().map_or("toy_model.bin", String::as_str));
    let model = Model::load(&model_path).with_context(|| {
        format!(
            "loading {} (run the train_toy example first)",
            model_path.display()
        )
    })?;
    let n_center = args.get(2).map_or(Ok(16), |s| s.parse())?;
    let block = BlockConfig::new(64, n_center, n_center)?;

    let wav = match args.get(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let clip = gen_click_track(128.0, 4, 20.0, 7, &SynthOptions::default());
            let p = std::env::temp_dir().join("streambeat_click_128.wav");
            write_wav(&p, &clip.audio)?;
            p
        }
    };
    println!("latency: {} ms", latency_ms(&block));
    let mut last_report = 0;
    let out = track_reader(
        &model,
        BufReader::new(File::open(&wav)?),
        block,
        DbnConfig::default(),
        4096,
        |p| {
            if p.samples - last_report >= 5 * 44_100 {
                last_report = p.samples;
                println!(
                    "  {:>5.1} s in, {} activation frames out",
                    p.samples as f64 / 44_100.0,
                    p.activations
                );
            }
        },
    )?;
    for b in &out.beats {
        println!("{:.3}\t{}", b.time_s, b.beat_number);
    }
    Ok(())
}
