//! Feeds the online beat decoder an impulse train and prints the beats it
//! emits along with the bar position from downbeat activations. The first
//! few decisions may sit on the double-tempo path before the forward
//! probabilities settle on the true period.

use streambeat::dbn::{BeatDecoder, DbnConfig};
use streambeat::model::ActivationFrame;

fn main() -> anyhow::Result<()> {
    let cfg = DbnConfig::default();
    let mut decoder = BeatDecoder::new(cfg.clone())?;
    let ss = decoder.state_space();
    println!(
        "{:.0}-{:.0} BPM: {} tempo rows, {} states, intervals {}..={} frames",
        cfg.min_bpm,
        cfg.max_bpm,
        ss.n_rows(),
        ss.n_states(),
        ss.intervals()[0],
        ss.intervals()[ss.n_rows() - 1]
    );

    // 100 BPM is a beat every 25.84 frames; every fourth beat is a downbeat.
    let period = cfg.fps * 60.0 / 100.0;
    let beat_frames: Vec<usize> = (0..40)
        .map(|k| (4.0 + k as f64 * period).round() as usize)
        .collect();
    let n_frames = beat_frames.last().unwrap() + 10;
    for t in 0..n_frames {
        let k = beat_frames.iter().position(|&b| b == t);
        let frame = ActivationFrame {
            frame_index: t,
            beat: if k.is_some() { 0.95 } else { 0.02 },
            downbeat: if k.is_some_and(|k| k % 4 == 0) {
                0.9
            } else {
                0.02
            },
        };
        if let Some(b) = decoder.push(&frame) {
            let ib = (b.time_s * cfg.fps).round() as i64;
            let nearest = beat_frames
                .iter()
                .map(|&f| (f as i64 - ib).abs())
                .min()
                .unwrap();
            println!(
                "beat at {:>6.3} s  bar position {}  off by {nearest} frames",
                b.time_s, b.beat_number
            );
        }
    }
    Ok(())
}
