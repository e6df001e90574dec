//! Shows the log-spaced filterbank and checks that streaming feature
//! extraction matches whole-clip extraction frame for frame.

use streambeat::audio::{FeatureExtractor, FPS, HOP, N_BANDS};
use streambeat::train::{gen_click_track, SynthOptions};

fn main() {
    let ex = FeatureExtractor::new();
    let fb = ex.filterbank();
    println!(
        "{} bands, {} FFT bins, {:.3} frames/s",
        fb.n_bands(),
        fb.n_bins(),
        FPS
    );
    for b in [0, 1, 2, 32, 64, 96, 126, 127] {
        println!("  band {b:>3}: center {:>8.1} Hz", fb.center_hz(b));
    }

    let clip = gen_click_track(120.0, 4, 4.0, 1, &SynthOptions::default());
    let offline = ex.extract(&clip.audio);
    let mut stream = ex.stream();
    let mut streamed = Vec::new();
    for piece in clip.audio.samples().chunks(777) {
        streamed.extend(stream.push(piece));
    }
    let max_diff = offline
        .iter()
        .zip(&streamed)
        .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()))
        .fold(0.0f32, f32::max);
    println!(
        "{} samples -> {} frames offline, {} streamed (one per complete hop of {HOP}), max diff {max_diff:e}",
        clip.audio.len(),
        offline.len(),
        streamed.len()
    );

    // Energy per frame peaks on the clicks (every 0.5 s).
    for f in offline.iter().take(24) {
        let energy: f32 = f.values.iter().sum::<f32>() / N_BANDS as f32;
        println!(
            "  t = {:.3} s  {}",
            f.time_s(),
            "#".repeat((energy * 40.0).min(60.0) as usize)
        );
    }
}
