//! Scores estimated beats against references with the ±70 ms F-measure,
//! and prints the latency of a few block layouts.

use streambeat::encoder::BlockConfig;
use streambeat::eval::{
    f_measure, latency_ms, parse_annotations, score_annotations, DEFAULT_TOLERANCE_S,
};

fn main() -> anyhow::Result<()> {
    let r = f_measure(&[0.5, 1.0, 1.5], &[0.52, 1.09, 1.48], DEFAULT_TOLERANCE_S);
    println!(
        "three beats, one 90 ms late: F1 {:.4}, P {:.3}, R {:.3}",
        r.f1, r.precision, r.recall
    );

    let reference = parse_annotations("0.50\t1\n1.00\t2\n1.50\t3\n2.00\t4\n2.50\t1\n3.00\t2\n")?;
    let estimate = parse_annotations("0.53\t1\n1.02\t2\n1.49\t3\n2.04\t4\n2.51\t2\n3.10\t3\n")?;
    let s = score_annotations(&reference, &estimate, DEFAULT_TOLERANCE_S);
    println!("beats:     {}", serde_json::to_string(&s.beats)?);
    println!("downbeats: {}", serde_json::to_string(&s.downbeats)?);

    for n in [1, 2, 4, 16] {
        let b = BlockConfig::new(256, n, n)?;
        println!("N_c = N_r = {n:>2}: {} ms", latency_ms(&b));
    }
    Ok(())
}
