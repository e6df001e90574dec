use streambeat::dbn::{BeatDecoder, DbnConfig};
use streambeat::model::ActivationFrame;

/// Dense transition matrix built straight from the lattice definition.
pub fn dense_matrix(intervals: &[usize], lambda: f64) -> Vec<Vec<f64>> {
    let states: Vec<(usize, usize)> = intervals
        .iter()
        .flat_map(|&tau| (0..tau).map(move |ph| (tau, ph)))
        .collect();
    let n = states.len();
    let mut m = vec![vec![0.0; n]; n];
    for (i, &(tau, ph)) in states.iter().enumerate() {
        if ph + 1 < tau {
            let j = states.iter().position(|&s| s == (tau, ph + 1)).unwrap();
            m[i][j] = 1.0;
        } else {
            let w: Vec<f64> = intervals
                .iter()
                .map(|&t2| (-lambda * (t2 as f64 / tau as f64).ln().abs()).exp())
                .collect();
            let z: f64 = w.iter().sum();
            for (k, &t2) in intervals.iter().enumerate() {
                let j = states.iter().position(|&s| s == (t2, 0)).unwrap();
                m[i][j] = w[k] / z;
            }
        }
    }
    m
}

/// Emitted beat frames for an ideal impulse train.
pub fn decode_impulses(period: f64, n_frames: usize) -> Vec<usize> {
    let mut dec = BeatDecoder::new(DbnConfig::default()).unwrap();
    let mut next = 0.0f64;
    let mut out = Vec::new();
    for t in 0..n_frames {
        let hit = (next.round() as usize) == t;
        if hit {
            next += period;
        }
        let f = ActivationFrame {
            frame_index: t,
            beat: if hit { 1.0 } else { 0.0 },
            downbeat: 0.0,
        };
        if let Some(b) = dec.push(&f) {
            out.push(b.frame);
        }
    }
    out
}
