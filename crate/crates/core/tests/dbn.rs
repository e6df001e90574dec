mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streambeat::audio::FPS;
use streambeat::dbn::{
    build_state_space, forward_step, observation_likelihoods, predict, BeatStateSpace,
    ForwardState, TransitionModel,
};

use common::dbn::{decode_impulses, dense_matrix};

fn small_space() -> (BeatStateSpace, TransitionModel) {
    // fps 8, 60–120 BPM → τ ∈ 4..=8, 30 states
    let ss = build_state_space(60.0, 120.0, 8.0, 3).unwrap();
    assert_eq!(ss.intervals(), &[4, 5, 6, 7, 8]);
    let tm = TransitionModel::new(&ss, 2.0).unwrap();
    (ss, tm)
}

#[test]
fn two_state_chain_by_hand() {
    let ss = build_state_space(29.9, 30.1, 1.0, 2).unwrap();
    assert_eq!(ss.n_states(), 2);
    let tm = TransitionModel::new(&ss, 100.0).unwrap();
    let mut st = ForwardState::uniform(&ss);
    forward_step(&mut st, 0.8, &tm, &ss, 2);
    // Tᵀ[.5,.5] = [.5,.5]; ⊙ [0.8, 0.2] → [.4, .1] / .5
    assert!((st.p[0] - 0.8).abs() < 1e-12);
    assert!((st.p[1] - 0.2).abs() < 1e-12);
}

#[test]
fn outgoing_probabilities_sum_to_one() {
    let ss = build_state_space(55.0, 215.0, FPS, 16).unwrap();
    let tm = TransitionModel::new(&ss, 100.0).unwrap();
    let n = ss.n_states();
    for s in (0..n).step_by(7) {
        let total: f64 = (0..n).map(|s2| tm.probability(&ss, s, s2)).sum();
        assert!((total - 1.0).abs() < 1e-9, "state {s}: {total}");
    }
}

#[test]
fn sparse_recursion_equals_dense_recursion() {
    let (ss, tm) = small_space();
    assert!(ss.n_states() <= 50);
    let dense = dense_matrix(ss.intervals(), 2.0);
    for (i, row) in dense.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert!((tm.probability(&ss, i, j) - v).abs() < 1e-15);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut st = ForwardState::uniform(&ss);
    let mut naive = st.p.clone();
    for _ in 0..500 {
        let act: f64 = rng.gen();
        let pred = predict(&st.p, &ss, &tm);
        let dense_pred: Vec<f64> = (0..naive.len())
            .map(|j| (0..naive.len()).map(|i| dense[i][j] * naive[i]).sum())
            .collect();
        for (a, b) in pred.iter().zip(&dense_pred) {
            assert!((a - b).abs() < 1e-10);
        }
        forward_step(&mut st, act, &tm, &ss, 3);
        let obs = observation_likelihoods(act, &ss, 3);
        let un: Vec<f64> = dense_pred
            .iter()
            .zip(&obs)
            .map(|(p, o)| p * o.max(1e-12))
            .collect();
        let z: f64 = un.iter().sum();
        naive = un.iter().map(|v| v / z).collect();
        for (a, b) in st.p.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn stays_normalized_for_ten_thousand_steps() {
    let ss = build_state_space(55.0, 215.0, FPS, 16).unwrap();
    let tm = TransitionModel::new(&ss, 100.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut constant = ForwardState::uniform(&ss);
    let mut random = ForwardState::uniform(&ss);
    for i in 0..10_000 {
        forward_step(&mut constant, 0.5, &tm, &ss, 16);
        let act = match i % 3 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen(),
        };
        forward_step(&mut random, act, &tm, &ss, 16);
        for st in [&constant, &random] {
            let s: f64 = st.p.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "step {i}: {s}");
            assert!(st.p.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn period_twenty_impulses_settle() {
    let beats = decode_impulses(20.0, 600);
    assert!(beats.len() > 20);
    for w in beats[2..].windows(2) {
        let d = w[1] - w[0];
        assert!((19..=21).contains(&d), "{beats:?}");
    }
}

#[test]
fn impulse_trains_lock_to_their_period() {
    for bpm in [60.0, 90.0, 120.0, 180.0] {
        let period = 60.0 * FPS / bpm;
        let beats = decode_impulses(period, (40.0 * FPS) as usize);
        let settled = &beats[beats.len() / 2..];
        assert!(settled.len() > 5, "{bpm}: {beats:?}");
        for w in settled.windows(2) {
            let d = (w[1] - w[0]) as f64;
            assert!(
                (d - period).abs() <= 1.0 + 1e-9,
                "{bpm} BPM: interval {d} vs {period:.2}"
            );
        }
    }
}
