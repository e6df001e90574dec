//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streambeat::audio::{FeatureExtractor, FPS};
use streambeat::dbn::{
    build_state_space, forward_step, observation_likelihoods, predict, ForwardState,
    TransitionModel,
};
use streambeat::encoder::{
    block_attention, rel_attention_scores, BlockConfig, EncoderConfig, EncoderVars, RelPosParams,
};
use streambeat::eval::{f_measure, latency_ms, DEFAULT_TOLERANCE_S};
use streambeat::model::weights::{from_bytes, to_bytes, WeightsError, MAGIC};
use streambeat::model::{Model, ModelConfig};
use streambeat::params::ParamStore;
use streambeat::pipeline::{evaluate_corpus, measure_rtf, thread_cap_from_env};
use streambeat::tensor::{Tape, Tensor};
use streambeat::train::{
    examples_from_clip, gen_click_track, gen_corpus, train, CorpusSpec, SynthOptions, TrainConfig,
};

use common::dbn::{decode_impulses, dense_matrix};
use common::encoder::{dense_mha, frames, offline, params, streamed, toy};
use common::grad::{op_checks, toy_model_check, TOL_F32, TOL_F64, TOL_MODEL_F32};
use common::matching::optimal_matches;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_block(rng: &mut ChaCha8Rng) -> BlockConfig {
    BlockConfig::new(
        rng.gen_range(0..24),
        rng.gen_range(1..9),
        rng.gen_range(0..9),
    )
    .unwrap()
}

fn streaming_causality() -> Outcome {
    let start = Instant::now();
    let cfg = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut invariant, mut sensitive) = (0, 0);
    for case in 0..50 {
        let store = params::<f32>(&cfg, case);
        let block = random_block(&mut rng);
        let t = rng.gen_range(20..120);
        let x = frames::<f32>(t, cfg.d_model, 1000 + case);
        let n_blocks = t.div_ceil(block.n_center);
        let b = rng.gen_range(0..n_blocks);
        let visible = ((b + 1) * block.n_center + block.n_right).min(t);
        let centers = b * block.n_center..((b + 1) * block.n_center).min(t);
        let perturb_from = |from: usize| {
            let mut y = x.clone();
            for v in &mut y.data_mut()[from * cfg.d_model..] {
                *v += 0.5;
            }
            offline(&store, &cfg, &block, &y)
        };
        let base = offline(&store, &cfg, &block, &x);
        let beyond = if visible < t {
            perturb_from(visible)
        } else {
            base.clone()
        };
        if centers.clone().all(|f| base.row(f) == beyond.row(f)) {
            invariant += 1;
        }
        let inside = perturb_from(visible - 1);
        if centers.clone().any(|f| base.row(f) != inside.row(f)) {
            sensitive += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        invariant == 50 && secs < 60.0,
        format!(
            "{invariant}/50 blocks bit-identical under changes past their look-ahead \
             ({sensitive}/50 change when the last visible frame moves), {secs:.1} s (limit 60 s)"
        ),
    )
}

fn streaming_offline_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut equal = 0;
    for case in 0..10 {
        let store = params::<f32>(&cfg, 50 + case);
        let block = random_block(&mut rng);
        let x = frames::<f32>(500, cfg.d_model, 60 + case);
        let off = offline(&store, &cfg, &block, &x);
        let st = streamed(&store, &cfg, &block, &x);
        if st.len() == 500
            && st
                .iter()
                .enumerate()
                .all(|(t, r)| r.as_slice() == off.row(t))
        {
            equal += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        equal == 10 && secs < 60.0,
        format!("{equal}/10 configs bit-exact over 500 frames, {secs:.1} s (limit 60 s)"),
    )
}

fn vanilla_attention_reduction() -> Outcome {
    let tol = 1e-5;
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let cfg = EncoderConfig {
            n_layers: 1,
            n_heads: [1, 2, 4][trial as usize % 3],
            d_model: 16,
            d_ffn: 32,
            dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let mut store = ParamStore::<f32>::new();
        cfg.init_params(&mut rng, &mut store);
        for name in ["attn.w_r", "attn.u", "attn.v"] {
            store
                .get_mut(&format!("encoder.layer0.{name}"))
                .unwrap()
                .data_mut()
                .fill(0.0);
        }
        for name in ["attn.bq", "attn.bk", "attn.bv", "attn.bo"] {
            for v in store
                .get_mut(&format!("encoder.layer0.{name}"))
                .unwrap()
                .data_mut()
            {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        // N_l = N_r = 0: the block is exactly its center frames.
        let len = rng.gen_range(1..12);
        let d = cfg.d_model;
        let z: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect())
            .collect();

        let mut tape = Tape::<f32>::new();
        let bound = store.bind(&mut tape, false);
        let vars = EncoderVars::bind(&mut tape, &bound, &cfg, len).unwrap();
        let zv = tape.constant(Tensor::from_fn(&[len, d], |i| z[i / d][i % d] as f32));
        let ctx = tape.constant(Tensor::zeros(&[1, d]));
        let out = block_attention(
            &mut tape,
            zv,
            0,
            ctx,
            ctx,
            &vars.layers[0].attn,
            cfg.n_heads,
            len,
        )
        .unwrap();
        let got = tape.value(out.out).clone();

        let mat = |n: &str| -> Vec<Vec<f64>> {
            let t = store.get(&format!("encoder.layer0.attn.{n}")).unwrap();
            (0..d)
                .map(|i| t.row(i).iter().map(|&v| v as f64).collect())
                .collect()
        };
        let vec = |n: &str| -> Vec<f64> {
            store
                .get(&format!("encoder.layer0.attn.{n}"))
                .unwrap()
                .data()
                .iter()
                .map(|&v| v as f64)
                .collect()
        };
        let mut rows = z.clone();
        rows.push(vec![0.0; d]);
        let want = dense_mha(
            &rows,
            &[mat("wq"), mat("wk"), mat("wv"), mat("wo")],
            &[vec("bq"), vec("bk"), vec("bv"), vec("bo")],
            cfg.n_heads,
        );
        for (i, row) in want.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                worst = worst.max((got.row(i)[j] as f64 - e).abs());
            }
        }
    }
    outcome(
        worst < tol,
        format!("max elementwise deviation {worst:.2e} over 20 blocks (tolerance {tol:e})"),
    )
}

fn relative_position_property() -> Outcome {
    let tol = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n_heads = rng.gen_range(1..4);
        let dh = 2 * rng.gen_range(1..5);
        let d = n_heads * dh;
        let max_len: usize = rng.gen_range(2..40);
        let mut r = |shape: &[usize]| Tensor::<f32>::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
        let relpos = RelPosParams {
            w_r: r(&[d, d]),
            u: r(&[d]),
            v: r(&[d]),
            n_heads,
            max_len,
        };
        let q1 = r(&[1, dh]);
        let k1 = r(&[1, dh]);
        let q = Tensor::from_rows(&[q1.row(0), q1.row(0)]).unwrap();
        let k = Tensor::from_rows(&[k1.row(0), k1.row(0)]).unwrap();
        let m = max_len as i64;
        let delta = rng.gen_range(-(m - 1)..m);
        let pick = |rng: &mut ChaCha8Rng| {
            let i = rng.gen_range(delta.max(0)..m + delta.min(0));
            (i, i - delta)
        };
        let (i1, j1) = pick(&mut rng);
        let (i2, j2) = pick(&mut rng);
        let head = rng.gen_range(0..n_heads);
        let a = rel_attention_scores(
            &q,
            &k,
            &relpos,
            head,
            &[Some(i1), Some(i2)],
            &[Some(j1), Some(j2)],
        )
        .unwrap();
        worst = worst.max((a.row(0)[0] - a.row(1)[1]).abs() as f64);
    }
    outcome(
        worst < tol,
        format!("max score difference for equal (content, i-j) pairs {worst:.2e} over 1000 trials (tolerance {tol:e})"),
    )
}

fn gradient_integrity() -> Outcome {
    let checks = op_checks();
    let worst64 = checks.iter().map(|c| c.err_f64).fold(0.0, f64::max);
    let worst32 = checks.iter().map(|c| c.err_f32).fold(0.0, f64::max);
    let failing: Vec<&str> = checks
        .iter()
        .filter(|c| c.err_f64 >= TOL_F64 || c.err_f32 >= TOL_F32)
        .map(|c| c.name)
        .collect();
    let (model, n) = toy_model_check();
    outcome(
        failing.is_empty() && model < TOL_MODEL_F32,
        format!(
            "{} ops: worst f64 {worst64:.1e} (< {TOL_F64:e}), worst f32 {worst32:.1e} (< {TOL_F32:e}){}; \
             toy model f32 {model:.1e} over {n} entries (< {TOL_MODEL_F32:e})",
            checks.len(),
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )
}

fn dbn_correctness() -> Outcome {
    // fps 8, 60–120 BPM: 30 states.
    let ss = build_state_space(60.0, 120.0, 8.0, 3).unwrap();
    let tm = TransitionModel::new(&ss, 2.0).unwrap();
    let dense = dense_matrix(ss.intervals(), 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut st = ForwardState::uniform(&ss);
    let mut naive = st.p.clone();
    let mut dense_dev = 0.0f64;
    for _ in 0..500 {
        let act: f64 = rng.gen();
        let pred = predict(&st.p, &ss, &tm);
        let dense_pred: Vec<f64> = (0..naive.len())
            .map(|j| (0..naive.len()).map(|i| dense[i][j] * naive[i]).sum())
            .collect();
        dense_dev = pred
            .iter()
            .zip(&dense_pred)
            .fold(dense_dev, |m, (a, b)| m.max((a - b).abs()));
        forward_step(&mut st, act, &tm, &ss, 3);
        let un: Vec<f64> = dense_pred
            .iter()
            .zip(observation_likelihoods(act, &ss, 3))
            .map(|(p, o)| p * o.max(1e-12))
            .collect();
        let z: f64 = un.iter().sum();
        naive = un.iter().map(|v| v / z).collect();
        dense_dev =
            st.p.iter()
                .zip(&naive)
                .fold(dense_dev, |m, (a, b)| m.max((a - b).abs()));
    }

    let full = build_state_space(55.0, 215.0, FPS, 16).unwrap();
    let full_tm = TransitionModel::new(&full, 100.0).unwrap();
    let mut fs = ForwardState::uniform(&full);
    let mut norm_dev = 0.0f64;
    for _ in 0..10_000 {
        forward_step(&mut fs, rng.gen(), &full_tm, &full, 16);
        norm_dev = norm_dev.max((fs.p.iter().sum::<f64>() - 1.0).abs());
    }

    let mut lock_dev = 0.0f64;
    for bpm in [60.0, 90.0, 120.0, 180.0] {
        let period = 60.0 * FPS / bpm;
        let beats = decode_impulses(period, (40.0 * FPS) as usize);
        for w in beats[beats.len() / 2..].windows(2) {
            lock_dev = lock_dev.max(((w[1] - w[0]) as f64 - period).abs());
        }
    }
    outcome(
        dense_dev < 1e-10 && norm_dev < 1e-9 && lock_dev <= 1.0 + 1e-9,
        format!(
            "sparse vs dense ({} states) {dense_dev:.1e} (< 1e-10); normalization drift {norm_dev:.1e} over 10000 steps \
             (< 1e-9); impulse-train interval error {lock_dev:.2} frames at 60/90/120/180 BPM (<= 1)",
            ss.n_states()
        ),
    )
}

fn latency_arithmetic() -> Outcome {
    let got: Vec<u64> = [1, 2, 4, 16]
        .iter()
        .map(|&n| latency_ms(&BlockConfig::new(256, n, n).unwrap()))
        .collect();
    outcome(
        got == [46, 93, 186, 743],
        format!("{got:?} ms (expected [46, 93, 186, 743])"),
    )
}

fn desk_scale_training() -> (Outcome, Option<Model>) {
    let limit_s = 30.0 * 60.0;
    let start = Instant::now();
    let cfg = TrainConfig {
        epochs: 10,
        time_budget_s: Some(25.0 * 60.0),
        ..TrainConfig::default()
    };
    let ex = FeatureExtractor::new();
    let to_examples = |n_clips, seed| {
        gen_corpus(&CorpusSpec {
            n_clips,
            seed,
            ..CorpusSpec::default()
        })
        .iter()
        .flat_map(|c| {
            examples_from_clip(
                c,
                &ex,
                cfg.model.n_tempo_bins,
                cfg.segment_s,
                cfg.widen_targets,
            )
        })
        .collect::<Vec<_>>()
    };
    let (train_set, val_set) = (to_examples(200, 1), to_examples(20, 2));
    let trained = train(&cfg, &train_set, &val_set, |r| {
        let e = r.train_loss.len();
        println!(
            "      epoch {e:>2}: train {:.4} val {:.4} ({:.0} s)",
            r.train_loss[e - 1],
            r.val_loss[e - 1],
            r.seconds
        );
    });
    let (store, report) = match trained {
        Ok(v) => v,
        Err(e) => return (outcome(false, format!("training failed: {e}")), None),
    };
    let train_s = start.elapsed().as_secs_f64();
    let model =
        Model::new(cfg.model.clone(), store).expect("trained parameters match the configuration");

    let test = gen_corpus(&CorpusSpec {
        n_clips: 50,
        seed: 3,
        ..CorpusSpec::default()
    });
    let score = |n| {
        let block = BlockConfig::new(64, n, n).unwrap();
        evaluate_corpus(
            &model,
            &test,
            block,
            &Default::default(),
            thread_cap_from_env(),
        )
        .unwrap()
    };
    let (s16, s1) = (score(16), score(1));
    let pass =
        train_s <= limit_s && s16.beat_f1 >= 0.90 && s16.downbeat_f1 >= 0.70 && s1.beat_f1 >= 0.80;
    (
        outcome(
            pass,
            format!(
                "{} params, 200 clips, {} epochs in {train_s:.0} s (limit {limit_s:.0} s); 50 held-out clips: \
                 N_c=N_r=16 beat {:.3} (>= 0.90) downbeat {:.3} (>= 0.70); N_c=N_r=1 beat {:.3} (>= 0.80)",
                report.param_count,
                report.train_loss.len(),
                s16.beat_f1,
                s16.downbeat_f1,
                s1.beat_f1
            ),
        ),
        Some(model),
    )
}

fn real_time_factor(model: Option<Model>) -> Outcome {
    let model = model.unwrap_or_else(|| {
        let cfg = ModelConfig::toy();
        Model::new(cfg.clone(), cfg.init_params(0)).unwrap()
    });
    let clip = gen_click_track(120.0, 4, 30.0, 9, &SynthOptions::default()).audio;
    let rtf = |n| {
        measure_rtf(
            &model,
            &clip,
            BlockConfig::new(64, n, n).unwrap(),
            &Default::default(),
            5,
        )
        .unwrap()
    };
    let (r1, r16) = (rtf(1), rtf(16));
    outcome(
        r1.median < 1.0 && r16.median < 1.0 && r16.median <= r1.median,
        format!(
            "30 s clip, median of 5: N_c=1 {:.4} (first {:.4}), N_c=16 {:.4} (first {:.4}); need both < 1 and N_c=16 <= N_c=1",
            r1.median, r1.first_run, r16.median, r16.first_run
        ),
    )
}

fn f_measure_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut agree = 0;
    let grid = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(0..=8);
        let mut v: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..120) as f64 * 0.01)
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };
    for _ in 0..10_000 {
        let (r, e) = (grid(&mut rng), grid(&mut rng));
        if f_measure(&r, &e, DEFAULT_TOLERANCE_S).matched
            == optimal_matches(&r, &e, DEFAULT_TOLERANCE_S)
        {
            agree += 1;
        }
    }
    outcome(
        agree == 10_000,
        format!("greedy equals exhaustive optimum on {agree}/10000 instances of <= 8 beats"),
    )
}

fn weight_format() -> Outcome {
    let cfg = ModelConfig::toy();
    let store = cfg.init_params::<f32>(11);
    let bytes = to_bytes(&cfg, &store);
    let exact = match from_bytes(&bytes) {
        Ok((c, s)) => {
            c == cfg
                && s.iter().zip(store.iter()).all(|((n1, a), (n2, b))| {
                    n1 == n2
                        && a.data()
                            .iter()
                            .zip(b.data())
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
        }
        Err(_) => false,
    };
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 1;
    let magic = matches!(from_bytes(&bad_magic), Err(WeightsError::Magic));
    let truncated = matches!(
        from_bytes(&bytes[..bytes.len() - 1]),
        Err(WeightsError::Truncated { .. })
    );
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + n]).unwrap();
    header["config"]["encoder"]["d_model"] = 16.into();
    header["config"]["encoder"]["d_ffn"] = 64.into();
    let json = serde_json::to_vec(&header).unwrap();
    let mut forged = MAGIC.to_vec();
    forged.extend((json.len() as u32).to_le_bytes());
    forged.extend(json);
    forged.extend(&bytes[12 + n..]);
    let shape = matches!(from_bytes(&forged), Err(WeightsError::Shape { .. }));
    outcome(
        exact && magic && truncated && shape,
        format!("round trip bit-exact: {exact}; bad magic -> Magic: {magic}; truncated -> Truncated: {truncated}; config mismatch -> Shape: {shape}"),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("streaming causality", streaming_causality()),
        (
            "streaming/offline equivalence",
            streaming_offline_equivalence(),
        ),
        ("vanilla-attention reduction", vanilla_attention_reduction()),
        ("relative-position property", relative_position_property()),
        ("gradient integrity", gradient_integrity()),
        ("DBN correctness", dbn_correctness()),
        ("latency arithmetic", latency_arithmetic()),
    ];
    for (i, (name, o)) in results.iter().enumerate() {
        report(i + 1, name, o);
    }
    println!("      training the toy model for the end-to-end check...");
    let (e2e, model) = desk_scale_training();
    report(8, "desk-scale end-to-end", &e2e);
    results.push(("desk-scale end-to-end", e2e));
    for (name, o) in [
        ("real-time factor", real_time_factor(model)),
        ("F-measure oracle", f_measure_oracle()),
        ("weight format", weight_format()),
    ] {
        report(results.len() + 1, name, &o);
        results.push((name, o));
    }
    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if passed != results.len() {
        std::process::exit(1);
    }
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!(
        "{} {n:>2}. {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}
