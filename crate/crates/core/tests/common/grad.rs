//! Finite-difference gradient checks.
//!
//! The reference is always an f64 central difference (step 1e-6); analytic
//! gradients are computed in the tape's own precision. Error is the largest
//! absolute deviation divided by the largest reference magnitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streambeat::encoder::{BlockConfig, Mode};
use streambeat::model::{model_forward, ModelConfig};
use streambeat::params::ParamStore;
use streambeat::tensor::{DropoutKey, Real, RelScoreLayout, Tape, Tensor, TensorError, Var};
use streambeat::train::{multitask_loss, FrameTargets};

pub const FD_STEP: f64 = 1e-6;
pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-6;
pub const TOL_MODEL_F32: f64 = 1e-2;

type Res = Result<Var, TensorError>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Reduces the op output to a scalar with fixed pseudo-random weights so every
/// output element contributes.
fn weighted_sum<F: Real>(tape: &mut Tape<F>, out: Var) -> Res {
    let shape = tape.shape(out).to_vec();
    let w = Tensor::from_fn(&shape, |i| F::lit(((i * 7919 % 97) as f64 - 48.0) / 50.0));
    let w = tape.constant(w);
    let m = tape.mul(out, w)?;
    tape.sum(m)
}

fn loss_and_grads<F: Real, B>(build: &B, inputs: &[Tensor<f64>]) -> (f64, Vec<Vec<f64>>)
where
    B: Fn(&mut Tape<F>, &[Var]) -> Res,
{
    let mut tape = Tape::<F>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.cast())).collect();
    let out = build(&mut tape, &vars).expect("op builds");
    let loss = weighted_sum(&mut tape, out).expect("reduction");
    let value = tape.value(loss).data()[0].to_f64().unwrap();
    let g = tape.backward(loss).expect("backward");
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.get(v)
                .map(|s| s.iter().map(|x| x.to_f64().unwrap()).collect())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    (value, grads)
}

fn finite_differences<B>(build: &B, inputs: &[Tensor<f64>]) -> Vec<Vec<f64>>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Res,
{
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let mut bumped = inputs.to_vec();
            bumped[k].data_mut()[i] += FD_STEP;
            let up = loss_and_grads::<f64, B>(build, &bumped).0;
            bumped[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = loss_and_grads::<f64, B>(build, &bumped).0;
            g.push((up - down) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

fn scaled_error(analytic: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let scale = reference
        .iter()
        .flatten()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-12);
    let dev = analytic
        .iter()
        .flatten()
        .zip(reference.iter().flatten())
        .fold(0.0f64, |m, (a, r)| m.max((a - r).abs()));
    dev / scale
}

pub struct OpCheck {
    pub name: &'static str,
    pub err_f64: f64,
    pub err_f32: f64,
}

fn check<B64, B32>(name: &'static str, shapes: Vec<Vec<usize>>, b64: &B64, b32: &B32) -> OpCheck
where
    B64: Fn(&mut Tape<f64>, &[Var]) -> Res,
    B32: Fn(&mut Tape<f32>, &[Var]) -> Res,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
    let reference = finite_differences(b64, &inputs);
    OpCheck {
        name,
        err_f64: scaled_error(&loss_and_grads::<f64, _>(b64, &inputs).1, &reference),
        err_f32: scaled_error(&loss_and_grads::<f32, _>(b32, &inputs).1, &reference),
    }
}

macro_rules! case {
    ($name:ident, $shapes:expr, |$t:ident, $x:ident| $body:expr) => {{
        fn build<F: Real>($t: &mut Tape<F>, $x: &[Var]) -> Res {
            $body
        }
        check(stringify!($name), $shapes, &build::<f64>, &build::<f32>)
    }};
}

/// Scaled gradient errors of every differentiable tape op, in f64 and f32.
pub fn op_checks() -> Vec<OpCheck> {
    vec![
        case!(matmul, vec![vec![3, 4], vec![4, 5]], |t, x| t
            .matmul(x[0], x[1])),
        case!(linear, vec![vec![3, 4], vec![4, 2], vec![2]], |t, x| t
            .linear(x[0], x[1], x[2])),
        case!(add, vec![vec![3, 4], vec![3, 4]], |t, x| t.add(x[0], x[1])),
        case!(add_row, vec![vec![3, 4], vec![4]], |t, x| t
            .add_row(x[0], x[1])),
        case!(mul, vec![vec![3, 4], vec![3, 4]], |t, x| t.mul(x[0], x[1])),
        case!(scale, vec![vec![3, 4]], |t, x| t.scale(x[0], F::lit(1.7))),
        case!(relu, vec![vec![4, 5]], |t, x| t.relu(x[0])),
        case!(sigmoid, vec![vec![4, 5]], |t, x| t.sigmoid(x[0])),
        case!(dropout_train, vec![vec![4, 6]], |t, x| t.dropout(
            x[0],
            0.3,
            DropoutKey {
                seed: 3,
                site: 9,
                step: 1
            },
            true
        )),
        case!(softmax_rows, vec![vec![3, 5]], |t, x| t.softmax_rows(x[0])),
        case!(layernorm, vec![vec![3, 6], vec![6], vec![6]], |t, x| t
            .layernorm(x[0], x[1], x[2])),
        case!(
            conv2d,
            vec![vec![2, 5, 6], vec![3, 2, 3, 3], vec![3]],
            |t, x| t.conv2d(x[0], x[1], Some(x[2]))
        ),
        case!(
            conv2d_no_bias,
            vec![vec![1, 4, 5], vec![2, 1, 3, 5]],
            |t, x| t.conv2d(x[0], x[1], None)
        ),
        case!(maxpool_freq, vec![vec![2, 3, 8]], |t, x| t
            .maxpool_freq(x[0], 4)),
        case!(concat_rows, vec![vec![2, 3], vec![4, 3]], |t, x| t
            .concat(&[x[0], x[1]], 0)),
        case!(concat_cols, vec![vec![3, 2], vec![3, 4]], |t, x| t
            .concat(&[x[0], x[1]], 1)),
        case!(slice_cols, vec![vec![3, 5]], |t, x| t
            .slice_cols(x[0], 1..4)),
        case!(slice_rows, vec![vec![5, 3]], |t, x| t
            .slice_rows(x[0], 2..5)),
        case!(permute, vec![vec![2, 3, 4]], |t, x| t
            .permute(x[0], &[2, 0, 1])),
        case!(transpose, vec![vec![3, 4]], |t, x| t.transpose(x[0])),
        case!(reshape, vec![vec![3, 4]], |t, x| t.reshape(x[0], &[2, 6])),
        case!(mean_rows, vec![vec![3, 4]], |t, x| t.mean_rows(x[0])),
        case!(sum, vec![vec![3, 4]], |t, x| t.sum(x[0])),
        case!(bce_with_logits, vec![vec![6, 1]], |t, x| t.bce_with_logits(
            x[0],
            &[1.0, 0.0, 0.5, 0.0, 1.0, 0.25].map(F::lit),
            Some(&[1.0, 2.0, 0.5, 1.0, 1.0, 3.0].map(F::lit))
        )),
        case!(
            rel_scores,
            vec![vec![3, 4], vec![5, 4], vec![7, 4], vec![4], vec![4]],
            |t, x| {
                let layout = RelScoreLayout {
                    n_queries: 3,
                    n_keys: 5,
                    head_offset: 2,
                    head_dim: 2,
                    scale: 0.7,
                    delta_index: (0..15).map(|i| (i * 5 % 7) as u32).collect(),
                };
                t.rel_scores(x[0], x[1], x[2], x[3], x[4], layout)
            }
        ),
    ]
}

fn model_loss<F: Real>(
    cfg: &ModelConfig,
    store: &ParamStore<F>,
    feats: &Tensor<f64>,
    targets: &FrameTargets,
    grads: bool,
) -> (f64, Vec<(String, Vec<f64>)>) {
    let block = BlockConfig::new(4, 2, 2).unwrap();
    let mut tape = Tape::<F>::new();
    let bound = store.bind(&mut tape, true);
    let x = tape.constant(feats.cast());
    let out = model_forward(
        &mut tape,
        &bound,
        cfg,
        &block,
        x,
        Mode::Train { seed: 11, step: 2 },
    )
    .unwrap();
    let loss = multitask_loss(&mut tape, &out, targets).unwrap();
    let value = tape.value(loss).data()[0].to_f64().unwrap();
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    let named = bound
        .iter()
        .map(|(n, v)| {
            let gv = g
                .get(v)
                .map(|s| s.iter().map(|x| x.to_f64().unwrap()).collect())
                .unwrap_or_default();
            (n.to_string(), gv)
        })
        .collect();
    (value, named)
}

/// Relative L2 error of the f32 toy-model gradient over three entries of
/// every parameter tensor, and the number of entries checked.
pub fn toy_model_check() -> (f64, usize) {
    let cfg = ModelConfig::toy();
    let store32: ParamStore<f32> = cfg.init_params(4);
    let store64: ParamStore<f64> = store32.cast();
    let n_frames = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let feats = Tensor::from_fn(&[n_frames, 128], |_| rng.gen_range(0.0..2.0));
    let mut tempo = vec![0.0f32; cfg.n_tempo_bins];
    tempo[120] = 1.0;
    let targets = FrameTargets {
        beat: (0..n_frames)
            .map(|t| if t % 5 == 0 { 1.0 } else { 0.0 })
            .collect(),
        downbeat: (0..n_frames)
            .map(|t| if t == 0 { 1.0 } else { 0.0 })
            .collect(),
        tempo,
    };
    let (_, analytic) = model_loss(&cfg, &store32, &feats, &targets, true);

    // Three entries from every parameter tensor.
    let (mut a, mut r) = (Vec::new(), Vec::new());
    for (name, g) in &analytic {
        let len = store64.get(name).unwrap().len();
        for i in [0, len / 2, len - 1] {
            let mut bumped = store64.clone();
            bumped.get_mut(name).unwrap().data_mut()[i] += FD_STEP;
            let up = model_loss(&cfg, &bumped, &feats, &targets, false).0;
            bumped.get_mut(name).unwrap().data_mut()[i] -= 2.0 * FD_STEP;
            let down = model_loss(&cfg, &bumped, &feats, &targets, false).0;
            r.push((up - down) / (2.0 * FD_STEP));
            a.push(g[i]);
        }
    }
    let diff: f64 = a
        .iter()
        .zip(&r)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = r.iter().map(|y| y * y).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    (diff / norm, a.len())
}
