//! Convolutional feature extractor: three conv + frequency-maxpool stages that
//! collapse the 128 bands, then a linear projection to the model width.
//!
//! Convolutions are causal in time, so output frame `t` only depends on input
//! frames `..=t`. Streaming needs a history of `3·(kt−1)` input frames.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::N_BANDS;
use crate::params::{xavier, Bound, ParamStore};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvFrontendConfig {
    pub channels: Vec<usize>,
    pub kernel_time: usize,
    pub kernel_freq: usize,
    pub pools: Vec<usize>,
}

impl Default for ConvFrontendConfig {
    fn default() -> Self {
        ConvFrontendConfig {
            channels: vec![20, 40, 80],
            kernel_time: 3,
            kernel_freq: 3,
            pools: vec![4, 4, 8],
        }
    }
}

impl ConvFrontendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.channels.len() != self.pools.len() || self.channels.is_empty() {
            return Err("frontend needs one pool width per conv layer".into());
        }
        if self.kernel_time.is_multiple_of(2) || self.kernel_freq.is_multiple_of(2) {
            return Err("frontend kernels must have odd sizes".into());
        }
        let prod: usize = self.pools.iter().product();
        if prod == 0 || !N_BANDS.is_multiple_of(prod) {
            return Err(format!("pool product {prod} must divide {N_BANDS}"));
        }
        if self.channels.contains(&0) {
            return Err("channel counts must be positive".into());
        }
        Ok(())
    }

    /// Frequency bins left after all pools.
    pub fn out_bins(&self) -> usize {
        N_BANDS / self.pools.iter().product::<usize>()
    }

    /// Input width of the output projection.
    pub fn flat_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0) * self.out_bins()
    }

    /// Past input frames that can influence the current output.
    pub fn history_frames(&self) -> usize {
        self.channels.len() * (self.kernel_time - 1)
    }

    pub fn init_params<F: Real>(
        &self,
        d_model: usize,
        rng: &mut ChaCha8Rng,
        store: &mut ParamStore<F>,
    ) {
        let mut c_in = 1;
        for (i, &c_out) in self.channels.iter().enumerate() {
            let fan = c_in * self.kernel_time * self.kernel_freq;
            store.insert(
                format!("frontend.conv{i}.weight"),
                xavier(
                    rng,
                    &[c_out, c_in, self.kernel_time, self.kernel_freq],
                    fan,
                    c_out,
                ),
            );
            store.insert(format!("frontend.conv{i}.bias"), Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        let flat = self.flat_dim();
        store.insert(
            "frontend.proj.weight",
            xavier(rng, &[flat, d_model], flat, d_model),
        );
        store.insert("frontend.proj.bias", Tensor::zeros(&[d_model]));
    }

    pub fn expected_shapes(&self, d_model: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = 1;
        for (i, &c_out) in self.channels.iter().enumerate() {
            out.push((
                format!("frontend.conv{i}.weight"),
                vec![c_out, c_in, self.kernel_time, self.kernel_freq],
            ));
            out.push((format!("frontend.conv{i}.bias"), vec![c_out]));
            c_in = c_out;
        }
        out.push((
            "frontend.proj.weight".into(),
            vec![self.flat_dim(), d_model],
        ));
        out.push(("frontend.proj.bias".into(), vec![d_model]));
        out
    }
}

/// Maps `[T, 128]` feature frames to `[T, d_model]` encoder inputs.
pub fn frontend_forward<F: Real>(
    tape: &mut Tape<F>,
    frames: Var,
    cfg: &ConvFrontendConfig,
    params: &Bound,
) -> Result<Var, TensorError> {
    let [t, bands] = *tape.shape(frames) else {
        return Err(TensorError::Shape {
            op: "frontend_forward",
            detail: format!("expected [T, {N_BANDS}], got {:?}", tape.shape(frames)),
        });
    };
    if bands != N_BANDS {
        return Err(TensorError::Shape {
            op: "frontend_forward",
            detail: format!("expected {N_BANDS} bands, got {bands}"),
        });
    }
    let mut x = tape.reshape(frames, &[1, t, N_BANDS])?;
    for (i, &pool) in cfg.pools.iter().enumerate() {
        let w = params.var(&format!("frontend.conv{i}.weight"));
        let b = params.var(&format!("frontend.conv{i}.bias"));
        x = tape.conv2d(x, w, Some(b))?;
        x = tape.relu(x)?;
        x = tape.maxpool_freq(x, pool)?;
    }
    // [C, T, F'] -> [T, C·F']
    let x = tape.permute(x, &[1, 0, 2])?;
    let x = tape.reshape(x, &[t, cfg.flat_dim()])?;
    tape.linear(
        x,
        params.var("frontend.proj.weight"),
        params.var("frontend.proj.bias"),
    )
}

/// Frame-by-frame front-end keeping the minimal input history.
#[derive(Debug, Clone)]
pub struct FrontendStream {
    history: std::collections::VecDeque<Vec<f32>>,
    capacity: usize,
}

impl FrontendStream {
    pub fn new(cfg: &ConvFrontendConfig) -> Self {
        let capacity = cfg.history_frames() + 1;
        FrontendStream {
            history: std::collections::VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Adds one 128-band frame; returns the window (oldest first) whose last
    /// output row is this frame's embedding.
    pub fn push(&mut self, frame: &[f32]) -> Tensor<f32> {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(frame.to_vec());
        Tensor::from_rows(&self.history.iter().collect::<Vec<_>>()).expect("uniform frame width")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn setup(d_model: usize) -> (ConvFrontendConfig, ParamStore<f64>) {
        let cfg = ConvFrontendConfig {
            channels: vec![3, 4, 5],
            ..Default::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        cfg.init_params(d_model, &mut rng, &mut store);
        (cfg, store)
    }

    fn run(cfg: &ConvFrontendConfig, store: &ParamStore<f64>, input: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let x = tape.constant(input);
        let y = frontend_forward(&mut tape, x, cfg, &b).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn default_config_collapses_frequency() {
        let c = ConvFrontendConfig::default();
        c.validate().unwrap();
        assert_eq!(c.out_bins(), 1);
        assert_eq!(c.flat_dim(), 80);
        assert_eq!(c.history_frames(), 6);
    }

    #[test]
    fn single_frame_and_zero_input() {
        let (cfg, store) = setup(8);
        let y = run(&cfg, &store, Tensor::zeros(&[1, 128]));
        assert_eq!(y.shape(), &[1, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_frame_ignores_later_input() {
        let (cfg, store) = setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor::from_fn(&[12, 128], |_| rng.gen_range(0.0..4.0));
        let mut b = a.clone();
        for v in &mut b.data_mut()[7 * 128..] {
            *v += 1.5;
        }
        let (ya, yb) = (run(&cfg, &store, a), run(&cfg, &store, b));
        assert_eq!(ya.shape(), &[12, 8]);
        assert_eq!(&ya.data()[..7 * 8], &yb.data()[..7 * 8]);
        assert_ne!(&ya.data()[7 * 8..], &yb.data()[7 * 8..]);
    }

    #[test]
    fn streaming_window_matches_full_sequence() {
        let cfg = ConvFrontendConfig {
            channels: vec![3, 4, 5],
            ..Default::default()
        };
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        cfg.init_params(6, &mut rng, &mut store);
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v += 0.01;
            }
        }
        let input = Tensor::from_fn(&[20, 128], |i| ((i * 7919) % 113) as f32 / 20.0);
        let full = {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape, false);
            let x = tape.constant(input.clone());
            let y = frontend_forward(&mut tape, x, &cfg, &b).unwrap();
            tape.value(y).clone()
        };
        let mut st = FrontendStream::new(&cfg);
        for t in 0..20 {
            let win = st.push(input.row(t));
            let mut tape = Tape::new();
            let b = store.bind(&mut tape, false);
            let n = win.rows();
            let x = tape.constant(win);
            let y = frontend_forward(&mut tape, x, &cfg, &b).unwrap();
            assert_eq!(tape.value(y).row(n - 1), full.row(t), "frame {t}");
        }
    }
}
