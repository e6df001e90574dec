use super::{Real, Tensor, TensorError};

/// Moment estimates and hyperparameters for Adam.
#[derive(Debug, Clone)]
pub struct AdamState<F = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update over `params`, reading each tensor's `grad`. Parameters
/// without a gradient are left untouched but still advance their moments as
/// if the gradient were zero.
pub fn adam_step<'a, F: Real>(
    params: impl IntoIterator<Item = &'a mut Tensor<F>>,
    state: &mut AdamState<F>,
) -> Result<(), TensorError> {
    let params: Vec<&mut Tensor<F>> = params.into_iter().collect();
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() || params.iter().zip(&state.m).any(|(p, m)| p.len() != m.len())
    {
        return Err(TensorError::Contract(
            "adam state does not match parameter set".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let (b1f, b2f) = (F::lit(b1), F::lit(b2));
    let lr_t = F::lit(state.lr * bc2.sqrt() / bc1);
    let eps = F::lit(state.eps * bc2.sqrt());
    for ((p, m), v) in params.into_iter().zip(&mut state.m).zip(&mut state.v) {
        let Some(grad) = p.grad.take() else {
            for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                *mi = *mi * b1f;
                *vi = *vi * b2f;
            }
            continue;
        };
        for (((w, g), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1f * *mi + (F::one() - b1f) * *g;
            *vi = b2f * *vi + (F::one() - b2f) * *g * *g;
            *w = *w - lr_t * *mi / (vi.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut w = Tensor::<f32>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = w.clone();
        w.grad = Some(vec![0.0; 3]);
        let mut st = AdamState::new(0.1);
        adam_step([&mut w], &mut st).unwrap();
        assert_eq!(w.data(), before.data());
    }

    #[test]
    fn one_step_on_square_decreases_magnitude() {
        let mut w = Tensor::<f64>::scalar(1.0);
        w.grad = Some(vec![2.0]);
        let mut st = AdamState::new(0.1);
        adam_step([&mut w], &mut st).unwrap();
        assert!(w.data()[0].abs() < 1.0);
    }

    #[test]
    fn converges_on_two_variable_quadratic() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2
        let mut w = Tensor::<f64>::new(vec![2], vec![0.0, 0.0]).unwrap();
        let mut st = AdamState::new(0.1);
        let loss = |w: &[f64]| (w[0] - 3.0).powi(2) + 10.0 * (w[1] + 1.0).powi(2);
        for _ in 0..200 {
            let d = w.data().to_vec();
            w.grad = Some(vec![2.0 * (d[0] - 3.0), 20.0 * (d[1] + 1.0)]);
            adam_step([&mut w], &mut st).unwrap();
        }
        assert!(loss(w.data()) < 1e-4, "loss {}", loss(w.data()));
    }
}
