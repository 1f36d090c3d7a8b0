//! Per-tensor optimizer state: SGD, Adam, and Adagrad.
//!
//! State is keyed by tensor index; callers must update tensors in the same
//! order the state was built for. Adam moments start at 0; the Adagrad
//! accumulator starts at [`ADAGRAD_INITIAL_ACCUM`].

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAGRAD_INITIAL_ACCUM: f64 = 0.1;
pub const ADAGRAD_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
pub enum OptState {
    Sgd,
    Adam {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: u64,
    },
    Adagrad {
        accum: Vec<Vec<f64>>,
    },
}

impl OptState {
    pub fn sgd() -> Self {
        OptState::Sgd
    }

    pub fn adam(tensor_sizes: &[usize]) -> Self {
        OptState::Adam {
            m: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn adagrad(tensor_sizes: &[usize]) -> Self {
        OptState::Adagrad {
            accum: tensor_sizes.iter().map(|&n| vec![ADAGRAD_INITIAL_ACCUM; n]).collect(),
        }
    }

    /// Call once per optimization step, before the per-tensor updates.
    pub fn begin_step(&mut self) {
        if let OptState::Adam { step, .. } = self {
            *step += 1;
        }
    }

    /// Applies one update to tensor `idx` in place.
    pub fn update(&mut self, idx: usize, lr: f64, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), grad.len());
        match self {
            OptState::Sgd => {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptState::Adam { m, v, step } => {
                let t = *step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                let (m, v) = (&mut m[idx], &mut v[idx]);
                for i in 0..param.len() {
                    let g = grad[i];
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            OptState::Adagrad { accum } => {
                let acc = &mut accum[idx];
                for i in 0..param.len() {
                    let g = grad[i];
                    acc[i] += g * g;
                    param[i] -= lr * g / (acc[i].sqrt() + ADAGRAD_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = vec![1.0, -2.0];
        let mut opt = OptState::sgd();
        opt.begin_step();
        opt.update(0, 0.5, &mut p, &[2.0, -2.0]);
        assert_eq!(p, vec![0.0, -1.0]);
    }

    #[test]
    fn adam_with_zero_gradient_leaves_params_unchanged() {
        let mut p = vec![0.3, -0.7, 1.5];
        let before = p.clone();
        let mut opt = OptState::adam(&[3]);
        for _ in 0..5 {
            opt.begin_step();
            opt.update(0, 0.1, &mut p, &[0.0, 0.0, 0.0]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_about_lr() {
        // With bias correction, |delta| ~= lr for any nonzero gradient.
        let mut p = vec![0.0];
        let mut opt = OptState::adam(&[1]);
        opt.begin_step();
        opt.update(0, 0.01, &mut p, &[3.7]);
        assert!((p[0] + 0.01).abs() < 1e-6, "p = {}", p[0]);
    }

    #[test]
    fn adagrad_shrinks_effective_rate_as_gradients_accumulate() {
        let mut p = vec![0.0];
        let mut opt = OptState::adagrad(&[1]);
        opt.begin_step();
        opt.update(0, 0.1, &mut p, &[1.0]);
        let first = p[0].abs();
        // accumulator starts at 0.1, so the first step is 0.1/(sqrt(1.1)+eps)
        assert!((first - 0.1 / (1.1f64.sqrt() + ADAGRAD_EPS)).abs() < 1e-12);
        let before = p[0];
        opt.update(0, 0.1, &mut p, &[1.0]);
        assert!((p[0] - before).abs() < first);
    }
}
