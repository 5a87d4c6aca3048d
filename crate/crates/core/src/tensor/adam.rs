use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored in `params`.
    ///
    /// Fails without touching any parameter if a gradient is not finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for id in params.ids() {
            if let Some(g) = params.get(id).grad() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    tracing::error!(param = params.name(id), index = i, value = g[i], "non-finite gradient");
                    return Err(Error::NonFiniteGradient {
                        param: params.name(id).to_string(),
                        step: self.step + 1,
                    });
                }
            }
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = params.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        if self.first.len() < params.len() {
            self.first.resize(params.len(), Vec::new());
            self.second.resize(params.len(), Vec::new());
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for id in params.ids() {
            if params.is_frozen(id) {
                continue;
            }
            let i = id.index();
            let tensor = params.get_mut(id);
            let n = tensor.len();
            let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else { continue };
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            if m.len() != n {
                *m = vec![0.0; n];
                *v = vec![0.0; n];
            }
            let data = tensor.data_mut();
            for j in 0..n {
                let g = grad[j] * scale;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.enforce_pad_rows();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn single(x: f64) -> (ParamSet, crate::tensor::ParamId) {
        let mut p = ParamSet::new();
        let id = p.add("x", Tensor::scalar(x));
        (p, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, id) = single(1.5);
        p.get_mut(id).grad_mut()[0] = 0.0;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p).unwrap();
        assert_eq!(p.get(id).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // at t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for g in [0.3, -2.0, 1e-3] {
            let (mut p, id) = single(0.0);
            p.get_mut(id).grad_mut()[0] = g;
            let cfg = AdamConfig {
                clip_norm: None,
                ..AdamConfig::default()
            };
            let mut adam = Adam::new(cfg);
            adam.step(&mut p).unwrap();
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p.get(id).item() - expected).abs() < 1e-15);
            assert!((p.get(id).item().abs() - cfg.lr).abs() < 1e-7);
        }
    }

    #[test]
    fn two_steps_reduce_quadratic() {
        let f = |x: f64| (x - 2.0) * (x - 2.0);
        let (mut p, id) = single(-1.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let start = f(p.get(id).item());
        for _ in 0..2 {
            p.zero_grad();
            let mut t = Tape::new();
            let x = t.param(&p, id);
            let c = t.input(Tensor::scalar(2.0));
            let d = t.sub(x, c);
            let y = t.mul(d, d);
            t.backward(y, &mut p).unwrap();
            adam.step(&mut p).unwrap();
        }
        assert!(f(p.get(id).item()) < start);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut p, id) = single(1.0);
        p.get_mut(id).grad_mut()[0] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut p), Err(Error::NonFiniteGradient { .. })));
        assert_eq!(p.get(id).item(), 1.0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut p = ParamSet::new();
        let a = p.add("a", Tensor::row(vec![0.0, 0.0]));
        p.get_mut(a).grad_mut().copy_from_slice(&[30.0, 40.0]);
        assert_eq!(p.grad_norm(), 50.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 1.0,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            clip_norm: Some(5.0),
        });
        adam.step(&mut p).unwrap();
        // with both betas zero Adam reduces to sign descent; clipping keeps the sign
        assert_eq!(p.get(a).data(), &[-1.0, -1.0]);
    }

    #[test]
    fn frozen_params_untouched() {
        let (mut p, id) = single(1.0);
        p.set_frozen(id, true);
        p.get_mut(id).grad_mut()[0] = 1.0;
        Adam::new(AdamConfig::default()).step(&mut p).unwrap();
        assert_eq!(p.get(id).item(), 1.0);
    }
}
