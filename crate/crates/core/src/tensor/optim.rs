use serde::{Deserialize, Serialize};

use super::{Float, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Coupled L2 decay: `wd * param` is added to the gradient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the shared step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// One Adam update of a single tensor. `step` is the 1-based step used for
/// bias correction.
pub fn adam_update<T: Float>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "param {} / grad {} / moments {} {}",
                param.len(),
                grad.len(),
                m.len(),
                v.len()
            ),
        ));
    }
    if step == 0 {
        return Err(Error::InvalidArgument("adam step counter must be >= 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let p = param[i].as_f64();
        let g = grad[i].as_f64() + cfg.weight_decay * p;
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let update = cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        param[i] = T::from_f64(p - update);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState::default(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update to every parameter using its accumulated gradient.
    /// Parameters that received no gradient are treated as having gradient zero.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let params = store.params_mut();
        if self.state.m.is_empty() {
            self.state.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.state.v = self.state.m.clone();
        }
        if self.state.m.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "optimizer tracks {} tensors, store has {}",
                    self.state.m.len(),
                    params.len()
                ),
            ));
        }
        self.state.step += 1;
        let step = self.state.step;
        for (i, p) in params.iter_mut().enumerate() {
            let grad = match p.value.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.value.len()],
            };
            adam_update(
                p.value.data_mut(),
                &grad,
                &mut self.state.m[i],
                &mut self.state.v[i],
                step,
                &self.config,
            )?;
        }
        Ok(())
    }
}
