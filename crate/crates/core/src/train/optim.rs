//! Adaptive-moment optimizer with rectified variance warm-up, and parameter averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adaptive moments with the variance rectification term; plain momentum
    /// steps while the variance estimate is unreliable.
    #[default]
    Radam,
    Adam,
}

/// Learning-rate multiplier over the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half cosine from 1 at the first step toward 0 at the last.
    Cosine,
}

impl LrSchedule {
    /// Multiplier for 1-based `step` of a run lasting `total` steps.
    pub fn factor(self, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let x = step.saturating_sub(1).min(total) as f64 / total.max(1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Radam,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F: Scalar> {
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

/// Rectification factor at step `t`, or `None` while the variance is not yet tractable.
pub fn radam_rectifier(beta2: f64, t: u64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t as i32);
    let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
    (rho > 5.0).then(|| {
        ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt()
    })
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ParamStore<F>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
                .collect()
        };
        OptimizerState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every parameter from its gradient.
    pub fn update(
        &mut self,
        cfg: &OptimizerConfig,
        params: &mut ParamStore<F>,
        grads: &[Tensor<F>],
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        // lr · m̂ / (sqrt(v̂) + eps) with the bias corrections folded into the scalars
        let adaptive = match cfg.kind {
            OptimizerKind::Adam => Some(1.0),
            OptimizerKind::Radam => radam_rectifier(b2, t),
        };
        let (fb1, fb2) = (F::lit(b1), F::lit(b2));
        let (gb1, gb2) = (F::lit(1.0 - b1), F::lit(1.0 - b2));
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..g.len() {
                m[k] = fb1 * m[k] + gb1 * g[k];
                v[k] = fb2 * v[k] + gb2 * g[k] * g[k];
            }
            let p = params.tensor_mut(id).data_mut();
            match adaptive {
                Some(r) => {
                    let step = F::lit(cfg.lr * r * bc2.sqrt() / bc1);
                    let eps = F::lit(cfg.eps * bc2.sqrt());
                    for k in 0..p.len() {
                        p[k] -= step * m[k] / (v[k].sqrt() + eps);
                    }
                }
                None => {
                    let step = F::lit(cfg.lr / bc1);
                    for k in 0..p.len() {
                        p[k] -= step * m[k];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exponential moving average of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema<F: Scalar> {
    pub decay: f64,
    pub shadow: ParamStore<F>,
}

impl<F: Scalar> Ema<F> {
    pub fn new(params: &ParamStore<F>, decay: f64) -> Self {
        Ema {
            decay,
            shadow: params.clone(),
        }
    }

    /// `shadow ← decay · shadow + (1 − decay) · params`.
    pub fn update(&mut self, params: &ParamStore<F>) {
        let (d, e) = (F::lit(self.decay), F::lit(1.0 - self.decay));
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let src = params.get(id).tensor.data();
            for (s, &p) in self.shadow.tensor_mut(id).data_mut().iter_mut().zip(src) {
                *s = d * *s + e * p;
            }
        }
    }
}
