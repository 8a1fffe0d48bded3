//! RMSProp, Nesterov SGD and Adam with PReLU leak clipping.

use crate::autodiff::{Param, ParamKind};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// `s ← ρ s + (1 − ρ) g²;  θ ← θ − η g / √(s + ε)`
    RmsProp { lr: f64, decay: f64, eps: f64 },
    /// `v ← μ v + g;  θ ← θ − η (g + μ v)`
    Nesterov { lr: f64, momentum: f64 },
    /// Bias-corrected Adam.
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    /// GAN training settings: step 1e-4, decay 0.9, ε 1e-6.
    pub fn gan_rmsprop() -> Self {
        OptimizerKind::RmsProp {
            lr: 1e-4,
            decay: 0.9,
            eps: 1e-6,
        }
    }

    /// Metric classifier settings: step 1e-2, momentum 0.99.
    pub fn classifier_nesterov() -> Self {
        OptimizerKind::Nesterov {
            lr: 1e-2,
            momentum: 0.99,
        }
    }

    /// Encoder settings: β₁ 0.5, β₂ 0.99, ε 1e-8 with the given step size.
    pub fn encoder_adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::RmsProp { .. } => "rmsprop",
            OptimizerKind::Nesterov { .. } => "sgd-nesterov",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    fn slot_count(&self) -> usize {
        match self {
            OptimizerKind::Adam { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    /// `slots[s][p]` is accumulator `s` for parameter `p`: the mean square
    /// for RMSProp, the velocity for Nesterov, first and second moments for
    /// Adam.
    pub slots: Vec<Vec<Tensor>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[Param]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.dims())).collect();
        OptimizerState {
            kind,
            step: 0,
            slots: vec![zeros; kind.slot_count()],
        }
    }

    /// Applies one update in place and clips every leak parameter to `[0, 1]`.
    pub fn update(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.slots.iter().any(|s| s.len() != params.len()) {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.value.dims() != g.dims() {
                return Err(Error::Dimension(format!(
                    "gradient for '{}' is {:?}, parameter is {:?}",
                    p.name,
                    g.dims(),
                    p.value.dims()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient for '{}'", p.name)));
            }
            debug_assert_eq!(self.slots[0][i].dims(), g.dims());
        }

        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let theta = p.value.data_mut();
            let g = g.data();
            match self.kind {
                OptimizerKind::RmsProp { lr, decay, eps } => {
                    let s = self.slots[0][i].data_mut();
                    for j in 0..g.len() {
                        s[j] = decay * s[j] + (1.0 - decay) * g[j] * g[j];
                        theta[j] -= lr * g[j] / (s[j] + eps).sqrt();
                    }
                }
                OptimizerKind::Nesterov { lr, momentum } => {
                    let v = self.slots[0][i].data_mut();
                    for j in 0..g.len() {
                        v[j] = momentum * v[j] + g[j];
                        theta[j] -= lr * (g[j] + momentum * v[j]);
                    }
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (first, second) = self.slots.split_at_mut(1);
                    let m = first[0][i].data_mut();
                    let v = second[0][i].data_mut();
                    for j in 0..g.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        theta[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
            if p.kind == ParamKind::Leak {
                for x in theta.iter_mut() {
                    *x = x.clamp(0.0, 1.0);
                }
            }
        }
        Ok(())
    }
}
