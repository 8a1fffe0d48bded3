//! Encoder training against a frozen generator.

use std::rc::Rc;

use crate::autodiff::{Graph, Tape};
use crate::error::{Error, Result};
use crate::models::{OptimizerKind, OptimizerState};
use crate::numerics::rng::{child_rng, standard_normal};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 30_000,
            batch: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Mean of `‖g(enc(x)) − x‖²` over the rows of `x`, with the encoder
/// parameter gradients.
pub fn reconstruction_loss(g: &Graph, enc: &Graph, x: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    if enc.output_dim() != g.input_dim() || enc.input_dim() != g.output_dim() {
        return Err(Error::Dimension(format!(
            "encoder {} → {} cannot invert generator {} → {}",
            enc.input_dim(),
            enc.output_dim(),
            g.input_dim(),
            g.output_dim()
        )));
    }
    let tape = Tape::new();
    let ep = enc.bind(&tape);
    let gp = g.bind(&tape);
    let xv = tape.leaf(x.clone());
    let z = *enc.forward(&tape, xv, &ep).last().expect("b₀ present");
    let xh = *g.forward(&tape, z, &gp).last().expect("b₀ present");
    let target = Rc::new(x.scale(-1.0));
    let r = tape.add(xh, tape.leaf((*target).clone()));
    let loss = tape.scale(tape.sum(tape.square(r)), 1.0 / x.rows() as f64);
    let value = tape.value(loss).data()[0];
    let one = tape.leaf(Tensor::scalar(1.0));
    let grads = tape.grad(&[loss], &[one], &ep)?;
    Ok((value, grads.iter().map(|&v| (*tape.value(v)).clone()).collect()))
}

/// Trains `init` for `cfg.steps` Adam updates on batches `x = g(z)` with
/// `z` drawn from the standard normal prior. Returns the encoder and the
/// per-step losses.
pub fn train_inversion_encoder(g: &Graph, init: Graph, cfg: &InversionConfig) -> Result<(Graph, Vec<f64>)> {
    if cfg.batch == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut enc = init;
    let mut opt = OptimizerState::new(OptimizerKind::encoder_adam(cfg.lr), enc.params());
    let mut rng = child_rng(cfg.seed, "inversion", 0);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let z = standard_normal(&mut rng, &[cfg.batch, g.input_dim()]);
        let x = g.forward_values(&z)?;
        let (loss, grads) = reconstruction_loss(g, &enc, &x)?;
        if !loss.is_finite() || grads.iter().any(|t| !t.all_finite()) {
            return Err(Error::Diverged {
                step: step as u64,
                reason: "reconstruction loss is not finite".into(),
            });
        }
        opt.update(enc.params_mut(), &grads)?;
        losses.push(loss);
    }
    Ok((enc, losses))
}
