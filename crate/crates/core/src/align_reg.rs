//! The eigenvector alignment penalty `R_k`.
//!
//! With `V̂` the masked power-iteration estimate of the top `k`
//! eigenvectors of `M_z(z)`, `R_k(z) = Σ (S_k ∘ V̂ ∘ V̂)` where `S_k` is `+1`
//! everywhere except `−1` at `(j, j)`, and column `j` of `S_k` is scaled by
//! a priority weight. It reaches `−1` exactly when every `v̂_j = ±e_j`.

use std::rc::Rc;

use crate::autodiff::{ForwardPass, Graph};
use crate::error::{ensure, Error, Result};
use crate::numerics::rng::derive_seed;
use crate::numerics::{rademacher_matrix, Tensor};
use crate::spectral::{self, check_k};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnWeighting {
    /// `(k − j + 1) · 2 / (k(k + 1))` for column `j`.
    #[default]
    Priority,
    /// `1 / k` for every column.
    Uniform,
}

/// Which power iterations the penalty gradient flows through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientFlow {
    #[default]
    FullUnroll,
    /// Only the last iteration; earlier iterates are constants.
    FinalIteration,
    /// `V̂` is a constant, so the penalty contributes no gradient.
    Detached,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentConfig {
    pub k: usize,
    pub iterations: usize,
    pub weighting: ColumnWeighting,
    pub flow: GradientFlow,
}

impl AlignmentConfig {
    pub fn new(k: usize, iterations: usize) -> Self {
        AlignmentConfig {
            k,
            iterations,
            weighting: ColumnWeighting::Priority,
            flow: GradientFlow::FullUnroll,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        check_k(m, self.k)?;
        ensure(self.iterations >= 1, || "at least one power iteration is required".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegMask {
    /// `m × k`, `−1` at `(j, j)` and `+1` elsewhere.
    pub signs: Tensor,
    pub weights: Vec<f64>,
}

impl RegMask {
    /// Signs with each column scaled by its weight.
    pub fn weighted(&self) -> Tensor {
        let mut s = self.signs.clone();
        for i in 0..s.rows() {
            for (j, w) in self.weights.iter().enumerate() {
                s.set(i, j, s.get(i, j) * w);
            }
        }
        s
    }
}

pub fn build_reg_mask(m: usize, k: usize) -> Result<RegMask> {
    build_reg_mask_with(m, k, ColumnWeighting::Priority)
}

pub fn build_reg_mask_with(m: usize, k: usize, weighting: ColumnWeighting) -> Result<RegMask> {
    check_k(m, k)?;
    let mut signs = Tensor::filled(&[m, k], 1.0);
    for j in 0..k {
        signs.set(j, j, -1.0);
    }
    let weights = match weighting {
        ColumnWeighting::Priority => {
            let alpha = 2.0 / (k * (k + 1)) as f64;
            (0..k).map(|j| (k - j) as f64 * alpha).collect()
        }
        ColumnWeighting::Uniform => vec![1.0 / k as f64; k],
    };
    Ok(RegMask { signs, weights })
}

/// Rademacher start for latent sample `index` of a call seeded with `seed`.
pub fn initial_estimates(m: usize, k: usize, seed: u64, index: u64) -> Tensor {
    rademacher_matrix(m, k, derive_seed(seed, "power-init", index))
}

/// `R_k(z)` from the value-only power iteration.
pub fn evaluate_alignment_regularizer(g: &Graph, z: &[f64], cfg: &AlignmentConfig, seed: u64) -> Result<f64> {
    let m = g.input_dim();
    cfg.validate(m)?;
    let v0 = initial_estimates(m, cfg.k, seed, 0);
    let est = spectral::estimate_for_graph(g, z, &v0, cfg.iterations)?;
    let s = build_reg_mask_with(m, cfg.k, cfg.weighting)?.weighted();
    let sq = est.vectors.hadamard(&est.vectors)?;
    Ok(s.dot(&sq))
}

/// `mean_b R_k(z_b)` without gradients; sample `b` uses the same start as
/// in [`alignment_penalty_batch`].
pub fn alignment_penalty_value(g: &Graph, zs: &Tensor, cfg: &AlignmentConfig, seed: u64) -> Result<f64> {
    Ok(penalty_on_tape(g, zs, cfg, seed, false)?.value)
}

/// Mean penalty over a batch together with its gradient with respect to
/// every parameter of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGradient {
    pub value: f64,
    /// Per-sample `R_k(z_b)`.
    pub samples: Vec<f64>,
    /// One tensor per generator parameter, in parameter order; empty when
    /// only the value was requested.
    pub grads: Vec<Tensor>,
}

/// `mean_b R_k(z_b)` over the rows of `zs` and its parameter gradient, from
/// a single forward pass over `k` stacked copies of every latent sample.
/// Sample `b` starts from [`initial_estimates`]`(m, k, seed, b)`.
pub fn alignment_penalty_batch(g: &Graph, zs: &Tensor, cfg: &AlignmentConfig, seed: u64) -> Result<PenaltyGradient> {
    penalty_on_tape(g, zs, cfg, seed, true)
}

fn penalty_on_tape(g: &Graph, zs: &Tensor, cfg: &AlignmentConfig, seed: u64, with_grad: bool) -> Result<PenaltyGradient> {
    let m = g.input_dim();
    cfg.validate(m)?;
    if zs.rank() != 2 || zs.cols() != m || zs.rows() == 0 {
        return Err(Error::Dimension(format!(
            "latent batch must be b × {m}, got {:?}",
            zs.dims()
        )));
    }
    zs.ensure_finite("latent batch")?;
    let (b, k) = (zs.rows(), cfg.k);
    let rows = b * k;

    let mut stacked = Vec::with_capacity(rows * m);
    let mut v0 = Vec::with_capacity(rows * m);
    for s in 0..b {
        for _ in 0..k {
            stacked.extend_from_slice(zs.row_slice(s));
        }
        v0.extend_from_slice(initial_estimates(m, k, seed, s as u64).transpose().data());
    }
    let mask_rows = spectral::build_eigvec_mask(m, k)?.rows_layout();
    let sign_rows = build_reg_mask_with(m, k, cfg.weighting)?.weighted().transpose();
    let tile = |t: &Tensor| Tensor::matrix(rows, m, t.data().repeat(b)).expect("tiled shape");

    let pass = ForwardPass::record(g, &Tensor::matrix(rows, m, stacked)?)?;
    let tape = pass.tape();
    let v0 = tape.leaf(Tensor::matrix(rows, m, v0)?);
    let detach_before = match cfg.flow {
        GradientFlow::FullUnroll => 0,
        GradientFlow::FinalIteration => cfg.iterations - 1,
        GradientFlow::Detached => cfg.iterations,
    };
    let (v, _) = spectral::power_iteration_on_tape(
        tape,
        pass.linearization(),
        v0,
        Rc::new(tile(&mask_rows)),
        cfg.iterations,
        detach_before,
    )?;
    let v = if cfg.flow == GradientFlow::Detached {
        tape.leaf((*tape.value(v)).clone())
    } else {
        v
    };

    let vv = tape.square(v);
    let signed = tape.mul_const(vv, Rc::new(tile(&sign_rows)));
    let per_row = tape.value(tape.sum_axis(signed, crate::autodiff::Axis::Cols));
    let samples: Vec<f64> = per_row.data().chunks(k).map(|c| c.iter().sum()).collect();
    let total = tape.scale(tape.sum(signed), 1.0 / b as f64);
    let value = tape.value(total).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("alignment penalty".into()));
    }

    if !with_grad {
        return Ok(PenaltyGradient {
            value,
            samples,
            grads: Vec::new(),
        });
    }
    let seed_one = tape.leaf(Tensor::scalar(1.0));
    let grads = tape.grad(&[total], &[seed_one], pass.params())?;
    let grads: Vec<Tensor> = grads.iter().map(|&v| (*tape.value(v)).clone()).collect();
    for (p, gr) in g.params().iter().zip(&grads) {
        if !gr.all_finite() {
            return Err(Error::NonFinite(format!("penalty gradient for '{}'", p.name)));
        }
    }
    Ok(PenaltyGradient { value, samples, grads })
}

/// `R_k(z)` and its parameter gradient at a single latent point.
pub fn alignment_regularizer_grad(g: &Graph, z: &[f64], cfg: &AlignmentConfig, seed: u64) -> Result<PenaltyGradient> {
    alignment_penalty_batch(g, &Tensor::row(z), cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reg_mask_examples() {
        let r = build_reg_mask(4, 2).unwrap();
        assert_eq!(r.signs.data(), &[-1., 1., 1., -1., 1., 1., 1., 1.]);
        let w = build_reg_mask(5, 3).unwrap().weights;
        for (a, b) in w.iter().zip([0.5, 1.0 / 3.0, 1.0 / 6.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(build_reg_mask(3, 1).unwrap().weights, vec![1.0]);
        assert!(build_reg_mask(2, 3).is_err());
        let u = build_reg_mask_with(4, 4, ColumnWeighting::Uniform).unwrap();
        assert_eq!(u.weights, vec![0.25; 4]);
    }

    #[test]
    fn axis_aligned_linear_generator() {
        let a = Tensor::matrix(3, 2, vec![2.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let g = Graph::linear(&a).unwrap();
        let r = evaluate_alignment_regularizer(&g, &[0.3, -0.2], &AlignmentConfig::new(2, 50), 4).unwrap();
        assert!((r + 1.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn rotated_example() {
        // AᵀA = [[2.5, 1.5], [1.5, 2.5]]
        let s = 0.5f64.sqrt();
        let a = Tensor::matrix(2, 2, vec![2.0 * s, 2.0 * s, -s, s]).unwrap();
        let g = Graph::linear(&a).unwrap();
        let r = evaluate_alignment_regularizer(&g, &[0.0, 0.0], &AlignmentConfig::new(2, 200), 1).unwrap();
        assert!((r + 1.0 / 3.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn batch_value_matches_pointwise() {
        let a = Tensor::matrix(3, 3, vec![1.0, 0.4, 0.2, -0.3, 0.8, 0.1, 0.5, 0.0, 0.6]).unwrap();
        let g = Graph::linear(&a).unwrap();
        let cfg = AlignmentConfig::new(2, 10);
        let zs = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 0.0, 2.0]).unwrap();
        let pg = alignment_penalty_batch(&g, &zs, &cfg, 9).unwrap();
        let single = evaluate_alignment_regularizer(&g, zs.row_slice(0), &cfg, 9).unwrap();
        assert!((pg.samples[0] - single).abs() < 1e-12);
        assert!((pg.value - 0.5 * (pg.samples[0] + pg.samples[1])).abs() < 1e-14);
        let plain = alignment_penalty_value(&g, &zs, &cfg, 9).unwrap();
        assert!((plain - pg.value).abs() < 1e-12);
    }

    #[test]
    fn detached_flow_has_zero_gradient() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.3, 0.2, 0.7]).unwrap();
        let g = Graph::linear(&a).unwrap();
        let mut cfg = AlignmentConfig::new(2, 5);
        cfg.flow = GradientFlow::Detached;
        let pg = alignment_regularizer_grad(&g, &[0.0, 0.0], &cfg, 0).unwrap();
        assert!(pg.grads.iter().all(|t| t.max_abs() == 0.0));
        cfg.flow = GradientFlow::FinalIteration;
        let pg = alignment_regularizer_grad(&g, &[0.0, 0.0], &cfg, 0).unwrap();
        assert!(pg.grads[0].max_abs() > 0.0);
    }
}
