//! Disentanglement metric: a linear classifier predicts which factor was
//! held fixed from mean absolute latent differences of matched pairs.

use std::fmt;

use rayon::prelude::*;

use crate::autodiff::{Graph, Param, ParamKind};
use crate::error::{Error, Result};
use crate::evalsuite::shapes::{sample_factors, FactorVector, ShapeAtlas, FACTOR_RANGES};
use crate::models::{OptimizerKind, OptimizerState};
use crate::numerics::rng::{child_rng, derive_seed, uniform_int};
use crate::numerics::Tensor;

/// Number of classes: the fixed factor is one of factors 2 to 5.
pub const CLASSES: usize = 4;

/// Maps rendered shapes to latent codes.
pub trait Encoder: Sync {
    fn latent_dim(&self) -> usize;

    /// One row per shape.
    fn encode(&self, atlas: &ShapeAtlas, shapes: &[FactorVector]) -> Result<Tensor>;
}

/// Returns the ground-truth factors scaled to `[0, 1]`.
pub struct OracleEncoder;

impl Encoder for OracleEncoder {
    fn latent_dim(&self) -> usize {
        5
    }

    fn encode(&self, _: &ShapeAtlas, shapes: &[FactorVector]) -> Result<Tensor> {
        let data = shapes.iter().flat_map(|u| u.normalized()).collect();
        Tensor::matrix(shapes.len(), 5, data)
    }
}

/// Ignores its input.
pub struct ConstantEncoder(pub Vec<f64>);

impl Encoder for ConstantEncoder {
    fn latent_dim(&self) -> usize {
        self.0.len()
    }

    fn encode(&self, _: &ShapeAtlas, shapes: &[FactorVector]) -> Result<Tensor> {
        Tensor::matrix(shapes.len(), self.0.len(), self.0.repeat(shapes.len()))
    }
}

/// The raw pixels as the code.
pub struct PixelEncoder {
    pub side: usize,
}

impl Encoder for PixelEncoder {
    fn latent_dim(&self) -> usize {
        self.side * self.side
    }

    fn encode(&self, atlas: &ShapeAtlas, shapes: &[FactorVector]) -> Result<Tensor> {
        check_atlas(atlas, self.side)?;
        let n = atlas.pixel_count();
        let mut data = vec![0.0; shapes.len() * n];
        for (u, row) in shapes.iter().zip(data.chunks_mut(n)) {
            atlas.render_into(*u, row);
        }
        Tensor::matrix(shapes.len(), n, data)
    }
}

/// A network applied to the rendered pixels.
pub struct GraphEncoder {
    pub graph: Graph,
    pub side: usize,
}

impl Encoder for GraphEncoder {
    fn latent_dim(&self) -> usize {
        self.graph.output_dim()
    }

    fn encode(&self, atlas: &ShapeAtlas, shapes: &[FactorVector]) -> Result<Tensor> {
        check_atlas(atlas, self.side)?;
        let pixels = PixelEncoder { side: self.side }.encode(atlas, shapes)?;
        self.graph.forward_values(&pixels)
    }
}

fn check_atlas(atlas: &ShapeAtlas, side: usize) -> Result<()> {
    if atlas.side() != side {
        return Err(Error::Dimension(format!(
            "encoder expects {side}×{side} images, renderer produces {}×{}",
            atlas.side(),
            atlas.side()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricBatch {
    /// `n_batch × m` mean absolute differences.
    pub inputs: Tensor,
    /// Fixed factor per instance, in `2..=5`.
    pub targets: Vec<usize>,
}

fn make_instance(n_inst: usize, enc: &dyn Encoder, atlas: &ShapeAtlas, seed: u64) -> Result<(Vec<f64>, usize)> {
    let mut rng = crate::numerics::rng::seeded(seed);
    let i = uniform_int(&mut rng, 2, 5) as usize;
    let v = uniform_int(&mut rng, 1, FACTOR_RANGES[i - 1]);
    let mut shapes = Vec::with_capacity(2 * n_inst);
    for _ in 0..2 * n_inst {
        shapes.push(sample_factors(&mut rng, i, v)?);
    }
    let codes = enc.encode(atlas, &shapes)?;
    let m = enc.latent_dim();
    if codes.dims() != [2 * n_inst, m] {
        return Err(Error::Dimension(format!(
            "encoder returned {:?} for {} shapes of latent size {m}",
            codes.dims(),
            2 * n_inst
        )));
    }
    codes.ensure_finite("encoder output")?;
    let mut z = vec![0.0; m];
    for p in 0..n_inst {
        let (a, b) = (codes.row_slice(2 * p), codes.row_slice(2 * p + 1));
        for ((acc, x), y) in z.iter_mut().zip(a).zip(b) {
            *acc += (x - y).abs();
        }
    }
    z.iter_mut().for_each(|x| *x /= n_inst as f64);
    Ok((z, i))
}

/// `n_batch` instances, each averaging `|enc(x₀) − enc(x₁)|` over `n_inst`
/// pairs that share one uniformly chosen factor in `2..=5`. Instance `j`
/// draws from its own stream derived from `seed`, so the batch does not
/// depend on scheduling.
pub fn make_metric_batch(
    n_inst: usize,
    n_batch: usize,
    enc: &dyn Encoder,
    atlas: &ShapeAtlas,
    seed: u64,
) -> Result<MetricBatch> {
    if n_inst == 0 || n_batch == 0 {
        return Err(Error::Invalid("n_inst and n_batch must be positive".into()));
    }
    let instances: Vec<(Vec<f64>, usize)> = (0..n_batch)
        .into_par_iter()
        .map(|j| make_instance(n_inst, enc, atlas, derive_seed(seed, "metric-instance", j as u64)))
        .collect::<Result<_>>()?;
    let m = enc.latent_dim();
    let mut data = Vec::with_capacity(n_batch * m);
    let mut targets = Vec::with_capacity(n_batch);
    for (z, i) in instances {
        data.extend(z);
        targets.push(i);
    }
    Ok(MetricBatch {
        inputs: Tensor::matrix(n_batch, m, data)?,
        targets,
    })
}

/// Multinomial logistic regression over the four fixed-factor classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `[weight m × 4, bias 1 × 4]`.
    pub params: Vec<Param>,
}

impl LinearClassifier {
    pub fn new(m: usize) -> Self {
        LinearClassifier {
            params: vec![
                Param {
                    name: "classifier.weight".into(),
                    kind: ParamKind::Weight,
                    value: Tensor::zeros(&[m, CLASSES]),
                },
                Param {
                    name: "classifier.bias".into(),
                    kind: ParamKind::Bias,
                    value: Tensor::zeros(&[1, CLASSES]),
                },
            ],
        }
    }

    fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let mut logits = x.matmul(&self.params[0].value)?;
        let b = self.params[1].value.data();
        for r in 0..logits.rows() {
            let row = &mut logits.data_mut()[r * CLASSES..(r + 1) * CLASSES];
            let mut top = f64::NEG_INFINITY;
            for (l, bias) in row.iter_mut().zip(b) {
                *l += bias;
                top = top.max(*l);
            }
            let mut total = 0.0;
            for l in row.iter_mut() {
                *l = (*l - top).exp();
                total += *l;
            }
            row.iter_mut().for_each(|l| *l /= total);
        }
        Ok(logits)
    }

    /// Predicted fixed factor, in `2..=5`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.probabilities(x)?;
        Ok((0..p.rows())
            .map(|r| {
                let row = p.row_slice(r);
                let best = (0..CLASSES).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                best + 2
            })
            .collect())
    }

    /// Mean cross-entropy and its gradient.
    pub fn loss_and_grad(&self, batch: &MetricBatch) -> Result<(f64, Vec<Tensor>)> {
        let x = &batch.inputs;
        let n = x.rows() as f64;
        let mut delta = self.probabilities(x)?;
        let mut loss = 0.0;
        for (r, &t) in batch.targets.iter().enumerate() {
            let c = t - 2;
            loss -= delta.get(r, c).max(1e-300).ln();
            delta.set(r, c, delta.get(r, c) - 1.0);
        }
        let delta = delta.scale(1.0 / n);
        let gw = x.transpose().matmul(&delta)?;
        let mut gb = vec![0.0; CLASSES];
        for r in 0..delta.rows() {
            for (acc, d) in gb.iter_mut().zip(delta.row_slice(r)) {
                *acc += d;
            }
        }
        Ok((loss / n, vec![gw, Tensor::row(&gb)]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub n_inst: usize,
    pub n_batch: usize,
    pub train_steps: usize,
    pub eval_instances: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            n_inst: 64,
            n_batch: 32,
            train_steps: 10_000,
            eval_instances: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    /// Accuracy in percent.
    pub score: f64,
    /// Binomial standard error of `score`, in percent.
    pub stderr: f64,
    pub train_steps: usize,
    pub eval_instances: usize,
    pub seed: u64,
}

impl ScoreReport {
    pub const CSV_HEADER: &'static str = "score,stderr,train_steps,eval_instances,seed";
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.score, self.stderr, self.train_steps, self.eval_instances, self.seed
        )
    }
}

/// Trains the classifier on fresh batches for `train_steps` SGD-Nesterov
/// updates, then scores it on `eval_instances` instances drawn from a
/// stream disjoint from training.
pub fn disentanglement_score(enc: &dyn Encoder, atlas: &ShapeAtlas, cfg: &MetricConfig) -> Result<ScoreReport> {
    if cfg.eval_instances == 0 {
        return Err(Error::Invalid("eval_instances must be positive".into()));
    }
    let mut clf = LinearClassifier::new(enc.latent_dim());
    let mut opt = OptimizerState::new(OptimizerKind::classifier_nesterov(), &clf.params);
    for step in 0..cfg.train_steps {
        let seed = derive_seed(cfg.seed, "metric-train", step as u64);
        let batch = make_metric_batch(cfg.n_inst, cfg.n_batch, enc, atlas, seed)?;
        let (loss, grads) = clf.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: step as u64,
                reason: "classifier loss is not finite".into(),
            });
        }
        opt.update(&mut clf.params, &grads)?;
    }
    let mut rng = child_rng(cfg.seed, "metric-eval", 0);
    let eval_seed = uniform_u64(&mut rng);
    let batch = make_metric_batch(cfg.n_inst, cfg.eval_instances, enc, atlas, eval_seed)?;
    let pred = clf.predict(&batch.inputs)?;
    let hits = pred.iter().zip(&batch.targets).filter(|(p, t)| p == t).count();
    let n = cfg.eval_instances as f64;
    let p = hits as f64 / n;
    Ok(ScoreReport {
        score: 100.0 * p,
        stderr: 100.0 * (p * (1.0 - p) / n).sqrt(),
        train_steps: cfg.train_steps,
        eval_instances: cfg.eval_instances,
        seed: cfg.seed,
    })
}

fn uniform_u64(rng: &mut crate::numerics::rng::SeedRng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}
