//! GAN training with the alignment penalty added to the generator loss.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::align_reg::{alignment_penalty_batch, alignment_penalty_value, AlignmentConfig, ColumnWeighting, GradientFlow};
use crate::autodiff::{Graph, Tape, Var};
use crate::error::{ensure, Error, Result};
use crate::evalsuite::{FactorVector, ShapeAtlas, FACTOR_RANGES};
use crate::models::{build_net, Architecture, NetKind, NetSpec, OptimizerKind, OptimizerState};
use crate::numerics::rng::{child_rng, derive_seed, standard_normal, uniform_int, SeedRng};
use crate::numerics::Tensor;

/// Discriminator probabilities are clamped to `[P_MIN, 1 − P_MIN]`.
pub const P_MIN: f64 = 1e-7;

/// Input noise for binary sprite data.
pub const SHAPE_NOISE_STD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Uniformly sampled sprites.
    Shapes { side: usize },
    /// `x = B s` with `s ~ N(0, I)` and `B` an orthonormal `data_dim × r`
    /// basis scaled column-wise by `scales`.
    LinearFactors {
        data_dim: usize,
        scales: Vec<f64>,
        basis_seed: u64,
    },
}

impl Dataset {
    pub fn data_dim(&self) -> usize {
        match self {
            Dataset::Shapes { side } => side * side,
            Dataset::LinearFactors { data_dim, .. } => *data_dim,
        }
    }
}

enum Source {
    Shapes(ShapeAtlas),
    Linear(Tensor),
}

impl Source {
    fn new(d: &Dataset) -> Result<Self> {
        match d {
            Dataset::Shapes { side } => Ok(Source::Shapes(ShapeAtlas::new(*side)?)),
            Dataset::LinearFactors {
                data_dim,
                scales,
                basis_seed,
            } => Ok(Source::Linear(factor_basis(*data_dim, scales, *basis_seed)?)),
        }
    }

    fn sample(&self, rng: &mut SeedRng, batch: usize) -> Result<Tensor> {
        match self {
            Source::Shapes(atlas) => {
                let n = atlas.pixel_count();
                let mut data = vec![0.0; batch * n];
                for row in data.chunks_mut(n) {
                    let mut u = [0; 5];
                    for (x, &c) in u.iter_mut().zip(&FACTOR_RANGES) {
                        *x = uniform_int(rng, 1, c);
                    }
                    atlas.render_into(FactorVector(u), row);
                }
                Tensor::matrix(batch, n, data)
            }
            Source::Linear(b) => {
                let s = standard_normal(rng, &[batch, b.cols()]);
                s.matmul(&b.transpose())
            }
        }
    }
}

/// Orthonormal columns by Gram–Schmidt on Gaussian draws, then scaled.
pub fn factor_basis(data_dim: usize, scales: &[f64], seed: u64) -> Result<Tensor> {
    let r = scales.len();
    ensure(r >= 1 && r <= data_dim, || format!("need 1 ≤ factors ≤ {data_dim}, got {r}"))?;
    let mut rng = child_rng(seed, "factor-basis", 0);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v = standard_normal(&mut rng, &[data_dim]).into_data();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut b = Tensor::zeros(&[data_dim, r]);
    for (j, c) in cols.iter().enumerate() {
        for (i, &x) in c.iter().enumerate() {
            b.set(i, j, x * scales[j]);
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    /// Eigenvectors to align.
    pub k: usize,
    /// Power iterations per penalty evaluation.
    pub iterations: usize,
    pub lambda: f64,
    pub batch: usize,
    /// Generator updates.
    pub updates: usize,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub noise_std: f64,
    pub g_optimizer: OptimizerKind,
    pub d_optimizer: OptimizerKind,
    pub seed: u64,
    pub dataset: Dataset,
    pub generator: Architecture,
    pub discriminator: Architecture,
    /// Whether the generator ends in the `[0, 1]` squash.
    pub squash: bool,
    pub weighting: ColumnWeighting,
    pub flow: GradientFlow,
    /// Checkpoint every this many updates; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Directory for `metrics.csv` and `checkpoint.spdt`.
    pub out_dir: Option<PathBuf>,
    /// Whether `ms_per_step` records wall time. When off it is logged as
    /// zero, making the metrics file byte-reproducible.
    pub timing: bool,
}

impl TrainConfig {
    /// Small sprite GAN.
    pub fn shapes(side: usize) -> Self {
        TrainConfig {
            latent_dim: 4,
            k: 2,
            iterations: 4,
            lambda: 0.1,
            batch: 32,
            updates: 10_000,
            d_steps: 1,
            noise_std: SHAPE_NOISE_STD,
            g_optimizer: OptimizerKind::gan_rmsprop(),
            d_optimizer: OptimizerKind::gan_rmsprop(),
            seed: 0,
            dataset: Dataset::Shapes { side },
            generator: Architecture::Mlp { hidden: vec![32, 64] },
            discriminator: Architecture::Mlp { hidden: vec![64, 32] },
            squash: true,
            weighting: ColumnWeighting::Priority,
            flow: GradientFlow::FullUnroll,
            checkpoint_every: 0,
            out_dir: None,
            timing: true,
        }
    }

    /// Affine generator against Gaussian data with a linear factor model.
    pub fn linear(latent_dim: usize, data_dim: usize, scales: Vec<f64>) -> Self {
        TrainConfig {
            latent_dim,
            noise_std: 0.0,
            dataset: Dataset::LinearFactors {
                data_dim,
                scales,
                basis_seed: 0,
            },
            generator: Architecture::Mlp { hidden: Vec::new() },
            discriminator: Architecture::Mlp { hidden: vec![32] },
            squash: false,
            ..TrainConfig::shapes(16)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.latent_dim >= 1, || "latent size must be positive".into())?;
        ensure(self.k >= 1 && self.k <= self.latent_dim, || {
            format!("need 1 ≤ k ≤ m, got k = {}, m = {}", self.k, self.latent_dim)
        })?;
        ensure(self.iterations >= 1, || "at least one power iteration is required".into())?;
        ensure(self.lambda >= 0.0 && self.lambda.is_finite(), || {
            format!("penalty weight {} must be a non-negative number", self.lambda)
        })?;
        ensure(self.noise_std >= 0.0 && self.noise_std.is_finite(), || {
            format!("noise std {} must be a non-negative number", self.noise_std)
        })?;
        ensure(self.batch >= 1 && self.d_steps >= 1, || "batch size and d_steps must be positive".into())
    }

    pub fn generator_spec(&self) -> NetSpec {
        let mut s = NetSpec::mlp(NetKind::Generator, self.latent_dim, self.dataset.data_dim(), Vec::new());
        s.architecture = self.generator.clone();
        s.squash = self.squash;
        if let Dataset::Shapes { side } = self.dataset {
            s.image_side = Some(side);
        }
        s
    }

    pub fn discriminator_spec(&self) -> NetSpec {
        NetSpec {
            kind: NetKind::Discriminator,
            architecture: self.discriminator.clone(),
            ..self.generator_spec()
        }
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            k: self.k,
            iterations: self.iterations,
            weighting: self.weighting,
            flow: self.flow,
        }
    }
}

fn mean_log(tape: &Tape, logits: Var, real: bool) -> Var {
    let p = tape.clamp(tape.sigmoid(logits), P_MIN, 1.0 - P_MIN);
    let q = if real { p } else { tape.offset(tape.scale(p, -1.0), 1.0) };
    let n = tape.dims(logits)[0] as f64;
    tape.scale(tape.sum(tape.ln(q)), -1.0 / n)
}

fn values(tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| (*tape.value(v)).clone()).collect()
}

fn check_loss(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `−mean log D(x_real) − mean log(1 − D(x_fake))` and its gradient with
/// respect to the discriminator parameters. Inputs already carry noise.
pub fn discriminator_loss(d: &Graph, real: &Tensor, fake: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let params = d.bind(&tape);
    let xr = tape.leaf(real.clone());
    let xf = tape.leaf(fake.clone());
    let lr = *d.forward(&tape, xr, &params).last().expect("b₀ present");
    let lf = *d.forward(&tape, xf, &params).last().expect("b₀ present");
    let loss = tape.add(mean_log(&tape, lr, true), mean_log(&tape, lf, false));
    let v = check_loss(tape.value(loss).data()[0], "discriminator loss")?;
    let one = tape.leaf(Tensor::scalar(1.0));
    Ok((v, values(&tape, &tape.grad(&[loss], &[one], &params)?)))
}

/// Non-saturating `−mean log D(G(z) + η)` and its gradient with respect to
/// the generator parameters.
pub fn generator_loss(d: &Graph, g: &Graph, z: &Tensor, noise: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let gp = g.bind(&tape);
    let dp = d.bind(&tape);
    let zv = tape.leaf(z.clone());
    let x = *g.forward(&tape, zv, &gp).last().expect("b₀ present");
    let x = tape.add(x, tape.leaf(noise.clone()));
    let l = *d.forward(&tape, x, &dp).last().expect("b₀ present");
    let loss = mean_log(&tape, l, true);
    let v = check_loss(tape.value(loss).data()[0], "generator loss")?;
    let one = tape.leaf(Tensor::scalar(1.0));
    Ok((v, values(&tape, &tape.grad(&[loss], &[one], &gp)?)))
}

fn noise(rng: &mut SeedRng, rows: usize, cols: usize, std: f64) -> Tensor {
    if std == 0.0 {
        Tensor::zeros(&[rows, cols])
    } else {
        standard_normal(rng, &[rows, cols]).scale(std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    pub loss_d: f64,
    pub loss_g: f64,
}

/// Both losses on one real batch and one latent batch, with independent
/// `N(0, noise_std²)` noise on every discriminator input.
pub fn gan_losses(d: &Graph, g: &Graph, real: &Tensor, z: &Tensor, noise_std: f64, rng: &mut SeedRng) -> Result<GanLosses> {
    if real.rank() != 2 || z.rank() != 2 || real.cols() != d.input_dim() || z.cols() != g.input_dim() {
        return Err(Error::Dimension("batch shapes do not match the networks".into()));
    }
    let fake = g.forward_values(z)?;
    let (b, n) = (real.rows(), real.cols());
    let xr = real.add(&noise(rng, b, n, noise_std))?;
    let xf = fake.add(&noise(rng, fake.rows(), n, noise_std))?;
    let (loss_d, _) = discriminator_loss(d, &xr, &xf)?;
    let eta = noise(rng, fake.rows(), n, noise_std);
    let (loss_g, _) = generator_loss(d, g, z, &eta)?;
    Ok(GanLosses { loss_d, loss_g })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub reg: f64,
    pub ms_per_step: f64,
}

pub const METRICS_HEADER: &str = "step,loss_d,loss_g,reg,ms_per_step";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:.3}",
            self.step, self.loss_d, self.loss_g, self.reg, self.ms_per_step
        )
    }
}

pub struct TrainOutcome {
    pub generator: Graph,
    pub discriminator: Graph,
    pub g_opt: OptimizerState,
    pub d_opt: OptimizerState,
    pub metrics: Vec<StepMetrics>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push("meta/step", Tensor::scalar(self.metrics.len() as f64));
        c.add_graph("generator", &self.generator);
        c.add_graph("discriminator", &self.discriminator);
        c.add_optimizer("opt_g", &self.generator, &self.g_opt);
        c.add_optimizer("opt_d", &self.discriminator, &self.d_opt);
        c
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.spdt";
pub const METRICS_FILE: &str = "metrics.csv";

struct Outputs {
    dir: PathBuf,
    metrics: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut metrics = BufWriter::new(f);
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            metrics,
        })
    }

    fn log(&mut self, m: &StepMetrics) -> Result<()> {
        let path = self.dir.join(METRICS_FILE);
        writeln!(self.metrics, "{}", m.csv_row()).map_err(|e| Error::io(&path, e))
    }

    fn flush(&mut self) -> Result<()> {
        let path = self.dir.join(METRICS_FILE);
        self.metrics.flush().map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&self, outcome: &TrainOutcome) -> Result<()> {
        save_checkpoint(&self.dir.join(CHECKPOINT_FILE), &outcome.checkpoint())
    }
}

/// Alternates `d_steps` discriminator updates with one generator update.
/// The generator minimizes `loss_G + λ · mean_z R_k(z)` over its latent
/// batch. Data, latent and noise draws for update `t` come from streams
/// derived from `(seed, t)` alone, so runs differing only in `λ` see the
/// same samples.
pub fn train_gan(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let source = Source::new(&cfg.dataset)?;
    let g_spec = cfg.generator_spec();
    let generator = build_net(&g_spec, derive_seed(cfg.seed, "generator", 0))?;
    let discriminator = build_net(&cfg.discriminator_spec(), derive_seed(cfg.seed, "discriminator", 0))?;
    let mut out = TrainOutcome {
        g_opt: OptimizerState::new(cfg.g_optimizer, generator.params()),
        d_opt: OptimizerState::new(cfg.d_optimizer, discriminator.params()),
        generator,
        discriminator,
        metrics: Vec::with_capacity(cfg.updates),
    };
    let mut files = cfg.out_dir.as_deref().map(Outputs::open).transpose()?;
    let align = cfg.alignment();
    let (m, n, b) = (cfg.latent_dim, cfg.dataset.data_dim(), cfg.batch);

    for step in 0..cfg.updates {
        let start = Instant::now();
        let mut data_rng = child_rng(cfg.seed, "data", step as u64);
        let mut latent_rng = child_rng(cfg.seed, "latent", step as u64);
        let mut noise_rng = child_rng(cfg.seed, "noise", step as u64);
        let result = (|| -> Result<StepMetrics> {
            let mut loss_d = 0.0;
            for _ in 0..cfg.d_steps {
                let real = source.sample(&mut data_rng, b)?;
                let z = standard_normal(&mut latent_rng, &[b, m]);
                let fake = out.generator.forward_values(&z)?;
                let xr = real.add(&noise(&mut noise_rng, b, n, cfg.noise_std))?;
                let xf = fake.add(&noise(&mut noise_rng, b, n, cfg.noise_std))?;
                let (l, grads) = discriminator_loss(&out.discriminator, &xr, &xf)?;
                out.d_opt.update(out.discriminator.params_mut(), &grads)?;
                loss_d = l;
            }
            let z = standard_normal(&mut latent_rng, &[b, m]);
            let eta = noise(&mut noise_rng, b, n, cfg.noise_std);
            let (loss_g, mut grads) = generator_loss(&out.discriminator, &out.generator, &z, &eta)?;
            let reg_seed = derive_seed(cfg.seed, "power-init", step as u64);
            let reg = if cfg.lambda > 0.0 {
                let pg = alignment_penalty_batch(&out.generator, &z, &align, reg_seed)?;
                for (g, r) in grads.iter_mut().zip(&pg.grads) {
                    *g = g.add(&r.scale(cfg.lambda))?;
                }
                pg.value
            } else {
                alignment_penalty_value(&out.generator, &z, &align, reg_seed)?
            };
            out.g_opt.update(out.generator.params_mut(), &grads)?;
            Ok(StepMetrics {
                step,
                loss_d,
                loss_g,
                reg,
                ms_per_step: if cfg.timing {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                },
            })
        })();
        let metrics = match result {
            Ok(m) => m,
            Err(e) if e.kind() == crate::error::ErrorKind::Numeric => {
                if let Some(f) = files.as_mut() {
                    f.flush()?;
                }
                return Err(Error::Diverged {
                    step: step as u64,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        };
        out.metrics.push(metrics);
        if let Some(f) = files.as_mut() {
            f.log(&metrics)?;
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                f.flush()?;
                f.checkpoint(&out)?;
            }
        }
    }
    if let Some(f) = files.as_mut() {
        f.flush()?;
        f.checkpoint(&out)?;
    }
    Ok(out)
}

/// Rebuilds networks and optimizer states from a checkpoint written by
/// [`train_gan`] with the same configuration.
pub fn restore(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<TrainOutcome> {
    let mut generator = build_net(&cfg.generator_spec(), 0)?;
    let mut discriminator = build_net(&cfg.discriminator_spec(), 0)?;
    ckpt.restore_graph("generator", &mut generator)?;
    ckpt.restore_graph("discriminator", &mut discriminator)?;
    let mut g_opt = OptimizerState::new(cfg.g_optimizer, generator.params());
    let mut d_opt = OptimizerState::new(cfg.d_optimizer, discriminator.params());
    ckpt.restore_optimizer("opt_g", &generator, &mut g_opt)?;
    ckpt.restore_optimizer("opt_d", &discriminator, &mut d_opt)?;
    Ok(TrainOutcome {
        generator,
        discriminator,
        g_opt,
        d_opt,
        metrics: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_discriminator(n: usize) -> Graph {
        Graph::builder(n)
            .affine(Tensor::zeros(&[n, 1]), Some(Tensor::zeros(&[1, 1])))
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn constant_half_discriminator() {
        let d = half_discriminator(3);
        let g = Graph::linear(&Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        let real = Tensor::filled(&[4, 3], 0.5);
        let z = Tensor::filled(&[4, 2], 0.1);
        let mut rng = child_rng(0, "t", 0);
        let l = gan_losses(&d, &g, &real, &z, 0.6, &mut rng).unwrap();
        assert!((l.loss_d - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.loss_g - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn noiseless_losses_are_deterministic() {
        let cfg = TrainConfig::shapes(16);
        let g = build_net(&cfg.generator_spec(), 1).unwrap();
        let d = build_net(&cfg.discriminator_spec(), 2).unwrap();
        let real = Tensor::filled(&[2, 256], 1.0);
        let z = Tensor::filled(&[2, 4], 0.3);
        let a = gan_losses(&d, &g, &real, &z, 0.0, &mut child_rng(0, "x", 0)).unwrap();
        let b = gan_losses(&d, &g, &real, &z, 0.0, &mut child_rng(9, "y", 1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(SHAPE_NOISE_STD, 0.6);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::shapes(16);
        c.k = 5;
        assert!(train_gan(&c).is_err());
        c.k = 2;
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        c.lambda = 0.0;
        c.noise_std = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn factor_basis_is_orthogonal() {
        let b = factor_basis(6, &[3.0, 2.0, 1.0], 4).unwrap();
        let btb = b.transpose().matmul(&b).unwrap();
        let want = Tensor::from_diag(&[9.0, 4.0, 1.0]);
        assert!(btb.sub(&want).unwrap().max_abs() < 1e-12);
    }
}
