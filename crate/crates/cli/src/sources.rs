//! Building training configurations and loading generators and encoders
//! from earlier runs.

use std::path::Path;

use eigalign::align_reg::{ColumnWeighting, GradientFlow};
use eigalign::autodiff::Graph;
use eigalign::models::{build_net, Architecture, NetSpec, OptimizerKind};
use eigalign::numerics::rng::derive_seed;
use eigalign::numerics::Tensor;
use eigalign::trainer::{load_checkpoint, Dataset, TrainConfig, CHECKPOINT_FILE};

use crate::config::{RunConfig, RESOLVED_FILE};
use crate::{commands, CliError, CliResult};

/// Encoder weights written by `invert`.
pub const ENCODER_FILE: &str = "encoder.spdt";

fn architecture(cfg: &RunConfig, k: &str) -> CliResult<Option<Architecture>> {
    let v = cfg.str(k);
    if v == "auto" {
        return Ok(None);
    }
    let bad = || CliError::Validation(format!("invalid value '{v}' for {k}: expected mlp:W1,W2,… or conv:BASE"));
    let (kind, rest) = v.split_once(':').ok_or_else(bad)?;
    match kind {
        "mlp" => {
            let hidden = if rest.trim().is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(|w| w.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?
            };
            Ok(Some(Architecture::Mlp { hidden }))
        }
        "conv" => Ok(Some(Architecture::Conv {
            base: rest.trim().parse().map_err(|_| bad())?,
        })),
        _ => Err(bad()),
    }
}

fn rmsprop(lr: f64) -> OptimizerKind {
    match OptimizerKind::gan_rmsprop() {
        OptimizerKind::RmsProp { decay, eps, .. } => OptimizerKind::RmsProp { lr, decay, eps },
        other => other,
    }
}

/// The trainer configuration described by a resolved `train` config.
pub fn train_config(cfg: &RunConfig) -> CliResult<TrainConfig> {
    let m: usize = cfg.parse("latent_dim")?;
    let side: usize = cfg.parse("side")?;
    let data_dim: Option<usize> = cfg.auto("data_dim")?;
    let mut t = match cfg.str("dataset") {
        "shapes" => {
            if data_dim.is_some_and(|n| n != side * side) {
                return Err(CliError::Validation(format!("data_dim must be side² = {} for shapes", side * side)));
            }
            TrainConfig::shapes(side)
        }
        "linear" => {
            let scales = if cfg.str("scales") == "auto" {
                (0..m).map(|j| 2f64.powi(1 - j as i32)).collect()
            } else {
                cfg.list("scales")?
            };
            let mut t = TrainConfig::linear(m, data_dim.unwrap_or(16), scales);
            if let Dataset::LinearFactors { basis_seed, .. } = &mut t.dataset {
                *basis_seed = cfg.parse("basis_seed")?;
            }
            t
        }
        other => {
            return Err(CliError::Validation(format!(
                "invalid value '{other}' for dataset: expected shapes or linear"
            )))
        }
    };
    t.latent_dim = m;
    t.k = cfg.parse("k")?;
    t.iterations = cfg.parse("iterations")?;
    t.lambda = cfg.parse("lambda")?;
    t.batch = cfg.parse("batch")?;
    t.updates = cfg.parse("updates")?;
    t.d_steps = cfg.parse("d_steps")?;
    if let Some(s) = cfg.auto("noise_std")? {
        t.noise_std = s;
    }
    t.g_optimizer = rmsprop(cfg.parse("g_lr")?);
    t.d_optimizer = rmsprop(cfg.parse("d_lr")?);
    t.seed = cfg.seed()?;
    if let Some(a) = architecture(cfg, "generator_arch")? {
        t.generator = a;
    }
    if let Some(a) = architecture(cfg, "discriminator_arch")? {
        t.discriminator = a;
    }
    if cfg.str("squash") != "auto" {
        t.squash = cfg.flag("squash")?;
    }
    t.weighting = match cfg.str("weighting") {
        "priority" => ColumnWeighting::Priority,
        "uniform" => ColumnWeighting::Uniform,
        v => return Err(CliError::Validation(format!("invalid value '{v}' for weighting: expected priority or uniform"))),
    };
    t.flow = match cfg.str("flow") {
        "full" => GradientFlow::FullUnroll,
        "final" => GradientFlow::FinalIteration,
        "detached" => GradientFlow::Detached,
        v => return Err(CliError::Validation(format!("invalid value '{v}' for flow: expected full, final or detached"))),
    };
    t.checkpoint_every = cfg.parse("checkpoint_every")?;
    t.timing = cfg.flag("timing")?;
    t.validate()?;
    t.generator_spec().validate()?;
    t.discriminator_spec().validate()?;
    Ok(t)
}

fn read_matrix(path: &str) -> CliResult<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Validation(format!("{path}: non-numeric entry in '{l}'")))
        })
        .collect::<CliResult<_>>()?;
    Ok(Tensor::from_rows(&rows)?)
}

fn load_run_config(dir: &Path, command: &str) -> CliResult<RunConfig> {
    let spec = commands::SUBCOMMANDS.iter().find(|s| s.name == command).expect("registered subcommand");
    let keys: Vec<_> = spec.keys().collect();
    let cfg = RunConfig::from_file(command, &keys, &dir.join(RESOLVED_FILE))?;
    Ok(cfg)
}

/// A generator and the spec its inversion encoder is derived from.
pub struct LoadedGenerator {
    pub graph: Graph,
    pub spec: NetSpec,
}

impl LoadedGenerator {
    /// Image side when the output is a square image.
    pub fn image_side(&self) -> Option<usize> {
        let n = self.graph.output_dim();
        let s = (n as f64).sqrt().round() as usize;
        (s * s == n).then_some(s)
    }
}

/// Resolves the `generator` key: `linear` (a seeded random affine map of
/// size `latent_dim → data_dim`), `matrix:FILE` (a CSV matrix `A`, giving
/// `g(z) = Az`) or the directory of a `train` run.
pub fn load_generator(cfg: &RunConfig) -> CliResult<LoadedGenerator> {
    let source = cfg.str("generator");
    if source == "linear" {
        let spec = NetSpec::linear_generator(cfg.parse("latent_dim")?, cfg.parse("data_dim")?);
        let graph = build_net(&spec, derive_seed(cfg.seed()?, "generator", 0))?;
        return Ok(LoadedGenerator { graph, spec });
    }
    if let Some(path) = source.strip_prefix("matrix:") {
        let a = read_matrix(path)?;
        let spec = NetSpec::linear_generator(a.cols(), a.rows());
        return Ok(LoadedGenerator {
            graph: Graph::linear(&a)?,
            spec,
        });
    }
    let dir = Path::new(source);
    let train = train_config(&load_run_config(dir, "train")?)?;
    let spec = train.generator_spec();
    let mut graph = build_net(&spec, 0)?;
    load_checkpoint(&dir.join(CHECKPOINT_FILE))?.restore_graph("generator", &mut graph)?;
    Ok(LoadedGenerator { graph, spec })
}

/// The encoder trained by the `invert` run in `dir`.
pub fn load_encoder(dir: &Path) -> CliResult<Graph> {
    let invert = load_run_config(dir, "invert")?;
    let g = load_generator(&invert)?;
    let spec = NetSpec::inversion_encoder(&g.spec);
    let mut enc = build_net(&spec, 0)?;
    load_checkpoint(&dir.join(ENCODER_FILE))?.restore_graph("encoder", &mut enc)?;
    Ok(enc)
}
