use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use eigalign::align_reg::{alignment_penalty_batch, AlignmentConfig};
use eigalign::eigenpath::{perturbation_grid, tile_images, trace_eigenpath, write_pgm, PathParams};
use eigalign::evalsuite::{
    disentanglement_score, heatmap_f, render_shape, train_inversion_encoder, ConstantEncoder, Encoder, FactorVector,
    GraphEncoder, InversionConfig, MetricConfig, OracleEncoder, PixelEncoder, ScoreReport, ShapeAtlas,
    FACTOR_RANGES,
};
use eigalign::models::{build_net, NetKind, NetSpec};
use eigalign::numerics::rng::{child_rng, derive_seed, standard_normal};
use eigalign::trainer::{save_checkpoint, train_gan, Checkpoint, CHECKPOINT_FILE, METRICS_FILE};

use crate::config::{key, switch, Key, RunConfig, COMMON, RESOLVED_FILE};
use crate::sources::{load_encoder, load_generator, train_config, LoadedGenerator, ENCODER_FILE};
use crate::{CliError, CliResult};

pub struct Subcommand {
    pub name: &'static str,
    pub about: &'static str,
    uses_generator: bool,
    own: &'static [Key],
    run: fn(&RunConfig, &Path) -> CliResult<()>,
}

impl Subcommand {
    /// Every key the subcommand accepts.
    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        let gen: &[Key] = if self.uses_generator { GENERATOR } else { &[] };
        COMMON.iter().chain(gen).chain(self.own).copied()
    }
}

const GENERATOR: &[Key] = &[
    key("generator", "generator", "linear", "linear, matrix:FILE or a train run directory"),
    key("latent_dim", "latent-dim", "4", "latent size of the linear generator"),
    key("data_dim", "data-dim", "16", "output size of the linear generator"),
];

const TRAIN: &[Key] = &[
    key("dataset", "dataset", "shapes", "shapes or linear"),
    key("side", "side", "16", "sprite image side"),
    key("data_dim", "data-dim", "auto", "data size of the linear dataset"),
    key("scales", "scales", "auto", "comma-separated factor scales of the linear dataset"),
    key("basis_seed", "basis-seed", "0", "seed of the linear dataset's factor basis"),
    key("latent_dim", "latent-dim", "4", "latent size m"),
    key("k", "k", "2", "eigenvectors to align"),
    key("iterations", "iterations", "4", "power iterations T"),
    key("lambda", "lambda", "0.1", "penalty weight"),
    key("batch", "batch", "32", "batch size"),
    key("updates", "updates", "10000", "generator updates"),
    key("d_steps", "d-steps", "1", "discriminator updates per generator update"),
    key("noise_std", "noise-std", "auto", "instance noise added to discriminator inputs"),
    key("g_lr", "g-lr", "1e-4", "generator RMSProp learning rate"),
    key("d_lr", "d-lr", "1e-4", "discriminator RMSProp learning rate"),
    key("generator_arch", "generator-arch", "auto", "mlp:W1,W2,… or conv:BASE"),
    key("discriminator_arch", "discriminator-arch", "auto", "mlp:W1,W2,… or conv:BASE"),
    key("squash", "squash", "auto", "end the generator in the [0, 1] squash"),
    key("weighting", "weighting", "priority", "priority or uniform column weights"),
    key("flow", "flow", "full", "penalty gradient: full, final or detached"),
    key("checkpoint_every", "checkpoint-every", "0", "checkpoint interval in updates (0: end only)"),
    key("timing", "timing", "true", "record wall time per step"),
];

const TRACE: &[Key] = &[
    key("k", "k", "1", "eigenvector to follow (1-based)"),
    key("alpha", "alpha", "5e-3", "step size"),
    key("rho", "rho", "0.99", "direction decay"),
    key("steps", "steps", "2000", "path length"),
    switch("negate", "negate", "walk the opposite ray"),
    key("z", "z", "", "comma-separated start point (default: drawn from the prior)"),
    key("frame_every", "frame-every", "100", "decode every n-th iterate to an image (0: none)"),
];

const HEATMAP: &[Key] = &[key("samples", "samples", "256", "prior samples")];

const METRIC: &[Key] = &[
    key("encoder", "encoder", "oracle", "oracle, constant, pixels or an invert run directory"),
    key("side", "side", "16", "sprite image side"),
    key("train_steps", "train-steps", "10000", "classifier updates"),
    key("eval_instances", "eval-instances", "5000", "evaluation instances"),
    key("n_inst", "n-inst", "64", "pairs per instance"),
    key("n_batch", "n-batch", "32", "instances per classifier batch"),
];

const RENDER: &[Key] = &[
    key("side", "side", "64", "image side"),
    key("symbol", "symbol", "1", "1 square, 2 ellipse, 3 heart"),
    key("scale", "scale", "6", "scale index 1–6"),
    key("rotation", "rotation", "1", "rotation index 1–40"),
    key("x", "x", "15", "x-position index 1–30"),
    key("y", "y", "15", "y-position index 1–30"),
    key("sweep", "sweep", "x", "factor swept over its range: symbol, scale, rotation, x, y or none"),
];

const PERTURB: &[Key] = &[
    key("eps", "eps", "0.5", "perturbation radius"),
    key("count", "count", "4", "perturbations per row"),
    key("z", "z", "", "comma-separated base point (default: drawn from the prior)"),
];

const BENCH: &[Key] = &[
    key("latent_dim", "latent-dim", "64", "latent size m"),
    key("data_dim", "data-dim", "256", "output size"),
    key("hidden", "hidden", "64,128", "generator hidden widths"),
    key("batch", "batch", "8", "latent batch"),
    key("ks", "ks", "1,2,4,8,16", "k values swept at T = base_t"),
    key("ts", "ts", "1,2,4,8,16", "T values swept at k = base_k"),
    key("base_k", "base-k", "4", "k for the T sweep and the reference cost"),
    key("base_t", "base-t", "4", "T for the k sweep and the reference cost"),
    key("rounds", "rounds", "9", "timed repetitions per setting"),
];

const INVERT: &[Key] = &[
    key("steps", "steps", "30000", "encoder updates"),
    key("batch", "batch", "32", "batch size"),
    key("lr", "lr", "1e-3", "Adam learning rate"),
];

pub const SUBCOMMANDS: &[Subcommand] = &[
    Subcommand {
        name: "train",
        about: "train a GAN with the alignment penalty",
        uses_generator: false,
        own: TRAIN,
        run: train,
    },
    Subcommand {
        name: "trace-path",
        about: "follow an eigenvector of the normal Jacobian through latent space",
        uses_generator: true,
        own: TRACE,
        run: trace_path,
    },
    Subcommand {
        name: "heatmap",
        about: "estimate the eigenvector heatmap F",
        uses_generator: true,
        own: HEATMAP,
        run: heatmap,
    },
    Subcommand {
        name: "metric",
        about: "disentanglement score of an encoder on rendered shapes",
        uses_generator: false,
        own: METRIC,
        run: metric,
    },
    Subcommand {
        name: "render-shapes",
        about: "render a sweep of one shape factor",
        uses_generator: false,
        own: RENDER,
        run: render_shapes,
    },
    Subcommand {
        name: "perturb-grid",
        about: "decode random and eigenvector perturbations of one latent point",
        uses_generator: true,
        own: PERTURB,
        run: perturb_grid,
    },
    Subcommand {
        name: "align-bench",
        about: "time the penalty and its gradient over k and T",
        uses_generator: false,
        own: BENCH,
        run: align_bench,
    },
    Subcommand {
        name: "invert",
        about: "train an encoder that inverts a frozen generator",
        uses_generator: true,
        own: INVERT,
        run: invert,
    },
];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `lines` to `dir/name`.
fn write_lines(dir: &Path, name: &str, lines: impl IntoIterator<Item = String>) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let mut w = create(&path)?;
    for l in lines {
        writeln!(w, "{l}").map_err(|e| io_err(&path, e))?;
    }
    finish(&path, w)?;
    Ok(path)
}

fn csv_row(values: &[f64]) -> String {
    values.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let sub = SUBCOMMANDS.iter().find(|s| s.name == cfg.command).expect("registered subcommand");
    cfg.seed()?;
    let dir = cfg.run_dir()?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let resolved = dir.join(RESOLVED_FILE);
    std::fs::write(&resolved, cfg.render()).map_err(|e| io_err(&resolved, e))?;
    (sub.run)(cfg, &dir)?;
    println!("run_dir,{}", dir.display());
    Ok(())
}

fn latent_point(cfg: &RunConfig, m: usize, label: &str) -> CliResult<Vec<f64>> {
    let z: Vec<f64> = cfg.list("z")?;
    if z.is_empty() {
        return Ok(standard_normal(&mut child_rng(cfg.seed()?, label, 0), &[m]).into_data());
    }
    if z.len() != m {
        return Err(CliError::Validation(format!("z has {} entries, the generator expects {m}", z.len())));
    }
    Ok(z)
}

fn train(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let mut t = train_config(cfg)?;
    t.out_dir = Some(dir.to_path_buf());
    let out = train_gan(&t)?;
    if let Some(last) = out.metrics.last() {
        println!("final,{}", last.csv_row());
    }
    println!("metrics,{}", dir.join(METRICS_FILE).display());
    println!("checkpoint,{}", dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn trace_path(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let g = load_generator(cfg)?;
    let z = latent_point(cfg, g.graph.input_dim(), "trace-start")?;
    let mut alpha: f64 = cfg.parse("alpha")?;
    if cfg.flag("negate")? {
        alpha = -alpha;
    }
    let params = PathParams {
        alpha,
        rho: cfg.parse("rho")?,
        steps: cfg.parse("steps")?,
    };
    let tr = trace_eigenpath(&g.graph, &z, cfg.parse("k")?, params)?;
    let path = dir.join("trajectory.csv");
    let mut w = create(&path)?;
    tr.write_csv(&mut w).map_err(|e| io_err(&path, e))?;
    finish(&path, w)?;
    let every: usize = cfg.parse("frame_every")?;
    if let (Some(side), true) = (g.image_side(), every > 0) {
        let frames = dir.join("frames");
        std::fs::create_dir_all(&frames).map_err(|e| io_err(&frames, e))?;
        let indices: Vec<usize> = (0..tr.iterates.len()).step_by(every).collect();
        for (i, img) in indices.iter().zip(tr.decode(&g.graph, &indices)?) {
            write_pgm(&frames.join(format!("frame_{i:05}.pgm")), &img, side, side)?;
        }
    }
    println!("trajectory,{}", path.display());
    Ok(())
}

fn heatmap(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let g = load_generator(cfg)?;
    let f = heatmap_f(&g.graph, cfg.parse("samples")?, derive_seed(cfg.seed()?, "heatmap", 0))?;
    let path = dir.join("heatmap.csv");
    let mut w = create(&path)?;
    f.write_csv(&mut w).map_err(|e| io_err(&path, e))?;
    finish(&path, w)?;
    f.write_pgm(&dir.join("heatmap.pgm"))?;
    println!("diagonal_mean,{:e}", f.diagonal_mean(g.graph.input_dim()));
    println!("heatmap,{}", path.display());
    Ok(())
}

fn encoder_for(cfg: &RunConfig, side: usize) -> CliResult<Box<dyn Encoder>> {
    Ok(match cfg.str("encoder") {
        "oracle" => Box::new(OracleEncoder),
        "constant" => Box::new(ConstantEncoder(vec![0.0; 5])),
        "pixels" => Box::new(PixelEncoder { side }),
        dir => Box::new(GraphEncoder {
            graph: load_encoder(Path::new(dir))?,
            side,
        }),
    })
}

fn metric(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let side: usize = cfg.parse("side")?;
    let atlas = ShapeAtlas::new(side)?;
    let enc = encoder_for(cfg, side)?;
    let mc = MetricConfig {
        n_inst: cfg.parse("n_inst")?,
        n_batch: cfg.parse("n_batch")?,
        train_steps: cfg.parse("train_steps")?,
        eval_instances: cfg.parse("eval_instances")?,
        seed: cfg.seed()?,
    };
    let report = disentanglement_score(enc.as_ref(), &atlas, &mc)?;
    write_lines(dir, "score.csv", [ScoreReport::CSV_HEADER.to_string(), report.to_string()])?;
    println!("{}", ScoreReport::CSV_HEADER);
    println!("{report}");
    Ok(())
}

const FACTOR_NAMES: [&str; 5] = ["symbol", "scale", "rotation", "x", "y"];

fn render_shapes(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let side: usize = cfg.parse("side")?;
    let mut base = [0u32; 5];
    for (b, name) in base.iter_mut().zip(FACTOR_NAMES) {
        *b = cfg.parse(name)?;
    }
    FactorVector::new(base)?;
    let sweep = cfg.str("sweep");
    let values: Vec<[u32; 5]> = match FACTOR_NAMES.iter().position(|n| *n == sweep) {
        Some(i) => (1..=FACTOR_RANGES[i])
            .map(|v| {
                let mut u = base;
                u[i] = v;
                u
            })
            .collect(),
        None if sweep == "none" => vec![base],
        None => {
            return Err(CliError::Validation(format!(
                "invalid value '{sweep}' for sweep: expected {} or none",
                FACTOR_NAMES.join(", ")
            )))
        }
    };
    let mut rows = vec![format!("index,{}", FACTOR_NAMES.join(","))];
    for (i, u) in values.iter().enumerate() {
        let img = render_shape(FactorVector::new(*u)?, side)?;
        write_pgm(&dir.join(format!("shape_{i:05}.pgm")), &img, side, side)?;
        rows.push(format!("{i},{},{},{},{},{}", u[0], u[1], u[2], u[3], u[4]));
    }
    write_lines(dir, "factors.csv", rows)?;
    println!("frames,{}", values.len());
    Ok(())
}

fn perturb_grid(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let g: LoadedGenerator = load_generator(cfg)?;
    let z = latent_point(cfg, g.graph.input_dim(), "perturb-start")?;
    let grid = perturbation_grid(
        &g.graph,
        &z,
        cfg.parse("eps")?,
        cfg.parse("count")?,
        derive_seed(cfg.seed()?, "perturb-grid", 0),
    )?;
    let mut lines = Vec::new();
    for (row, images) in [("random", &grid.random), ("eigen", &grid.eigen)] {
        for (c, img) in images.iter().enumerate() {
            lines.push(format!("{row},{c},{}", csv_row(img)));
        }
    }
    write_lines(dir, "grid.csv", lines)?;
    if let Some(side) = g.image_side() {
        let (px, w, h) = tile_images(&[grid.random.clone(), grid.eigen.clone()], side)?;
        write_pgm(&dir.join("grid.pgm"), &px, w, h)?;
    }
    Ok(())
}

fn median_ms(g: &eigalign::autodiff::Graph, zs: &eigalign::numerics::Tensor, k: usize, t: usize, rounds: usize) -> CliResult<f64> {
    let cfg = AlignmentConfig::new(k, t);
    alignment_penalty_batch(g, zs, &cfg, 0)?;
    let mut times = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let s = Instant::now();
        alignment_penalty_batch(g, zs, &cfg, r as u64)?;
        times.push(s.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn align_bench(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let (m, n): (usize, usize) = (cfg.parse("latent_dim")?, cfg.parse("data_dim")?);
    let seed = cfg.seed()?;
    let g = build_net(&NetSpec::mlp(NetKind::Generator, m, n, cfg.list("hidden")?), derive_seed(seed, "generator", 0))?;
    let zs = standard_normal(&mut child_rng(seed, "bench-latent", 0), &[cfg.parse("batch")?, m]);
    let rounds: usize = cfg.parse("rounds")?;
    if rounds == 0 {
        return Err(CliError::Validation("rounds must be positive".into()));
    }
    let (bk, bt): (usize, usize) = (cfg.parse("base_k")?, cfg.parse("base_t")?);
    let base = median_ms(&g, &zs, bk, bt, rounds)?;
    let mut rows = vec!["sweep,k,t,median_ms,relative".to_string()];
    for k in cfg.list::<usize>("ks")? {
        let c = median_ms(&g, &zs, k, bt, rounds)?;
        rows.push(format!("k,{k},{bt},{c:.4},{:.4}", c / base));
    }
    for t in cfg.list::<usize>("ts")? {
        let c = median_ms(&g, &zs, bk, t, rounds)?;
        rows.push(format!("t,{bk},{t},{c:.4},{:.4}", c / base));
    }
    let path = write_lines(dir, "bench.csv", rows.clone())?;
    for r in rows {
        println!("{r}");
    }
    println!("bench,{}", path.display());
    Ok(())
}

fn invert(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    let g = load_generator(cfg)?;
    let seed = cfg.seed()?;
    let init = build_net(&NetSpec::inversion_encoder(&g.spec), derive_seed(seed, "encoder", 0))?;
    let ic = InversionConfig {
        steps: cfg.parse("steps")?,
        batch: cfg.parse("batch")?,
        lr: cfg.parse("lr")?,
        seed,
    };
    let (enc, losses) = train_inversion_encoder(&g.graph, init, &ic)?;
    let mut ck = Checkpoint::new();
    ck.add_graph("encoder", &enc);
    save_checkpoint(&dir.join(ENCODER_FILE), &ck)?;
    let lines = std::iter::once("step,loss".to_string()).chain(losses.iter().enumerate().map(|(i, l)| format!("{i},{l:e}")));
    write_lines(dir, "losses.csv", lines)?;
    if let Some(l) = losses.last() {
        println!("final_loss,{l:e}");
    }
    println!("encoder,{}", dir.join(ENCODER_FILE).display());
    Ok(())
}
