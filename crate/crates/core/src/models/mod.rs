//! Generator, discriminator and encoder constructors, plus the optimizers
//! used to train them.

mod optim;

pub use optim::{OptimizerKind, OptimizerState};

use rand_distr::{Distribution, Uniform};

use crate::autodiff::{ConvGeometry, Graph, GraphBuilder};
use crate::error::{Error, Result};
use crate::numerics::rng::{child_rng, SeedRng};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    /// `latent → image`, squashed into `[0, 1]`.
    Generator,
    /// `image → logit`.
    Discriminator,
    /// `image → latent`.
    Encoder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// Fully connected with the listed hidden widths, ordered from the
    /// latent side for generators and from the image side otherwise.
    Mlp { hidden: Vec<usize> },
    /// Two-stage convolutional stack with `base` and `2·base` feature maps.
    /// Requires a square image whose side is divisible by 4.
    Conv { base: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub kind: NetKind,
    pub latent_dim: usize,
    /// Flat output length for generators, input length otherwise.
    pub data_dim: usize,
    /// Image side when `data_dim` is a square image.
    pub image_side: Option<usize>,
    pub architecture: Architecture,
    /// Initial PReLU leak.
    pub leak: f64,
    /// Additive offset of the translated PReLU.
    pub prelu_offset: f64,
    /// Whether a generator ends in the `[0, 1]` squash.
    pub squash: bool,
}

impl NetSpec {
    pub fn mlp(kind: NetKind, latent_dim: usize, data_dim: usize, hidden: Vec<usize>) -> Self {
        NetSpec {
            kind,
            latent_dim,
            data_dim,
            image_side: None,
            architecture: Architecture::Mlp { hidden },
            leak: 0.2,
            prelu_offset: 0.0,
            squash: true,
        }
    }

    pub fn conv(kind: NetKind, latent_dim: usize, side: usize, base: usize) -> Self {
        NetSpec {
            kind,
            latent_dim,
            data_dim: side * side,
            image_side: Some(side),
            architecture: Architecture::Conv { base },
            leak: 0.2,
            prelu_offset: 0.0,
            squash: true,
        }
    }

    /// Encoder used to invert a trained generator: same layout mirrored,
    /// with twice the generator's base feature count.
    /// Affine generator with no hidden layers and no squash.
    pub fn linear_generator(latent_dim: usize, data_dim: usize) -> Self {
        NetSpec {
            squash: false,
            ..NetSpec::mlp(NetKind::Generator, latent_dim, data_dim, Vec::new())
        }
    }

    pub fn inversion_encoder(generator: &NetSpec) -> Self {
        let architecture = match &generator.architecture {
            Architecture::Mlp { hidden } => Architecture::Mlp {
                hidden: hidden.iter().rev().map(|w| 2 * w).collect(),
            },
            Architecture::Conv { base } => Architecture::Conv { base: 2 * base },
        };
        NetSpec {
            kind: NetKind::Encoder,
            architecture,
            ..generator.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.data_dim == 0 {
            return Err(Error::Invalid("latent and data sizes must be positive".into()));
        }
        if let Some(s) = self.image_side {
            if s * s != self.data_dim {
                return Err(Error::Dimension(format!(
                    "image side {s} does not match data size {}",
                    self.data_dim
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(Error::Invalid(format!("PReLU leak {} outside [0, 1]", self.leak)));
        }
        match &self.architecture {
            Architecture::Mlp { hidden } if hidden.contains(&0) => {
                Err(Error::Invalid("hidden widths must be positive".into()))
            }
            Architecture::Conv { base } => match self.image_side {
                Some(s) if s % 4 == 0 && s >= 4 && *base > 0 => Ok(()),
                _ => Err(Error::Invalid(
                    "convolutional nets need a square image with side divisible by 4".into(),
                )),
            },
            _ => Ok(()),
        }
    }
}

/// `U(−1/√fan_in, 1/√fan_in)` weights.
fn uniform_weight(rng: &mut SeedRng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

fn dense(b: GraphBuilder, rng: &mut SeedRng, outputs: usize) -> Result<GraphBuilder> {
    let inputs = b.width();
    let w = uniform_weight(rng, inputs, outputs, inputs);
    b.affine(w, Some(Tensor::zeros(&[1, outputs])))
}

fn conv(
    b: GraphBuilder,
    rng: &mut SeedRng,
    geometry: ConvGeometry,
) -> Result<GraphBuilder> {
    let fan_in = geometry.patch_len();
    let w = uniform_weight(rng, fan_in, geometry.out_channels, fan_in);
    b.conv2d(geometry, w, Tensor::zeros(&[1, geometry.out_channels]))
}

/// Builds and initializes a network. Biases start at zero, PReLU leaks at
/// `spec.leak`; the weights depend only on `seed`.
pub fn build_net(spec: &NetSpec, seed: u64) -> Result<Graph> {
    spec.validate()?;
    let mut rng = child_rng(seed, "init", 0);
    let rng = &mut rng;
    let (a, off) = (spec.leak, spec.prelu_offset);
    let (input, output) = match spec.kind {
        NetKind::Generator => (spec.latent_dim, spec.data_dim),
        NetKind::Discriminator => (spec.data_dim, 1),
        NetKind::Encoder => (spec.data_dim, spec.latent_dim),
    };
    let mut b = Graph::builder(input);
    match &spec.architecture {
        Architecture::Mlp { hidden } => {
            for &h in hidden {
                b = dense(b, rng, h)?.prelu(a, off)?;
            }
            b = dense(b, rng, output)?;
        }
        Architecture::Conv { base } => {
            let side = spec.image_side.expect("validated");
            let q = side / 4;
            let (c1, c2) = (*base, 2 * base);
            match spec.kind {
                NetKind::Generator => {
                    b = dense(b, rng, c2 * q * q)?.prelu(a, off)?;
                    b = b.upsample2x(c2, q, q)?;
                    let g1 = ConvGeometry {
                        in_channels: c2,
                        out_channels: c1,
                        height: 2 * q,
                        width: 2 * q,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    };
                    b = conv(b, rng, g1)?.prelu(a, off)?;
                    b = b.upsample2x(c1, 2 * q, 2 * q)?;
                    let g2 = ConvGeometry {
                        in_channels: c1,
                        out_channels: 1,
                        height: side,
                        width: side,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    };
                    b = conv(b, rng, g2)?;
                }
                NetKind::Discriminator | NetKind::Encoder => {
                    let g1 = ConvGeometry {
                        in_channels: 1,
                        out_channels: c1,
                        height: side,
                        width: side,
                        kernel: 4,
                        stride: 2,
                        padding: 1,
                    };
                    b = conv(b, rng, g1)?.prelu(a, off)?;
                    let g2 = ConvGeometry {
                        in_channels: c1,
                        out_channels: c2,
                        height: 2 * q,
                        width: 2 * q,
                        kernel: 4,
                        stride: 2,
                        padding: 1,
                    };
                    b = conv(b, rng, g2)?.prelu(a, off)?;
                    b = dense(b, rng, output)?;
                }
            }
        }
    }
    if spec.kind == NetKind::Generator && spec.squash {
        b = b.squash()?;
    }
    b.build()
}
