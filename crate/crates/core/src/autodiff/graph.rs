//! Feedforward network description evaluated on a [`Tape`].

use std::rc::Rc;

use crate::autodiff::tape::{IndexMap, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// PReLU negative-side slope; kept in `[0, 1]` by the optimizers.
    Leak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Geometry of a 2-D convolution with square kernel over channel-major
/// `(channels, height, width)` feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel > 0
            && (self.stride == 1 || self.stride == 2)
            && self.height + 2 * self.padding >= self.kernel
            && self.width + 2 * self.padding >= self.kernel;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid convolution geometry {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = x W + b` with `W: inputs × outputs`.
    Affine {
        inputs: usize,
        outputs: usize,
        weight: usize,
        bias: Option<usize>,
    },
    Conv2d {
        geometry: ConvGeometry,
        weight: usize,
        bias: usize,
    },
    /// Nearest-neighbour 2× upsampling of `(channels, height, width)` maps.
    Upsample2x {
        channels: usize,
        height: usize,
        width: usize,
    },
    /// `max(0, x) + a·min(0, x) + offset` with learned leak `a`.
    PRelu {
        width: usize,
        leak: usize,
        offset: f64,
    },
    Tanh {
        width: usize,
    },
    /// `(tanh(x) + 1) / 2`, mapping onto `(0, 1)`.
    Squash {
        width: usize,
    },
    /// `y_i = x_{a_i} · x_{b_i}` for each listed pair; used by small
    /// hand-built test functions.
    Product {
        inputs: usize,
        pairs: Vec<(usize, usize)>,
    },
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Affine { inputs, .. } => *inputs,
            Layer::Conv2d { geometry, .. } => geometry.in_len(),
            Layer::Upsample2x {
                channels,
                height,
                width,
            } => channels * height * width,
            Layer::PRelu { width, .. } | Layer::Tanh { width } | Layer::Squash { width } => *width,
            Layer::Product { inputs, .. } => *inputs,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Affine { outputs, .. } => *outputs,
            Layer::Conv2d { geometry, .. } => geometry.out_len(),
            Layer::Upsample2x {
                channels,
                height,
                width,
            } => 4 * channels * height * width,
            Layer::PRelu { width, .. } | Layer::Tanh { width } | Layer::Squash { width } => *width,
            Layer::Product { pairs, .. } => pairs.len(),
        }
    }
}

/// A differentiable map `ℝ^m → ℝ^n` built from a chain of layers, together
/// with its parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    input_dim: usize,
    layers: Vec<Layer>,
    params: Vec<Param>,
}

impl Graph {
    pub fn builder(input_dim: usize) -> GraphBuilder {
        GraphBuilder {
            width: input_dim,
            graph: Graph {
                input_dim,
                layers: Vec::new(),
                params: Vec::new(),
            },
        }
    }

    /// `z ↦ A z` for an `n × m` matrix `A`.
    pub fn linear(a: &Tensor) -> Result<Graph> {
        Graph::builder(a.cols()).affine(a.transpose(), None)?.build()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::out_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Applies the layers to `input` (`rows × input_dim`) and returns the
    /// layer boundary values `b₀ … b_L`, with `b₀ = input`.
    pub fn forward(&self, tape: &Tape, input: Var, params: &[Var]) -> Vec<Var> {
        let rows = tape.dims(input)[0];
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        let mut x = input;
        for layer in &self.layers {
            x = apply_layer(tape, layer, x, params, rows);
            acts.push(x);
        }
        acts
    }

    /// Plain batched evaluation of `rows × input_dim` inputs.
    pub fn forward_values(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let tape = Tape::new();
        let params = self.bind(&tape);
        let x = tape.leaf(input.clone());
        let out = *self.forward(&tape, x, &params).last().expect("non-empty");
        let v = (*tape.value(out)).clone();
        v.ensure_finite("network output")?;
        Ok(v)
    }

    pub(crate) fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.rank() != 2 || input.cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "network expects rows × {}, got {:?}",
                self.input_dim,
                input.dims()
            )));
        }
        input.ensure_finite("network input")
    }
}

fn apply_layer(tape: &Tape, layer: &Layer, x: Var, params: &[Var], rows: usize) -> Var {
    match layer {
        Layer::Affine { weight, bias, .. } => {
            let y = tape.matmul(x, params[*weight]);
            match bias {
                Some(b) => tape.add_row(y, params[*b]),
                None => y,
            }
        }
        Layer::Conv2d {
            geometry,
            weight,
            bias,
        } => {
            let g = *geometry;
            let cols = tape.gather(x, Rc::new(im2col_map(&g, rows)));
            let y = tape.matmul(cols, params[*weight]);
            let y = tape.add_row(y, params[*bias]);
            tape.gather(y, Rc::new(channel_major_map(&g, rows)))
        }
        Layer::Upsample2x {
            channels,
            height,
            width,
        } => tape.gather(x, Rc::new(upsample_map(*channels, *height, *width, rows))),
        Layer::PRelu { width, leak, offset } => {
            let value = tape.value(x);
            let pos = Rc::new(value.map(|v| if v >= 0.0 { 1.0 } else { 0.0 }));
            let neg = Rc::new(value.map(|v| if v < 0.0 { 1.0 } else { 0.0 }));
            let p = tape.mul_const(x, pos);
            let n = tape.mul_const(x, neg);
            let a = tape.expand_scalar(params[*leak], rows, *width);
            let na = tape.mul(n, a);
            let y = tape.add(p, na);
            if *offset != 0.0 {
                tape.offset(y, *offset)
            } else {
                y
            }
        }
        Layer::Tanh { .. } => tape.tanh(x),
        Layer::Squash { .. } => {
            let t = tape.tanh(x);
            let t = tape.offset(t, 1.0);
            tape.scale(t, 0.5)
        }
        Layer::Product { inputs, pairs } => {
            let n = *inputs as u32;
            let take = |pick: fn(&(usize, usize)) -> usize| IndexMap {
                src_dims: vec![rows, *inputs],
                out_dims: vec![rows, pairs.len()],
                index: (0..rows as u32)
                    .flat_map(|r| pairs.iter().map(move |p| r * n + pick(p) as u32))
                    .collect(),
            };
            let a = tape.gather(x, Rc::new(take(|p| p.0)));
            let b = tape.gather(x, Rc::new(take(|p| p.1)));
            tape.mul(a, b)
        }
    }
}

/// Patch extraction: `(rows, C·H·W) → (rows·OH·OW, C·k·k)`.
fn im2col_map(g: &ConvGeometry, rows: usize) -> IndexMap {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel);
    let mut index = Vec::with_capacity(rows * oh * ow * g.patch_len());
    for b in 0..rows {
        let base = b * g.in_len();
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                index.push(IndexMap::ZERO);
                            } else {
                                let src = base
                                    + c * g.height * g.width
                                    + iy as usize * g.width
                                    + ix as usize;
                                index.push(src as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    IndexMap {
        src_dims: vec![rows, g.in_len()],
        out_dims: vec![rows * oh * ow, g.patch_len()],
        index,
    }
}

/// `(rows·OH·OW, OC) → (rows, OC·OH·OW)`.
fn channel_major_map(g: &ConvGeometry, rows: usize) -> IndexMap {
    let (oh, ow, oc) = (g.out_height(), g.out_width(), g.out_channels);
    let mut index = Vec::with_capacity(rows * oc * oh * ow);
    for b in 0..rows {
        for c in 0..oc {
            for y in 0..oh {
                for x in 0..ow {
                    let pixel = b * oh * ow + y * ow + x;
                    index.push((pixel * oc + c) as u32);
                }
            }
        }
    }
    IndexMap {
        src_dims: vec![rows * oh * ow, oc],
        out_dims: vec![rows, oc * oh * ow],
        index,
    }
}

fn upsample_map(channels: usize, height: usize, width: usize, rows: usize) -> IndexMap {
    let len = channels * height * width;
    let mut index = Vec::with_capacity(rows * 4 * len);
    for b in 0..rows {
        for c in 0..channels {
            for y in 0..2 * height {
                for x in 0..2 * width {
                    let src = b * len + c * height * width + (y / 2) * width + x / 2;
                    index.push(src as u32);
                }
            }
        }
    }
    IndexMap {
        src_dims: vec![rows, len],
        out_dims: vec![rows, 4 * len],
        index,
    }
}

/// Incrementally assembles a [`Graph`], checking that layer arities chain.
pub struct GraphBuilder {
    width: usize,
    graph: Graph,
}

impl GraphBuilder {
    fn param(&mut self, kind: ParamKind, value: Tensor) -> usize {
        let idx = self.graph.params.len();
        let layer = self.graph.layers.len();
        let tag = match kind {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::Leak => "leak",
        };
        self.graph.params.push(Param {
            name: format!("layer{layer}.{tag}"),
            kind,
            value,
        });
        idx
    }

    fn expect_width(&self, width: usize) -> Result<()> {
        if width != self.width {
            return Err(Error::Dimension(format!(
                "layer {} expects width {width}, previous layer produces {}",
                self.graph.layers.len(),
                self.width
            )));
        }
        Ok(())
    }

    fn push(mut self, layer: Layer) -> Result<Self> {
        self.expect_width(layer.in_dim())?;
        self.width = layer.out_dim();
        self.graph.layers.push(layer);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Affine layer with `weight: inputs × outputs` and optional `1 × outputs` bias.
    pub fn affine(mut self, weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::Dimension("affine weight must be a matrix".into()));
        }
        let (inputs, outputs) = (weight.rows(), weight.cols());
        if let Some(b) = &bias {
            if b.dims() != [1, outputs] {
                return Err(Error::Dimension(format!(
                    "bias {:?} does not match {outputs} outputs",
                    b.dims()
                )));
            }
        }
        self.expect_width(inputs)?;
        let w = self.param(ParamKind::Weight, weight);
        let b = bias.map(|b| self.param(ParamKind::Bias, b));
        self.push(Layer::Affine {
            inputs,
            outputs,
            weight: w,
            bias: b,
        })
    }

    pub fn conv2d(mut self, geometry: ConvGeometry, weight: Tensor, bias: Tensor) -> Result<Self> {
        geometry.validate()?;
        if weight.dims() != [geometry.patch_len(), geometry.out_channels]
            || bias.dims() != [1, geometry.out_channels]
        {
            return Err(Error::Dimension("convolution parameter shapes".into()));
        }
        self.expect_width(geometry.in_len())?;
        let w = self.param(ParamKind::Weight, weight);
        let b = self.param(ParamKind::Bias, bias);
        self.push(Layer::Conv2d {
            geometry,
            weight: w,
            bias: b,
        })
    }

    pub fn upsample2x(self, channels: usize, height: usize, width: usize) -> Result<Self> {
        self.push(Layer::Upsample2x {
            channels,
            height,
            width,
        })
    }

    pub fn prelu(mut self, leak: f64, offset: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&leak) {
            return Err(Error::Invalid(format!("PReLU leak {leak} outside [0, 1]")));
        }
        let width = self.width;
        let a = self.param(ParamKind::Leak, Tensor::scalar(leak));
        self.push(Layer::PRelu {
            width,
            leak: a,
            offset,
        })
    }

    pub fn tanh(self) -> Result<Self> {
        let width = self.width;
        self.push(Layer::Tanh { width })
    }

    pub fn squash(self) -> Result<Self> {
        let width = self.width;
        self.push(Layer::Squash { width })
    }

    pub fn product(self, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let inputs = self.width;
        if pairs.iter().any(|&(a, b)| a >= inputs || b >= inputs) {
            return Err(Error::Dimension("product index out of range".into()));
        }
        self.push(Layer::Product { inputs, pairs })
    }

    pub fn build(self) -> Result<Graph> {
        if self.graph.input_dim == 0 {
            return Err(Error::Invalid("network input arity must be positive".into()));
        }
        Ok(self.graph)
    }
}
