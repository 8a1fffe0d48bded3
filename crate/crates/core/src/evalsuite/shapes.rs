//! Procedural sprites: white squares, ellipses and hearts on black, with
//! five integer factors.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::numerics::rng::{uniform_int, SeedRng};

/// Number of values of symbol, scale, rotation, x and y position.
pub const FACTOR_RANGES: [u32; 5] = [3, 6, 40, 30, 30];

/// Largest shape radius in image-normalized units. Centres stay at least
/// this far from the border, so every shape is fully contained.
pub const MAX_RADIUS: f64 = 0.24;

const ATLAS_MAX_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Square,
    Ellipse,
    Heart,
}

/// One-based factor values `(symbol, scale, rotation, x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FactorVector(pub [u32; 5]);

impl FactorVector {
    pub fn new(u: [u32; 5]) -> Result<Self> {
        for (j, (&v, &c)) in u.iter().zip(&FACTOR_RANGES).enumerate() {
            if v < 1 || v > c {
                return Err(Error::Invalid(format!(
                    "factor {} is {v}, expected a value in [1, {c}]",
                    j + 1
                )));
            }
        }
        Ok(FactorVector(u))
    }

    pub fn symbol(&self) -> Symbol {
        match self.0[0] {
            1 => Symbol::Square,
            2 => Symbol::Ellipse,
            _ => Symbol::Heart,
        }
    }

    /// Factors mapped to `[0, 1]` by `(u − 1) / (c − 1)`.
    pub fn normalized(&self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for j in 0..5 {
            out[j] = f64::from(self.0[j] - 1) / f64::from(FACTOR_RANGES[j] - 1);
        }
        out
    }

    /// Mixed-radix position among all combinations.
    pub fn index(&self) -> usize {
        self.0
            .iter()
            .zip(&FACTOR_RANGES)
            .fold(0, |acc, (&v, &c)| acc * c as usize + (v - 1) as usize)
    }

    pub fn count() -> usize {
        FACTOR_RANGES.iter().map(|&c| c as usize).product()
    }
}

fn check_side(side: usize) -> Result<()> {
    if matches!(side, 16 | 32 | 64) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("image side {side} not in {{16, 32, 64}}")))
    }
}

/// Shape geometry in image-normalized coordinates.
struct Placement {
    symbol: Symbol,
    radius: f64,
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
}

impl Placement {
    fn new(u: FactorVector) -> Self {
        let [_, scale, rot, x, y] = u.0;
        let s = 0.5 + 0.5 * f64::from(scale - 1) / 5.0;
        let span = 1.0 - 2.0 * MAX_RADIUS;
        let symbol = u.symbol();
        // Reduce by the symmetry order so symmetric rotations match bitwise.
        let period = match symbol {
            Symbol::Square => 10,
            Symbol::Ellipse => 20,
            Symbol::Heart => 40,
        };
        let theta = 2.0 * PI * f64::from((rot - 1) % period) / 40.0;
        Placement {
            symbol,
            radius: MAX_RADIUS * s,
            cx: MAX_RADIUS + span * f64::from(x - 1) / 29.0,
            cy: MAX_RADIUS + span * f64::from(y - 1) / 29.0,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    /// Whether the image-normalized point `(px, py)`, with `py` pointing
    /// down, lies inside the shape.
    fn contains(&self, px: f64, py: f64) -> bool {
        let x = (px - self.cx) / self.radius;
        let y = -(py - self.cy) / self.radius;
        let lx = self.cos * x + self.sin * y;
        let ly = -self.sin * x + self.cos * y;
        match self.symbol {
            Symbol::Square => lx.abs() <= FRAC_1_SQRT_2 && ly.abs() <= FRAC_1_SQRT_2,
            Symbol::Ellipse => lx * lx + 4.0 * ly * ly <= 1.0,
            Symbol::Heart => heart_contains(lx, ly),
        }
    }
}

/// Heart scale and vertical shift that fit the implicit curve
/// `(x² + y² − 1)³ − x²y³ ≤ 0` inside the unit disc.
pub(crate) const HEART_SCALE: f64 = 1.3;
pub(crate) const HEART_SHIFT: f64 = 0.2;

fn heart_contains(lx: f64, ly: f64) -> bool {
    let x = HEART_SCALE * lx;
    let y = HEART_SCALE * ly + HEART_SHIFT;
    let q = x * x + y * y - 1.0;
    q * q * q - x * x * y * y * y <= 0.0
}

fn render_bits(u: FactorVector, side: usize) -> Box<[u64]> {
    let p = Placement::new(u);
    let mut words = vec![0u64; (side * side).div_ceil(64)];
    let inv = 1.0 / side as f64;
    let lo = ((p.cx - p.radius) * side as f64).floor().max(0.0) as usize;
    let hi = (((p.cx + p.radius) * side as f64).ceil() as usize).min(side);
    let top = ((p.cy - p.radius) * side as f64).floor().max(0.0) as usize;
    let bottom = (((p.cy + p.radius) * side as f64).ceil() as usize).min(side);
    for row in top..bottom {
        let py = (row as f64 + 0.5) * inv;
        for col in lo..hi {
            if p.contains((col as f64 + 0.5) * inv, py) {
                let i = row * side + col;
                words[i / 64] |= 1 << (i % 64);
            }
        }
    }
    words.into_boxed_slice()
}

/// Renders `u` as a `side × side` row-major binary image.
pub fn render_shape(u: FactorVector, side: usize) -> Result<Vec<f64>> {
    FactorVector::new(u.0)?;
    check_side(side)?;
    let mut out = vec![0.0; side * side];
    unpack(&render_bits(u, side), &mut out);
    Ok(out)
}

fn unpack(words: &[u64], out: &mut [f64]) {
    for (i, px) in out.iter_mut().enumerate() {
        *px = ((words[i / 64] >> (i % 64)) & 1) as f64;
    }
}

/// Renderer with a lazily filled per-shape bit cache for small sides.
pub struct ShapeAtlas {
    side: usize,
    cache: Vec<OnceLock<Box<[u64]>>>,
}

impl ShapeAtlas {
    pub fn new(side: usize) -> Result<Self> {
        check_side(side)?;
        let len = if side <= ATLAS_MAX_SIDE { FactorVector::count() } else { 0 };
        Ok(ShapeAtlas {
            side,
            cache: (0..len).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixel_count(&self) -> usize {
        self.side * self.side
    }

    /// Writes the image of `u` into `out`, which must hold `side²` values.
    pub fn render_into(&self, u: FactorVector, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.pixel_count());
        if self.cache.is_empty() {
            unpack(&render_bits(u, self.side), out);
        } else {
            let bits = self.cache[u.index()].get_or_init(|| render_bits(u, self.side));
            unpack(bits, out);
        }
    }

    pub fn render(&self, u: FactorVector) -> Vec<f64> {
        let mut out = vec![0.0; self.pixel_count()];
        self.render_into(u, &mut out);
        out
    }
}

/// Factors drawn uniformly, then factor `i` (one-based) set to `v`.
pub fn sample_factors(rng: &mut SeedRng, i: usize, v: u32) -> Result<FactorVector> {
    if !(1..=5).contains(&i) {
        return Err(Error::Invalid(format!("factor index {i} not in [1, 5]")));
    }
    if v < 1 || v > FACTOR_RANGES[i - 1] {
        return Err(Error::Invalid(format!(
            "value {v} outside [1, {}] for factor {i}",
            FACTOR_RANGES[i - 1]
        )));
    }
    let mut u = [0; 5];
    for (x, &c) in u.iter_mut().zip(&FACTOR_RANGES) {
        *x = uniform_int(rng, 1, c);
    }
    u[i - 1] = v;
    Ok(FactorVector(u))
}

/// A random shape with factor `i` fixed to `v`, and its factors.
pub fn sample_shape(i: usize, v: u32, seed: u64, side: usize) -> Result<(FactorVector, Vec<f64>)> {
    let mut rng = crate::numerics::rng::seeded(seed);
    let u = sample_factors(&mut rng, i, v)?;
    Ok((u, render_shape(u, side)?))
}
