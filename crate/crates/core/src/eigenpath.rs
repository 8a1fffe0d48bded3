//! Latent trajectories along a leading eigenvector of `M_z`, the local
//! decoder around a base point, and perturbation grids.

use std::io::Write;
use std::path::Path;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::numerics::rng::{child_rng, unit_sphere};
use crate::numerics::{symmetric_eig_descending, Tensor};
use crate::spectral::{check_k, evaluate_normal_jacobian};

/// Step size, decay and length used for the sprite models.
pub const SPRITE_PATH: PathParams = PathParams {
    alpha: 5e-3,
    rho: 0.99,
    steps: 2000,
};

/// Step size, decay and length used for the large image models.
pub const LARGE_MODEL_PATH: PathParams = PathParams {
    alpha: 1.5e-2,
    rho: 0.99,
    steps: 2000,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub alpha: f64,
    pub rho: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// `z₀ … z_N`.
    pub iterates: Vec<Vec<f64>>,
    /// Smoothed directions `w₁ … w_N`.
    pub directions: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.directions.len()
    }

    /// `index,z1,…,zm` header followed by one row per iterate.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let m = self.iterates.first().map_or(0, Vec::len);
        write!(out, "index")?;
        for j in 1..=m {
            write!(out, ",z{j}")?;
        }
        writeln!(out)?;
        for (i, z) in self.iterates.iter().enumerate() {
            write!(out, "{i}")?;
            for x in z {
                write!(out, ",{x:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Decodes the iterates at `indices`.
    pub fn decode(&self, g: &Graph, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices
            .iter()
            .map(|&i| {
                let z = self
                    .iterates
                    .get(i)
                    .ok_or_else(|| Error::Invalid(format!("iterate {i} out of range")))?;
                Ok(g.forward_values(&Tensor::row(z))?.into_data())
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Follows the `k`-th eigenvector (1-based, descending) of `M_z` from `z`:
/// `z_i = z_{i−1} − α w_i` with `w_i = ρ w_{i−1} + (1 − ρ) v_k(z_{i−1})`,
/// where `v_k` is flipped when it points against `w_{i−1}`.
pub fn trace_eigenpath(g: &Graph, z: &[f64], k: usize, params: PathParams) -> Result<TrajectoryRecord> {
    let m = g.input_dim();
    check_k(m, k)?;
    if z.len() != m {
        return Err(Error::Dimension(format!("z has length {}, expected {m}", z.len())));
    }
    let PathParams { alpha, rho, steps } = params;
    if !alpha.is_finite() || alpha == 0.0 {
        return Err(Error::Invalid(format!("step size {alpha} must be finite and non-zero")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Invalid(format!("decay {rho} outside [0, 1)")));
    }
    if steps == 0 {
        return Err(Error::Invalid("at least one step is required".into()));
    }
    let mut iterates = vec![z.to_vec()];
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(steps);
    for i in 1..=steps {
        let prev = &iterates[i - 1];
        let mz = evaluate_normal_jacobian(g, prev)?;
        let (_, vecs) = symmetric_eig_descending(&mz)?;
        let mut w = vecs.column_vec(k - 1);
        if let Some(last) = directions.last() {
            if dot(last, &w) < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            for (x, l) in w.iter_mut().zip(last) {
                *x = rho * l + (1.0 - rho) * *x;
            }
        }
        let next: Vec<f64> = prev.iter().zip(&w).map(|(p, d)| p - alpha * d).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("eigenpath step {i}")));
        }
        iterates.push(next);
        directions.push(w);
    }
    Ok(TrajectoryRecord { iterates, directions })
}

/// `g(z₀ + Σ cᵢ vᵢ)` for the first `coeffs.len()` columns of `v`.
pub fn local_decode(g: &Graph, z0: &[f64], coeffs: &[f64], v: &Tensor) -> Result<Vec<f64>> {
    let m = g.input_dim();
    if z0.len() != m || v.rank() != 2 || v.rows() != m || coeffs.len() > v.cols() {
        return Err(Error::Dimension(format!(
            "local decode needs z₀ of length {m}, an {m} × r basis and at most r coefficients"
        )));
    }
    let mut z = z0.to_vec();
    for (j, &c) in coeffs.iter().enumerate() {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += c * v.get(i, j);
        }
    }
    Ok(g.forward_values(&Tensor::row(&z))?.into_data())
}

/// Two rows of decoded images, each starting with `g(z)`: perturbations of
/// radius `eps` along random unit directions, then along the top `count`
/// eigenvectors of `M_z(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationGrid {
    pub random: Vec<Vec<f64>>,
    pub eigen: Vec<Vec<f64>>,
}

pub fn perturbation_grid(g: &Graph, z: &[f64], eps: f64, count: usize, seed: u64) -> Result<PerturbationGrid> {
    let m = g.input_dim();
    check_k(m, count)?;
    if z.len() != m {
        return Err(Error::Dimension(format!("z has length {}, expected {m}", z.len())));
    }
    let decode = |d: &[f64]| -> Result<Vec<f64>> {
        let p: Vec<f64> = z.iter().zip(d).map(|(a, b)| a + eps * b).collect();
        Ok(g.forward_values(&Tensor::row(&p))?.into_data())
    };
    let centre = decode(&vec![0.0; m])?;
    let mut rng = child_rng(seed, "perturb", 0);
    let mut random = vec![centre.clone()];
    for _ in 0..count {
        random.push(decode(&unit_sphere(&mut rng, m))?);
    }
    let (_, vecs) = symmetric_eig_descending(&evaluate_normal_jacobian(g, z)?)?;
    let mut eigen = vec![centre];
    for j in 0..count {
        eigen.push(decode(&vecs.column_vec(j))?);
    }
    Ok(PerturbationGrid { random, eigen })
}

/// Writes a binary 8-bit PGM, mapping `[0, 1]` linearly to `[0, 255]`.
pub fn write_pgm(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Dimension(format!(
            "{} pixels for a {width} × {height} image",
            pixels.len()
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Tiles equally sized square images into one row-major grid.
pub fn tile_images(rows: &[Vec<Vec<f64>>], side: usize) -> Result<(Vec<f64>, usize, usize)> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (w, h) = (cols * side, rows.len() * side);
    let mut out = vec![0.0; w * h];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.len() != side * side {
                return Err(Error::Dimension(format!("image of {} pixels, side {side}", img.len())));
            }
            for y in 0..side {
                let dst = (r * side + y) * w + c * side;
                out[dst..dst + side].copy_from_slice(&img[y * side..(y + 1) * side]);
            }
        }
    }
    Ok((out, w, h))
}
