//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAX_SWEEPS: usize = 100;
const OFFDIAG_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;
const MAX_ORDER: usize = 1024;

/// Eigenvalues sorted in descending order together with the matching
/// orthonormal eigenvector columns.
///
/// Each eigenvector is oriented so that its first component with magnitude
/// above `1e-12` is non-negative.
pub fn symmetric_eig_descending(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            m.dims()
        )));
    }
    let n = m.rows();
    if n > MAX_ORDER {
        return Err(Error::Dimension(format!(
            "order {n} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    m.ensure_finite("eigendecomposition input")?;

    let scale = m.max_abs();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    let tolerance = SYMMETRY_TOL * scale;
    if asym > tolerance {
        return Err(Error::Asymmetric {
            asymmetry: asym,
            tolerance,
        });
    }

    // Work on the symmetrized copy.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }
    let mut v = Tensor::identity(n).into_data();

    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = OFFDIAG_TOL * frob;
    for _ in 0..MAX_SWEEPS {
        let off = offdiag_norm(&a, n);
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, n, p, q, c, s);
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));

    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        let lead = (0..n)
            .map(|r| v[r * n + src])
            .find(|x| x.abs() > 1e-12)
            .unwrap_or(0.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors.set(r, col, sign * v[r * n + src]);
        }
    }
    Ok((values, vectors))
}

fn offdiag_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Applies `Jᵀ A J` for the rotation in the (p, q) plane.
fn rotate(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
}
