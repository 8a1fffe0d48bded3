//! Masked simultaneous power iteration for the leading eigenpairs of the
//! normal Jacobian, and dense assembly of `M_z` for small latent spaces.

use std::rc::Rc;

use crate::autodiff::{self, Axis, Graph, Linearization, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{column_norms, Tensor};

/// Added to every column norm before renormalizing.
pub const POWER_EPS: f64 = 1e-8;

/// Column norms below this are treated as a null masked subspace.
const NULL_COLUMN: f64 = 1e-30;

/// The `m × k` 0/1 mask `M_k`: column `j` zeroes the first `j − 1`
/// coordinates, emulating deflation by `e₁ … e_{j−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigvecMask {
    mask: Tensor,
}

impl EigvecMask {
    pub fn tensor(&self) -> &Tensor {
        &self.mask
    }

    pub fn latent_dim(&self) -> usize {
        self.mask.rows()
    }

    pub fn k(&self) -> usize {
        self.mask.cols()
    }

    /// The mask transposed to a `k × m` direction-per-row layout.
    pub fn rows_layout(&self) -> Tensor {
        self.mask.transpose()
    }
}

pub(crate) fn check_k(m: usize, k: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::Invalid(format!("need 1 ≤ k ≤ m, got k = {k}, m = {m}")));
    }
    Ok(())
}

pub fn build_eigvec_mask(m: usize, k: usize) -> Result<EigvecMask> {
    check_k(m, k)?;
    let mut mask = Tensor::filled(&[m, k], 1.0);
    for j in 0..k {
        for i in 0..j {
            mask.set(i, j, 0.0);
        }
    }
    Ok(EigvecMask { mask })
}

/// Eigenvalue estimates `Λ` and unit (or null) eigenvector columns `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigEstimate {
    pub values: Vec<f64>,
    /// `m × k`, one estimate per column.
    pub vectors: Tensor,
}

/// Runs `T` rounds of `V ← M_k ∘ mv(V); Λ ← ‖columns‖; V ← V (Λ + εI)⁻¹`
/// starting from `M_k ∘ V₀`. `matvec` receives all `k` columns at once and
/// is invoked exactly `T` times.
pub fn estimate_leading_eigenpairs<F>(mut matvec: F, v0: &Tensor, iterations: usize) -> Result<EigEstimate>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if iterations == 0 {
        return Err(Error::Invalid("at least one power iteration is required".into()));
    }
    if v0.rank() != 2 {
        return Err(Error::Dimension("initial estimates must be an m × k matrix".into()));
    }
    let (m, k) = (v0.rows(), v0.cols());
    let mask = build_eigvec_mask(m, k)?;
    v0.ensure_finite("initial eigenvector estimates")?;
    let mut v = mask.tensor().hadamard(v0)?;
    let mut values = vec![0.0; k];
    for it in 1..=iterations {
        let mv = matvec(&v)?;
        if mv.dims() != [m, k] {
            return Err(Error::Dimension(format!(
                "matvec returned {:?}, expected [{m}, {k}]",
                mv.dims()
            )));
        }
        if !mv.all_finite() {
            return Err(Error::NonFinite(format!("power iteration {it}")));
        }
        v = mask.tensor().hadamard(&mv)?;
        values = column_norms(&v);
        for (j, &n) in values.iter().enumerate() {
            let scale = if n < NULL_COLUMN { 0.0 } else { 1.0 / (n + POWER_EPS) };
            for i in 0..m {
                v.set(i, j, v.get(i, j) * scale);
            }
        }
        for n in values.iter_mut() {
            if *n < NULL_COLUMN {
                *n = 0.0;
            }
        }
    }
    Ok(EigEstimate { values, vectors: v })
}

/// Estimates for `g` at `z`, one batched normal-Jacobian product per
/// iteration.
pub fn estimate_for_graph(g: &Graph, z: &[f64], v0: &Tensor, iterations: usize) -> Result<EigEstimate> {
    estimate_leading_eigenpairs(|v| autodiff::mz_matmat(g, z, v), v0, iterations)
}

/// Power iteration recorded on `tape` so that the final estimates can be
/// differentiated with respect to anything the linearization depends on.
///
/// Directions are stored one per row: `v0` and `mask` are `r × m`, where
/// the linearization's input is also `r × m`. Iterations with index below
/// `detach_before` are cut from the gradient. Returns the final directions
/// and their `r × 1` pre-normalization norms.
pub fn power_iteration_on_tape(
    tape: &Tape,
    lin: Linearization,
    v0: Var,
    mask: Rc<Tensor>,
    iterations: usize,
    detach_before: usize,
) -> Result<(Var, Var)> {
    if iterations == 0 {
        return Err(Error::Invalid("at least one power iteration is required".into()));
    }
    let dims = tape.dims(v0);
    if dims != mask.dims() || dims != tape.dims(lin.input) {
        return Err(Error::Dimension(format!(
            "directions {dims:?}, mask {:?}, input {:?}",
            mask.dims(),
            tape.dims(lin.input)
        )));
    }
    let m = dims[1];
    let mut v = tape.mul_const(v0, mask.clone());
    let mut norms = v;
    for it in 0..iterations {
        if it < detach_before {
            v = tape.leaf((*tape.value(v)).clone());
        }
        let y = lin.normal_product(tape, v)?;
        let y = tape.mul_const(y, mask.clone());
        if !tape.value(y).all_finite() {
            return Err(Error::NonFinite(format!("power iteration {}", it + 1)));
        }
        let sq = tape.square(y);
        norms = tape.sqrt(tape.sum_axis(sq, Axis::Cols));
        let inv = tape.recip(tape.offset(norms, POWER_EPS));
        v = tape.mul(y, tape.broadcast(inv, Axis::Cols, m));
    }
    Ok((v, norms))
}

/// Dense `M_z(z)`, column `i` being `JᵀJeᵢ`, symmetrized as `(M + Mᵀ)/2`.
pub fn evaluate_normal_jacobian(g: &Graph, z: &[f64]) -> Result<Tensor> {
    let m = g.input_dim();
    if m > 1024 {
        return Err(Error::Invalid(format!("latent size {m} exceeds 1024")));
    }
    let mz = autodiff::mz_matmat(g, z, &Tensor::identity(m))?;
    let sym = mz.add(&mz.transpose())?.scale(0.5);
    Ok(sym)
}

/// `n_z(v, z) = ⟨v, M_z(z) v⟩^{1/2}`.
pub fn seminorm(g: &Graph, z: &[f64], v: &[f64]) -> Result<f64> {
    let mv = autodiff::mz_matvec(g, z, v)?;
    let q: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
    Ok(q.max(0.0).sqrt())
}
