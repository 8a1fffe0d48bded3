//! Reverse-mode differentiation of feedforward networks and the four
//! Jacobian products `Jv`, `Jᵀv`, `JᵀJv` and `JJᵀv`.
//!
//! There is no native forward mode. `Jv` is obtained from two nested reverse
//! passes: for a dummy cotangent `u`, `g(u) = Jᵀu` is linear in `u`, and
//! differentiating `⟨g(u), v⟩` with respect to `u` yields `Jv`.

mod graph;
mod tape;

pub use graph::{ConvGeometry, Graph, GraphBuilder, Layer, Param, ParamKind};
pub use tape::{Axis, IndexMap, Tape, Var};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// The Jacobian of `output` with respect to `input`, both recorded on one
/// tape, exposed through matrix-free products.
///
/// Inputs and outputs are row-batched: row `r` of a product only involves
/// row `r` of the input, so stacking `k` copies of one latent point gives
/// `k` independent products in a single pass.
#[derive(Debug, Clone, Copy)]
pub struct Linearization {
    pub input: Var,
    pub output: Var,
}

impl Linearization {
    /// `Jᵀw` for every row of `w` (shaped like the output).
    pub fn vjp(&self, tape: &Tape, w: Var) -> Result<Var> {
        Ok(tape.grad(&[self.output], &[w], &[self.input])?[0])
    }

    /// `Jv` by the double-reverse construction.
    pub fn jvp(&self, tape: &Tape, v: Var) -> Result<Var> {
        let u = tape.leaf(Tensor::zeros(&tape.dims(self.output)));
        let jt_u = self.vjp(tape, u)?;
        Ok(tape.grad(&[jt_u], &[v], &[u])?[0])
    }

    /// `JᵀJv`.
    pub fn normal_product(&self, tape: &Tape, v: Var) -> Result<Var> {
        let jv = self.jvp(tape, v)?;
        self.vjp(tape, jv)
    }

    /// `JJᵀw`.
    pub fn co_normal_product(&self, tape: &Tape, w: Var) -> Result<Var> {
        let jt_w = self.vjp(tape, w)?;
        self.jvp(tape, jt_w)
    }
}

/// Values recorded by one forward evaluation: the layer boundaries
/// `b₀ … b_L` with `b₀` the input and `b_L` the output.
pub struct ForwardPass {
    tape: Tape,
    params: Vec<Var>,
    activations: Vec<Var>,
}

impl ForwardPass {
    pub fn record(g: &Graph, input: &Tensor) -> Result<ForwardPass> {
        g.check_input(input)?;
        let tape = Tape::new();
        let params = g.bind(&tape);
        let x = tape.leaf(input.clone());
        let activations = g.forward(&tape, x, &params);
        Ok(ForwardPass {
            tape,
            params,
            activations,
        })
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn input(&self) -> Var {
        self.activations[0]
    }

    pub fn output(&self) -> Var {
        *self.activations.last().expect("b₀ always present")
    }

    /// Boundary value `b_k` as recorded.
    pub fn boundary(&self, k: usize) -> Tensor {
        (*self.tape.value(self.activations[k])).clone()
    }

    pub fn depth(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn linearization(&self) -> Linearization {
        Linearization {
            input: self.input(),
            output: self.output(),
        }
    }

    pub fn output_value(&self) -> Tensor {
        self.boundary(self.depth())
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what} has length {got}, expected {want}")))
    }
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn to_row(v: &[f64]) -> Tensor {
    Tensor::row(v)
}

/// Evaluates `g` at a single point, returning the output and the tape.
pub fn evaluate(g: &Graph, z: &[f64]) -> Result<(Vec<f64>, ForwardPass)> {
    check_len("z", z.len(), g.input_dim())?;
    finite(z, "z")?;
    let pass = ForwardPass::record(g, &to_row(z))?;
    let x = pass.output_value().into_data();
    finite(&x, "network output")?;
    Ok((x, pass))
}

/// `Jᵀw` at the point recorded in `pass`.
pub fn vjp(g: &Graph, pass: &ForwardPass, w: &[f64]) -> Result<Vec<f64>> {
    check_len("w", w.len(), g.output_dim())?;
    let rows = pass.tape.dims(pass.input())[0];
    if rows != 1 {
        return Err(Error::Dimension("vjp expects a single-point forward pass".into()));
    }
    let t = &pass.tape;
    let wv = t.leaf(to_row(w));
    let r = pass.linearization().vjp(t, wv)?;
    Ok(t.value(r).data().to_vec())
}

/// `Jv` at `z`, computed with two reverse passes.
pub fn jvp(g: &Graph, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len("v", v.len(), g.input_dim())?;
    let (_, pass) = evaluate(g, z)?;
    let t = &pass.tape;
    let vv = t.leaf(to_row(v));
    let r = pass.linearization().jvp(t, vv)?;
    Ok(t.value(r).data().to_vec())
}

/// `M_z(z) v = JᵀJv`.
pub fn mz_matvec(g: &Graph, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len("v", v.len(), g.input_dim())?;
    let (_, pass) = evaluate(g, z)?;
    let t = &pass.tape;
    let vv = t.leaf(to_row(v));
    let r = pass.linearization().normal_product(t, vv)?;
    Ok(t.value(r).data().to_vec())
}

/// `JJᵀw`.
pub fn jjt_matvec(g: &Graph, z: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_len("w", w.len(), g.output_dim())?;
    let (_, pass) = evaluate(g, z)?;
    let t = &pass.tape;
    let wv = t.leaf(to_row(w));
    let r = pass.linearization().co_normal_product(t, wv)?;
    Ok(t.value(r).data().to_vec())
}

/// `M_z(z) V` for the columns of an `m × k` matrix `V`, computed in one
/// batched pass over `k` stacked copies of `z`.
pub fn mz_matmat(g: &Graph, z: &[f64], v: &Tensor) -> Result<Tensor> {
    let m = g.input_dim();
    check_len("z", z.len(), m)?;
    if v.rank() != 2 || v.rows() != m {
        return Err(Error::Dimension(format!(
            "direction matrix must be {m} × k, got {:?}",
            v.dims()
        )));
    }
    let k = v.cols();
    let stacked = Tensor::matrix(k, m, z.repeat(k))?;
    let pass = ForwardPass::record(g, &stacked)?;
    let t = &pass.tape;
    let dirs = t.leaf(v.transpose());
    let r = pass.linearization().normal_product(t, dirs)?;
    let out = t.value(r).transpose();
    out.ensure_finite("normal Jacobian product")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// g(z) = (z₁², z₁z₂)
    pub(crate) fn quadratic() -> Graph {
        Graph::builder(2).product(vec![(0, 0), (0, 1)]).unwrap().build().unwrap()
    }

    #[test]
    fn identity_graph() {
        let g = Graph::builder(2).build().unwrap();
        let (x, pass) = evaluate(&g, &[1.0, 2.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert_eq!(pass.depth(), 0);
    }

    #[test]
    fn single_affine() {
        let w = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let g = Graph::builder(2).affine(w, Some(Tensor::row(&[0.0, 0.0]))).unwrap().build().unwrap();
        assert_eq!(evaluate(&g, &[1.0, 1.0]).unwrap().0, vec![2.0, 1.0]);
    }

    #[test]
    fn quadratic_products() {
        let g = quadratic();
        let (x, pass) = evaluate(&g, &[1.0, 2.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
        assert_eq!(pass.boundary(0).data(), &[1.0, 2.0]);
        assert_eq!(vjp(&g, &pass, &[1.0, 1.0]).unwrap(), vec![4.0, 1.0]);
        // repeated calls against one tape
        assert_eq!(vjp(&g, &pass, &[1.0, 0.0]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(jvp(&g, &[1.0, 2.0], &[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(mz_matvec(&g, &[1.0, 2.0], &[1.0, 0.0]).unwrap(), vec![8.0, 2.0]);
        // JJᵀ = [[4,4],[4,5]]
        assert_eq!(jjt_matvec(&g, &[1.0, 2.0], &[1.0, 0.0]).unwrap(), vec![4.0, 4.0]);
    }

    #[test]
    fn linear_map_products() {
        let a = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let g = Graph::linear(&a).unwrap();
        let z = [0.3, -0.7];
        let v = [1.0, -2.0];
        let w = [0.5, 1.0, -1.0];
        let av = a.matmul(&Tensor::column(&v)).unwrap();
        assert_eq!(jvp(&g, &z, &v).unwrap(), av.data());
        let (_, pass) = evaluate(&g, &z).unwrap();
        let atw = a.transpose().matmul(&Tensor::column(&w)).unwrap();
        assert_eq!(vjp(&g, &pass, &w).unwrap(), atw.data());
        let atav = a.transpose().matmul(&av).unwrap();
        assert_eq!(mz_matvec(&g, &z, &v).unwrap(), atav.data());
    }

    #[test]
    fn batched_matches_single() {
        let g = quadratic();
        let v = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = mz_matmat(&g, &[1.0, 2.0], &v).unwrap();
        assert_eq!(m.data(), &[8.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn arity_errors() {
        let g = quadratic();
        assert!(matches!(evaluate(&g, &[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(jvp(&g, &[1.0, 2.0], &[1.0]), Err(Error::Dimension(_))));
        let (_, pass) = evaluate(&g, &[1.0, 2.0]).unwrap();
        assert!(matches!(vjp(&g, &pass, &[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
        assert!(matches!(evaluate(&g, &[f64::NAN, 1.0]), Err(Error::NonFinite(_))));
    }
}
