//! Evaluation: the alignment heatmap `F`, sprite rendering, the
//! disentanglement metric and encoder inversion.

mod inversion;
mod metric;
mod shapes;

pub use inversion::{reconstruction_loss, train_inversion_encoder, InversionConfig};
pub use metric::{
    disentanglement_score, make_metric_batch, ConstantEncoder, Encoder, GraphEncoder, LinearClassifier,
    MetricBatch, MetricConfig, OracleEncoder, PixelEncoder, ScoreReport, CLASSES,
};
pub use shapes::{
    render_shape, sample_factors, sample_shape, FactorVector, ShapeAtlas, Symbol, FACTOR_RANGES,
    MAX_RADIUS,
};

use std::io::Write;
use std::path::Path;

use crate::autodiff::Graph;
use crate::eigenpath::write_pgm;
use crate::error::{Error, Result};
use crate::numerics::rng::{child_rng, standard_normal};
use crate::numerics::{symmetric_eig_descending, Tensor};
use crate::spectral::evaluate_normal_jacobian;

/// `F = E[V(z) ∘ V(z)]` over the prior, with `V(z)` the eigenvectors of
/// `M_z(z)` in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapMatrix(pub Tensor);

impl HeatmapMatrix {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Mean of `F_jj` over `j < k`.
    pub fn diagonal_mean(&self, k: usize) -> f64 {
        let f = &self.0;
        let k = k.min(f.rows());
        (0..k).map(|j| f.get(j, j)).sum::<f64>() / k as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let f = &self.0;
        for i in 0..f.rows() {
            let row: Vec<String> = f.row_slice(i).iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Grayscale image with the largest entry mapped to white.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let top = self.0.max_abs();
        let scale = if top > 0.0 { 1.0 / top } else { 0.0 };
        let px: Vec<f64> = self.0.data().iter().map(|x| x * scale).collect();
        write_pgm(path, &px, self.0.cols(), self.0.rows())
    }
}

/// `F` from a seeded Monte Carlo average over `samples` latent draws.
pub fn heatmap_f(g: &Graph, samples: usize, seed: u64) -> Result<HeatmapMatrix> {
    if samples == 0 {
        return Err(Error::Invalid("at least one sample is required".into()));
    }
    let m = g.input_dim();
    let mut rng = child_rng(seed, "heatmap", 0);
    let mut acc = Tensor::zeros(&[m, m]);
    for _ in 0..samples {
        let z = standard_normal(&mut rng, &[m]);
        let (_, v) = symmetric_eig_descending(&evaluate_normal_jacobian(g, z.data())?)?;
        acc = acc.add(&v.hadamard(&v)?)?;
    }
    Ok(HeatmapMatrix(acc.scale(1.0 / samples as f64)))
}
