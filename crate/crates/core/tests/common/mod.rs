#![allow(dead_code)]

use eigalign::autodiff::Graph;
use eigalign::models::{build_net, NetKind, NetSpec};
use eigalign::numerics::rng::{uniform_int, SeedRng};
use eigalign::numerics::Tensor;
use rand_distr::{Distribution, StandardNormal};

/// A small random generator: an MLP with 0–2 hidden layers, optionally
/// squashed, or occasionally a tiny convolutional net.
pub fn random_net(rng: &mut SeedRng, seed: u64) -> Graph {
    let m = uniform_int(rng, 1, 6) as usize;
    let spec = if uniform_int(rng, 0, 9) == 0 {
        NetSpec::conv(NetKind::Generator, m, 8, 2)
    } else {
        let n = uniform_int(rng, 1, 8) as usize;
        let depth = uniform_int(rng, 0, 2);
        let hidden = (0..depth).map(|_| uniform_int(rng, 2, 9) as usize).collect();
        let mut s = NetSpec::mlp(NetKind::Generator, m, n, hidden);
        s.squash = uniform_int(rng, 0, 1) == 1;
        s
    };
    build_net(&spec, seed).expect("valid random spec")
}

pub fn gaussian(rng: &mut SeedRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&d) / scale
    }
}

pub fn eval(g: &Graph, z: &[f64]) -> Vec<f64> {
    g.forward_values(&Tensor::row(z)).unwrap().into_data()
}

/// Random `m × m` orthogonal matrix from the eigenvectors of a random
/// symmetric matrix.
pub fn random_orthogonal(rng: &mut SeedRng, m: usize) -> Tensor {
    let a = Tensor::matrix(m, m, gaussian(rng, m * m)).unwrap();
    let s = a.add(&a.transpose()).unwrap();
    eigalign::numerics::symmetric_eig_descending(&s).unwrap().1
}
