//! Spectral tools for the latent space of generative networks.
//!
//! The crate computes matrix-free products with a generator's Jacobian,
//! estimates the leading eigenvectors of the normal Jacobian `M_z = JᵀJ` by
//! masked simultaneous power iteration, turns those estimates into a
//! differentiable penalty that aligns them with the coordinate axes, traces
//! latent paths along eigenvectors, and evaluates disentanglement on
//! procedurally rendered sprites.

pub mod align_reg;
pub mod autodiff;
pub mod eigenpath;
pub mod error;
pub mod evalsuite;
pub mod models;
pub mod numerics;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
