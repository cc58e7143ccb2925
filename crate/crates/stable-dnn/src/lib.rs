//! Stability-guaranteed deep network forward propagation schemes derived from
//! ODE and Hamiltonian dynamics, with exact adjoint gradients, smoothness
//! regularization, spectral stability diagnostics, and a multi-level block
//! coordinate descent trainer.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`], [`linop`], [`pcg`]: dense numerics, abstract linear operators
//!   (dense and 3x3 convolution), and a preconditioned conjugate gradient solver.
//! - [`activation`]: element-wise activations and derivatives.
//! - [`propagation`]: the four forward schemes (ResNet-Euler, antisymmetric,
//!   leapfrog, Verlet) and their reverse/forward-mode derivatives.
//! - [`classifier`]: hypothesis functions, cross-entropy losses, and the
//!   Newton-PCG solver for the convex classification subproblem.
//! - [`regularization`]: time-smoothness, weight decay, and spatial smoothness
//!   regularizers with gradients and Hessian matvecs.
//! - [`training`]: block coordinate descent, subsampled Gauss-Newton-PCG
//!   updates, and multi-level layer refinement.
//! - [`stability`]: Jacobian spectra, continuous/discrete stability verdicts,
//!   and phase plane trajectory export.
//! - [`datasets`]: deterministic 2-D benchmark generators and an MNIST IDX loader.
//! - [`model`]: versioned model container serialization.

pub mod activation;
pub mod classifier;
pub mod datasets;
pub mod error;
pub mod linop;
pub mod matrix;
pub mod model;
pub mod pcg;
pub mod propagation;
pub mod regularization;
pub mod stability;
pub mod training;

pub use activation::Activation;
pub use error::{Error, Result};
pub use linop::LinearOperator;
pub use matrix::Matrix;
pub use pcg::{pcg_solve, PcgConfig, PcgResult};
