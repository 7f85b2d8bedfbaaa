//! Dense linear algebra, the deterministic random stream and matrix
//! initializers.

mod init;
mod linalg;
mod matrix;
mod rng;

pub use init::{glorot_normal_init, identity_init, orthogonal_init};
pub use linalg::{
    determinant, jacobi_svd, qr, singular_values_jacobi, solve, spectral_norm_estimate, Lu, Svd,
};
pub use matrix::{dot, l2_norm, sum_sq, Matrix};
pub use rng::{Rng, RngState};
