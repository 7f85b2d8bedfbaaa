//! Recurrent networks whose hidden-to-hidden matrix is factorized as
//! `W = U diag(s) Vᵀ`, with `U` and `V` kept orthogonal by Cayley-transform
//! geodesic descent and the singular values confined to a margin about one.
//!
//! The numeric core ([`matcore`], [`spectral`], [`rnncell`], [`optim`]) is
//! generic over [`Scalar`]; the task loaders, diagnostics and trainer work in
//! `f64`. Aliases for the common instantiations live at the crate root.

pub mod diagnostics;
pub mod error;
pub mod matcore;
pub mod optim;
pub mod rnncell;
pub mod scalar;
pub mod spectral;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = matcore::Matrix<f64>;
pub type Matrix32 = matcore::Matrix<f32>;
pub type RnnModel64 = rnncell::RnnModel<f64>;
pub type RnnModel32 = rnncell::RnnModel<f32>;
pub type Batch64 = rnncell::Batch<f64>;
pub type Gradients64 = rnncell::Gradients<f64>;
pub type FactorizedTransition64 = spectral::FactorizedTransition<f64>;
pub type OptimState64 = optim::OptimState<f64>;
