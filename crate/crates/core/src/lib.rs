//! Nested error regression with area-specific slopes and sampling variances.
//!
//! The crate fits the model
//!
//! ```text
//! y_ij = beta_0 + x_ij' beta_i + gamma_i + eps_ij,
//! gamma_i ~ N(0, h_i sigma2_gamma),  eps_ij ~ N(0, k_ij sigma2_eps_i)
//! ```
//!
//! by robust pooled estimating equations ([`gee`]) or by maximum likelihood
//! ([`mle`]), predicts small-area means ([`predict`]), estimates area tilting
//! parameters from M-quantile coefficients ([`mq`]), and estimates general
//! uncertainty measures by parametric bootstrap and Monte Carlo jackknife
//! ([`uncertainty`]). [`sim`] hosts the model-based and design-based Monte Carlo
//! harnesses.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `parallel` feature runs replicate loops on rayon; results are
//! identical for any worker count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod exec;
pub mod gee;
pub mod influence;
mod linalg;
pub mod math;
pub mod mle;
pub mod model;
pub mod mq;
pub mod predict;
pub mod quad;
pub mod rng;
pub mod roots;
pub mod sim;
pub mod uncertainty;

pub use error::{Error, Result};
pub use gee::{FitControl, GeeConfig};
pub use influence::{PsiBase, PsiSpec};
pub use model::{AreaInfo, Dataset, FitMethod, FitResult, ParamVector, Sample, UnitRecord};
