//! Online sparse Gaussian-process regression with recurrently evolved
//! interdomain inducing variables.
//!
//! The central object is a sparse GP whose inducing variables are integrals
//! of the latent function against a bank of time-adapted orthogonal basis
//! functions (scaled Legendre, Laguerre or Fourier families). As the data
//! stream advances, the prior covariance blocks `K_fu` and `K_uu` are not
//! recomputed from scratch: they obey linear ODEs in the end time of the
//! basis and are advanced by cheap recurrences (forward Euler or a bilinear
//! transform). `K_uu` double integrals are factorized through random Fourier
//! features so each feature column evolves by the same recurrence.
//!
//! On top of that sit closed-form Gaussian machinery (exact GP regression,
//! SGPR, SVGP prediction, ELBO/KL), a streaming-task protocol with a
//! closed-form online posterior update, baselines that re-select inducing
//! locations (uniform resampling, pivoted Cholesky), pseudo-time ordering for
//! multidimensional inputs, and evaluation metrics (RMSE, NLPD, ECE).
//!
//! Quadrature reference implementations live alongside every recurrence so
//! that each fast path can be checked against a slow, independent oracle.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable default features
//! and enable `libm` for builds without the standard library. The `std`
//! feature (default) additionally enables internal parallelism via rayon.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]
#![warn(missing_docs)]

extern crate alloc;

pub mod error;
pub mod gp;
pub mod hippo;
pub mod interdomain;
pub mod kernels;
pub mod linalg;
mod math;
pub mod metrics;
pub mod multidim;
pub mod online;
pub mod quad;

pub use error::{Error, Result};
pub use gp::{DataBatch, GaussianDist, Predictive};
pub use hippo::{BasisFamily, CoefficientState, HippoOperator, Scheme};
pub use interdomain::{FeatureState, KfuBank, KfuRow, KuuDirectOdeState};
pub use kernels::{FrequencyDraws, Kernel, KernelVariant, NoiseModel};
pub use online::{OnlineMethod, OnlineModelState, TaskStream};
