//! Dose-response estimation for continuous treatments with general
//! instrumental variables.
//!
//! The library identifies and estimates the dose-response function
//! `theta(a) = E[Y(a)]` when unmeasured confounding is present but an
//! instrument is available. The pipeline is:
//!
//! 1. pick a weighting function `pi(Z, L)` (usually a fitted conditional
//!    density of the treatment) and verify it is uniformly relevant on the
//!    target treatment interval ([`diagnostics`]),
//! 2. cross-fit the nuisance vector and evaluate augmented inverse
//!    probability weighting scores ([`nuisance`], [`scores`], [`crossfit`]),
//! 3. smooth the scores against the treatment with local linear kernel
//!    regression or a natural-spline fit, with pointwise confidence
//!    intervals ([`kernel_smooth`], [`drf`]),
//! 4. benchmark the whole pipeline on synthetic data ([`sim`]).
//!
//! Numeric kernels (`kernel_smooth`, `spline`, `density`, `linalg`) are
//! generic over the scalar type through [`scalar::Scalar`]; the estimation
//! pipeline instantiates them at [`Real`].

pub mod data;
pub mod density;
pub mod diagnostics;
pub mod drf;
pub mod error;
pub mod kernel_smooth;
pub mod linalg;
pub mod nuisance;
pub mod scalar;
pub mod scores;
pub mod sim;
pub mod spline;

pub mod crossfit;

pub use error::{Error, Result};

/// Scalar type used by the estimation pipeline.
pub type Real = f64;

/// Local linear kernel regression fit at [`Real`] precision.
pub type LlkrFit = kernel_smooth::LlkrFit<Real>;
/// Natural cubic spline basis at [`Real`] precision.
pub type SplineBasis = spline::SplineBasis<Real>;
/// Penalized tensor-spline regression at [`Real`] precision.
pub type PenalizedSpline = spline::PenalizedSpline<Real>;
/// Conditional kernel density estimator at [`Real`] precision.
pub type CondKde = density::CondKde<Real>;
/// Marginal kernel density estimator at [`Real`] precision.
pub type Kde1d = density::Kde1d<Real>;
