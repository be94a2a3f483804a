//! Doppler-robust maximum-likelihood parametric channel estimation for
//! multiuser MIMO-OFDM uplink.
//!
//! The estimator recovers, for every user, the multipath components
//! `(b, ω₁, ω₂, φ, θ)` that make up its channel: complex gain, delay phase
//! slope across subcarriers, Doppler phase slope across OFDM symbols, angle
//! of arrival and angle of departure. Each coordinate update is an exact
//! one-dimensional minimization: the partial derivative of the concentrated
//! likelihood is a trigonometric polynomial whose real roots are found with a
//! companion-matrix eigenvalue solve.
//!
//! Module map:
//!
//! * [`model`]: domain types, steering vectors, forward synthesis, pilots and
//!   random scenarios.
//! * [`likelihood`]: objective, closed-form gain and the incremental residual
//!   cache.
//! * [`derivatives`]: Fourier-series partial derivatives per coordinate.
//! * [`rootfind`]: companion-matrix root finding of trigonometric series.
//! * [`optimizer`]: the path/user scheduling estimator with momentum,
//!   over-relaxation and AIC model-order selection.
//! * [`harness`]: ground-truth matching, F1/MAE metrics, Monte Carlo sweeps
//!   and report files.

mod beamspace;
pub mod derivatives;
pub mod eigen;
mod error;
pub mod harness;
pub mod likelihood;
pub mod model;
pub mod optimizer;
pub mod rootfind;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64;
