//! Spectral-Galerkin simulation and verification toolkit for damped
//! second-order evolution equations with state-dependent delay,
//!
//! ```text
//!     u_tt + k u_t + A u + F(u) + M(u_t-segment) = 0,
//! ```
//!
//! posed on a Hilbert space spanned by a tensor-sine eigenbasis of the
//! operator `A` (wave: A = -Laplacian, plate: A = bi-Laplacian).  `F` is a
//! structural nonlinearity (Berger, Kirchhoff, or a cubic wave polynomial)
//! and `M` applies a response map to the state sampled at a delayed time
//! `t - tau`, where the lag `tau` itself depends on the recent solution
//! segment through a scalar functional.
//!
//! The crate is organised in layers:
//!
//! * [`spectral`] — eigenbasis, mode vectors, fractional-power norms;
//! * [`nonlin`] — nonlinearities, their potentials, collocation grids;
//! * [`delay`] — solution history segments, delay laws, the memory term `M`;
//! * [`integrator`] — exponential (ETD2RK) time stepper and trace capture;
//! * [`diagnostics`] — energy ledger, Lyapunov functional, dissipativity,
//!   quasi-stability and Lipschitz measurements, strong-form residuals;
//! * [`ode_stability`] — characteristic-root analysis of the scalar
//!   prototype DDE `x'' + k x' + a x + x(t - tau) = 0`;
//! * [`attractor`] — correlation-dimension estimates and attraction rates;
//! * [`config`] — TOML experiment configuration shared with the CLI.

pub mod attractor;
pub mod config;
pub mod delay;
pub mod diagnostics;
pub mod integrator;
pub mod nonlin;
pub mod ode_stability;
pub mod presets;
pub mod spectral;

mod error;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
