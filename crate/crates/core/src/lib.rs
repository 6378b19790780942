//! Generalized deep hidden physics models.
//!
//! Two fully connected networks are trained together: `N_sol` maps a
//! discretized input function, the space-time coordinates and optional
//! scenario context (PDE parameters or domain length) to the state `u`,
//! while `N_hid` maps the candidate terms `(x, t, u, u_x, u_xx)` to the
//! unknown right-hand side of `u_t = N(...)`. Ground truth comes from an
//! explicit finite-difference solver of the reaction-diffusion equation
//! `u_t = D u_xx + K u^2`.
//!
//! Module map:
//!
//! - [`autodiff`]: batched forward-mode jets through an MLP and their reverse-mode adjoint
//! - [`network`]: MLP parameters, Glorot initialization, Adam
//! - [`oracle`]: input functions and the FTCS reaction-diffusion solver
//! - [`dataset`]: sensor vectors, Latin hypercube sampling, measurement sets, corpora
//! - [`model`]: scenario feature layout, residual and losses of the twin-network model
//! - [`trainer`]: the epoch/minibatch training loop, checkpoints and resume
//! - [`evaluation`]: relative L2 errors, error distributions, hidden-physics recovery, sweeps
//! - [`config`]: training configuration and bundled presets

pub mod autodiff;
pub mod config;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod model;
pub mod network;
pub mod oracle;
pub mod par;
mod scratch;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
