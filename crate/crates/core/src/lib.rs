//! Conditional survival probabilities for the barrier-crossing time of a
//! partially observed diffusion.
//!
//! The signal `X` is never observed directly. A correlated diffusion `Y` is
//! observed at regular times `t_0 < .. < t_m = s`, and the quantity of interest
//! is `P(tau_a > t | Y_{t_0}, .., Y_{t_m})` where `tau_a` is the first time
//! the signal falls to the barrier `a`.
//!
//! The estimator is assembled from:
//!
//! * [`bridge`]: closed-form Brownian-bridge crossing probabilities for the
//!   continuous Euler scheme,
//! * [`quantization`]: functional (Karhunen-Loeve product) quantization of the
//!   Brownian driver, pushed through the signal dynamics and cut into
//!   per-date marginal grids with cell transition probabilities,
//! * [`filter`]: the forward recursion over those grids producing normalized
//!   weights on the terminal grid,
//! * [`survival`]: the post-observation survival function (Monte Carlo or
//!   closed form) and the final curve assembly,
//! * [`oracle`]: an independent self-normalized particle estimator used for
//!   cross-validation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod error;
pub mod filter;
pub mod models;
pub mod normal;
pub mod oracle;
pub mod quantization;
pub mod rng;
pub mod survival;

pub use error::{Error, Result};
