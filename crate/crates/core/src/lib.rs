//! Classical simulation of quantum analog encodings of stochastic processes.
//!
//! Modules, bottom-up:
//! - [`statevector`]: dense and sparse statevector simulation.
//! - [`circuits`]: QFT, sine/cosine transforms, unary data loaders and the
//!   unary-to-binary converter, each checked against a direct matrix.
//! - [`randgauss`]: gamma/beta/angle samplers and statistical tests.
//! - [`spectral_bm`]: spectral (fractional) Brownian bridges, the circuit
//!   pipeline that encodes them, and the coherent encoding.
//! - [`levy`]: Levy noise, Toeplitz/circulant integrals and the spectral
//!   quantum integral.
//! - [`qmc`]: amplitude estimation and Monte Carlo estimators.
//! - [`apps`]: variance swaps and anomalous-diffusion tests.
//! - [`cli`]: command implementations behind the `qstoch` binary.

// `!(x > 0.0)` style guards deliberately reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod rng;
pub mod circuits;
pub mod cli;
pub mod apps;
pub mod levy;
pub mod qmc;
pub mod randgauss;
pub mod spectral_bm;
pub mod statevector;
pub mod stats;

pub use error::{Error, Result};
