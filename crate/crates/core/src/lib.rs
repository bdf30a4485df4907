//! Joint training of an energy-based model, a latent-variable generator and
//! an amortized inference network.
//!
//! The generator initializes short-run Langevin chains on the energy
//! ("ancestral Langevin sampling"); the revised samples train the energy by
//! maximum likelihood and, in turn, serve as training data for the
//! generator/encoder pair through a variational objective.
//!
//! Besides dense neural models, every component has a 1-D linear-Gaussian
//! counterpart whose densities, kernels and divergences are closed-form, so
//! fixed points and convergence can be checked exactly.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod models;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod selfcheck;
pub mod training;

pub use error::{Error, Result};
pub use nn::{ParamStore, Tensor};
