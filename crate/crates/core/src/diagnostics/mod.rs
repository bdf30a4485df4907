//! Measurements of a model state: grid-quadrature normalization and KL
//! estimates in one or two dimensions, closed-form testbed divergences,
//! equilibrium residuals, mode coverage, latent interpolation and the energy
//! gap between initial and revised samples.

mod divergence;
mod grid;
mod probes;
pub mod stats;

pub use divergence::{
    gaussian_kl, grid_divergences, nash_residuals, testbed_divergences, DivergenceEntry,
    DivergenceTrace, EvalMode, NashResiduals,
};
pub use grid::{
    density_masses, discrete_kl, grid_energies, grid_kl, grid_log_partition, grid_masses,
    histogram, GridSpec, KlSource,
};
pub use probes::{energy_gap, latent_interpolate, mode_coverage};
