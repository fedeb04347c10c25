//! Mass-constrained Schrödinger–Poisson ground states on bounded, expanding,
//! annular and truncated whole-space domains, with audits of the associated
//! Green's-function, barycenter and scaling identities.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod appendix;
pub mod cli;
pub mod domain;
pub mod elliptic;
pub mod energy;
pub mod error;
pub mod greens;
pub mod grid;
pub mod io;
pub mod minimize;
pub mod report;
pub mod scalar;
pub mod scalings;
pub mod sweeps;
pub mod topology;
pub mod verify;

pub use error::{Error, Result};

pub type Grid64 = grid::Grid<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type Field64 = grid::ScalarField<f64>;
pub type Field32 = grid::ScalarField<f32>;
pub type Domain64 = domain::DomainSpec<f64>;
pub type Domain32 = domain::DomainSpec<f32>;
pub type SolveResult64 = minimize::SolveResult<f64>;
pub type SolveResult32 = minimize::SolveResult<f32>;
pub type Energy64 = energy::EnergyBreakdown<f64>;
pub type Energy32 = energy::EnergyBreakdown<f32>;
