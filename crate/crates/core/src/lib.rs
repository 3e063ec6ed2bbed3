//! Pseudo-spectral Monte Carlo simulation of the stochastic complex
//! Ginzburg-Landau equation
//!
//! ```text
//! du - nu * Lap(u) dt + (i + a) g_r(|u|^2) u dt = dzeta,   zeta = sum_s b_s beta_s(t) phi_s(x)
//! ```
//!
//! on the cube `[0, pi]^n` with Dirichlet boundary conditions, together with
//! the ensemble statistics used to check energy balance, moment bounds, tail
//! statistics, hitting times, Foias-Prodi squeezing and mixing.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: sine basis, grid synthesis/analysis, norms, projections.
//! * [`noise`]: the Wiener forcing and counter-based random streams.
//! * [`dynamics`]: exponential-Euler integration of the equation and its variants.
//! * [`estimators`]: ensemble reports (energy, moments, tails, hitting, drift).
//! * [`ergodicity`]: stationary averages, coupling, dual-Lipschitz distances, mixing.
//! * [`experiment`]: config-driven runner and the self-validation suite.

pub mod dynamics;
pub mod ergodicity;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod lattice;
pub mod noise;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{GridField, ModeLattice, SineTransform, SpectralField};
pub use noise::{NoiseConstants, NoiseKind, NoiseSpec, RngStream};

/// Complex scalar used for all field values.
pub type C64 = num_complex::Complex64;
