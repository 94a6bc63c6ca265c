//! Simulation and statistical verification of stochastic mean curvature flow
//! of graphs over the flat torus `𝕋ⁿ = [0,1)ⁿ`:
//!
//! ```text
//! du = [εΔu + Q div(∇u/Q)] dt + Q ∘ dW,    Q = √(1 + |∇u|²)
//! ```
//!
//! driven by a single scalar Wiener process.

pub mod checks;
pub mod cli;
pub mod config;
pub mod energies;
pub mod ensemble;
pub mod error;
pub mod galerkin;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod noise;
mod spectral;
pub mod stepper;
pub mod trace;

pub use config::{parse_config, SimConfig};
pub use energies::EnergyFunctional;
pub use error::{Error, Result};
pub use grid::{GridSpec, NormKind, ScalarField, TensorField, VectorField};
pub use stepper::{PathResult, PathState, SchemeKind};
pub use trace::EnergyTrace;
