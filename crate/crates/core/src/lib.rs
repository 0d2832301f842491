//! Numerical core for stochastic value functions on finite Dirichlet-form
//! spaces (weighted graphs): heat semigroups and kernels, the backward
//! Schrödinger equation with its Feynman-Kac sampling, the Hopf-Cole
//! transform to the viscous Hamilton-Jacobi equation, and weak Fokker-Planck
//! flows built from the dual semigroup, with the value-function identity
//! checked numerically.

pub mod error;
pub mod fokkerplanck;
pub mod heat;
pub mod hjb;
pub mod io;
pub mod montecarlo;
pub mod potential;
pub mod schroedinger;
pub mod space;
pub mod timefield;
pub mod transport;

pub use error::{CoreError, Result};
pub use space::{Field, Space, SpaceKind, SpaceSpec, ValidationReport};
pub use timefield::{TimeField, TimeGrid};
