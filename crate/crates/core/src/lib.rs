//! Two-scale simulation of an upscaled dispersion equation whose effective tensor comes
//! from drift-perturbed periodic cell problems.
//!
//! The pipeline is: mesh the perforated cell ([`mesh`]), solve a periodic Stokes problem
//! for the micro drift ([`stokes`]), tabulate the effective tensor against the drift
//! strength ([`cell`], [`dispersion`]), then run the fixed-point iteration between the
//! cell problems and the macroscopic parabolic equation ([`macroscale`], [`scheme`]).

pub mod cell;
pub mod dispersion;
pub mod error;
pub mod expr;
pub mod fem;
pub mod macroscale;
pub mod mesh;
pub mod pipeline;
pub mod scenario;
pub mod scheme;
pub mod stokes;
pub mod verify;

pub use error::{Error, Result};
