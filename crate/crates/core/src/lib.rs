//! One-dimensional Néel walls: static profiles, spectra of the linearised
//! Landau–Lifshitz–Gilbert operator, and time-periodic wall motions under
//! periodic applied fields.
//!
//! The crate is organised bottom-up: [`grid`] and [`strayfield`] supply the
//! spectral toolbox, [`energy`] computes the static wall, [`linops`] builds
//! and analyses the linearised operators, [`dynamics`] integrates the full
//! equations and [`periodic`] shoots for periodic orbits.

pub mod cli;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod linops;
pub mod params;
pub mod periodic;
pub mod strayfield;
pub mod svg;

pub use error::{NeelError, Result};
pub use grid::{derivative, inner_product, second_derivative, Grid, GridSpec, RealField};
pub use params::{rescale, PhysicalParameters, RescaledParameters};
pub use strayfield::{rescaled_symbol, symbol, Parity, StrayFieldOperator};
