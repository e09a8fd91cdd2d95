//! Coupled PIN/IAA transport dynamics on a row of cells: time integration,
//! steady-state solving, linear stability, numerical continuation with
//! bifurcation detection, and two-parameter stability atlases.

pub mod atlas;
pub mod config;
pub mod continuation;
pub mod error;
pub mod integrate;
pub mod io;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use model::{CellRow, DynamicState, ParamId, ParameterSet, SteadyVector};
pub use numerics::NumericsConfig;
