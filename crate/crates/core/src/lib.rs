//! Quantum filtering for a finite-dimensional system probed by a bosonic
//! field: quantum Itô calculus, the Lindblad master equation, homodyne and
//! photon-counting filters, and trajectory simulation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod config;
pub mod error;
pub mod filter;
pub mod io;
pub mod ito;
pub mod master;
pub mod operator;
pub mod simulate;
pub mod svg;

pub use error::{Error, Result};
pub use filter::{FilterKind, FilterTrajectory, ObservationRecord};
pub use ito::{ItoExpression, ItoIncrement, ItoTable};
pub use master::{Method, StateTrajectory, TimeGrid};
pub use operator::{DensityMatrix, Detection, Operator, SystemModel};
pub use simulate::{EnsembleResult, SimulationSpec};
