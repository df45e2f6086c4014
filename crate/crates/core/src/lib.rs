//! Coupled mean-field simulation of a single excited impurity pinned in a
//! trapped one-dimensional Bose-Einstein condensate.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: uniform periodic grid, spectral transforms and field algebra.
//! - [`solver`]: Strang split-step propagator for the coupled condensate and
//!   impurity equations in real and imaginary time.
//! - [`stationary`]: imaginary-time relaxation of the coupled equilibrium and
//!   the excited-state durability experiment.
//! - [`observables`]: depleted density, effective mass, widths, frequencies,
//!   soliton tracking, fringe counting and the variational width model.
//! - [`analytics`]: dimensional parameters, mean-field validity estimates and
//!   depletion fractions.
//! - [`config`], [`io`], [`scenario`]: run configuration, on-disk formats and
//!   scenario orchestration used by the `becimp` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod observables;
pub mod scenario;
pub mod solver;
pub mod stationary;

pub use error::{Error, Result};
pub use grid::{ComplexField, Grid1D, RealField};
pub use solver::{CouplingConvention, ModelParams, Propagator, QuenchSchedule, Segment, SnapshotSeries, SystemState};
