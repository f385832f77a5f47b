//! Simulation and regimen optimization for a four-population model of multiple myeloma
//! and the immune system under pomalidomide, dexamethasone and elotuzumab.
//!
//! The crate is organized bottom-up:
//!
//! - [`dynamics`]: state and parameter types, drug effects, right-hand sides and their
//!   Jacobians.
//! - [`integrator`]: adaptive Dormand-Prince integration over a regimen, with the
//!   objective's quadratures carried in the state.
//! - [`objective`]: weight construction and evaluation of the treatment objective.
//! - [`regimens`]: regimen representations, dose grids and the averaging/rounding
//!   approximation.
//! - [`optimizers`]: constant and piecewise enumeration, adjoint-gradient optimal
//!   control, and its piecewise approximation.
//! - [`io`]: scenario configuration, file formats and batch execution.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod io;
pub mod objective;
pub mod optimizers;
pub mod regimens;

pub use dynamics::{
    emax, rate_jacobian, rhs_controlled, rhs_uncontrolled, DoseVector, ModelParameters,
    PatientState, PharmacodynamicsParameters, RateJacobian, Rates,
};
pub use error::{Error, Result};
pub use integrator::{simulate, steady_state_check, IntegratorSettings, Trajectory};
pub use objective::{build_weights, evaluate, ObjectiveValue, ObjectiveWeights};
pub use optimizers::{
    adjoint_gradient, approximate_result, optimize_approximation, optimize_constant,
    optimize_control, optimize_piecewise, optimize_piecewise_batch, Diagnostics, Method,
    OptimizationResult, Scenario, SolverSettings,
};
pub use regimens::{enumerate_grid, pc_approximate, DoseGrid, Interpolation, Regimen};
