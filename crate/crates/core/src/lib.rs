//! Weighted inertia-dissipation-energy (WIDE) minimization for damped
//! nonlinear wave equations, with reference time steppers and a harness for
//! the causal, viscous and Γ-limits.

pub mod discretization;
pub mod error;
pub mod harness;
pub mod io;
pub mod minimizer;
pub mod potentials;
pub mod profiles;
pub mod reference;
pub mod selftest;
pub mod solver;
pub mod wide;

pub use discretization::{Field, Grid, NormKind, TimeAxis, TimeWeight, Trajectory};
pub use error::{Result, WideError};
pub use harness::{ConvergenceTable, ErrorNorm, SweepMode, SweepSpec};
pub use potentials::{PotentialKind, PotentialSpec};
pub use profiles::Profile;
pub use reference::ModalSpec;
pub use solver::NewtonOptions;
pub use wide::{ElResidual, RegLevels, WideParams, WideProblem};
