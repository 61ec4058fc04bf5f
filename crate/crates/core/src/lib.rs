//! Controllability, steering and minimum-energy extremals for generalized
//! nonholonomic integrators.
//!
//! The crate is organised bottom-up:
//!
//! * [`expr`] and [`field`]: parsed scalar expressions and vector fields with
//!   symbolic curl, divergence and Cauchy-Riemann residuals.
//! * [`system`]: the integrator family (`x3' = f . u` and its relatives),
//!   fixed-step RK4 simulation and quadrature of fiber increments.
//! * [`controllability`]: curl scans, loop and contour integrals, Stokes
//!   checks and the combined verdict.
//! * [`steering`]: sinusoid, loop-scaling, two-phase and residue-chain plans,
//!   each verified by simulation.
//! * [`optimal`]: Euler-Lagrange extremals (a charged particle in the field
//!   `B = curl f`), shooting, and the two-oscillator elliptic reduction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllability;
pub mod error;
pub mod expr;
pub mod field;
pub mod input;
pub mod json;
pub mod optimal;
mod poly;
pub mod quadrature;
pub mod steering;
pub mod system;

pub use controllability::{classify, ControllabilityReport, Loop, ProbeBudget, Verdict};
pub use error::{Error, Result};
pub use expr::{parse_expr, Expr};
pub use field::{
    cauchy_riemann_residual, gradient_field, signed_flip, Curl, ExcludedSet, Point, VectorField, GUARD_RADIUS,
};
pub use input::{Channel, InputSignal, Segment, Shape};
pub use optimal::{CostKind, ExtremalProblem, OptimalSolution};
pub use poly::certify_zero;
pub use steering::{Method, SteeringPlan};
pub use system::{fiber_displacement, simulate, SystemModel, Trajectory};
