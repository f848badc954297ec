//! Trajectory optimization toolkit for 6-DoF aircraft approach and landing.
//!
//! The crate generates dynamically feasible landing trajectories by solving a
//! free-final-time optimal control problem through sequential convex
//! programming: the flight dynamics are discretized with multiple shooting
//! and first-order-hold inputs, all nonconvex constraints are linearized
//! around a reference trajectory, and the resulting convex quadratic
//! subproblems are solved repeatedly — with an extrapolated reference update
//! — until the virtual-control and trust-region penalties vanish.

pub mod constraints;
pub mod dual;
pub mod model;
pub mod qp;
pub mod scenario;
pub mod subproblem;
pub mod transcription;
pub mod xptr;
