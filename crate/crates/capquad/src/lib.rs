//! Numerical laboratory for relative p-capacity on grid domains.
//!
//! The crate discretizes a Euclidean domain as a box lattice minus an exactly
//! described complement set, computes p-capacities of probe sets by convex
//! energy minimization, builds Whitney-type ball covers of the domain, and
//! measures the ratio constants (quasiadditivity, singular-integral bounds,
//! Hardy constants) whose boundedness under grid refinement is the object of
//! study. A scenario runner drives the whole pipeline and emits deterministic
//! CSV/JSON reports.

pub mod capacity;
pub mod error;
pub mod geometry;
pub mod quasiadd;
pub mod runner;
pub mod scenario;
pub mod space;
mod stats;
pub mod whitney;

pub use error::{CapquadError, Result};
