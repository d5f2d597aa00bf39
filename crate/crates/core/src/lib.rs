//! Low-impact agency on tabular gridworlds.
//!
//! Baseline constructions, impact measures and a penalized planner over
//! exact MDP models, plus the environments that exhibit each failure mode.

pub mod baselines;
pub mod env;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod measures;
pub mod planner;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
