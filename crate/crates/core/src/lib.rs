//! Channel scheduling for IoT random access under spatially correlated activation.
//!
//! Devices that tend to wake up together should not share a channel. Given the
//! matrix of pairwise joint activation probabilities this crate evaluates the
//! collision model and its pairwise upper bound, rounds soft schedules to hard
//! ones, builds the equivalent pure integer linear program, solves the hard
//! assignment problem exactly by branch-and-bound, and provides K-Medoids
//! baselines plus a small experiment harness.

pub mod bench;
pub mod descent;
pub mod error;
pub mod heuristics;
pub mod io;
pub mod linearize;
pub mod model;
pub mod objective;
pub mod sim;
pub mod solver;

pub use error::{Error, Result, Violation};
pub use model::{
    assignment_to_schedule, schedule_to_assignment, validate_matrix, Assignment, CollisionReport,
    JointActivationMatrix, NetworkConfig, ScheduleMatrix,
};
