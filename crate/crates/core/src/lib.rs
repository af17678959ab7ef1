//! Behavior-tree driven multi-sensor localisation.
//!
//! A reconfigurable estimation pipeline (sources, models, EKF kernels,
//! sinks) is rewired at run time by a reactive behavior tree that picks
//! between lidar, GPS and dead reckoning, keeps a parallel GPS backup
//! filter, and consults a map of where each sensor has worked before.
//! A deterministic simulator supplies ground truth and sensor streams.

pub mod behaviors;
pub mod bt;
pub mod error;
pub mod estimation;
pub mod mapdb;
pub mod metrics;
pub mod pipeline;
pub mod runner;
pub mod simulator;
pub mod types;
