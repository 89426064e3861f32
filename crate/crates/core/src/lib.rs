//! 2D lidar graph-SLAM.
//!
//! The crate is organised along the dataflow of a mapping session:
//!
//! - [`sim`] produces lidar scans, landmark observations, wheel odometry and
//!   ground truth from a deterministic 2D world.
//! - [`registration`] filters scans, estimates normals and runs ICP.
//! - [`odometry`] turns consecutive scans (and optionally an external pose
//!   stream) into an odometry pose with covariance.
//! - [`memory`], [`recognition`], [`optimizer`] and [`grid`] form the map
//!   update: node creation and weighting, working/long-term memory transfer,
//!   loop closure and proximity detection, pose-graph optimization and
//!   occupancy grid assembly.
//! - [`pipeline`] wires everything together and records a [`pipeline::RunTrace`]
//!   which [`eval`] turns into trajectory error and timing reports.

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod io;
pub mod memory;
pub mod odometry;
pub mod optimizer;
pub mod pipeline;
pub mod recognition;
pub mod registration;
pub mod sim;

pub use config::Config;
pub use error::{Error, Result};
pub use geometry::{Covariance3, Point2, Transform2};

pub use graph::{Link, LinkKind, MapGraph, MapNode, MemoryLocation, NodeId};
pub use registration::Scan;
