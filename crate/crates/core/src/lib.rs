//! Core of a simulated teleoperated UVC disinfection robot.
//!
//! Everything here is deterministic and free of IO: the occupancy-grid
//! world, the simulated drive/LIDAR/battery, the adaptable-autonomy
//! navigation stack, dose physics with pose planning, the connection
//! watchdog and the fixed-step simulator that ties them together. File
//! formats, networking and the CLI live in the `uvbot` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod disinfection;
pub mod fixtures;
pub mod geom;
pub mod mission;
pub mod navigation;
pub mod robot;
pub mod session;
pub mod sim;
pub mod world;

pub use geom::{normalize_angle, Point2, Pose2D};
pub use navigation::AutonomyLevel;
pub use robot::{Footprint, LaserScan, Twist};
pub use sim::{Command, SimConfig, Simulator};
pub use world::{Cell, CellIndex, OccupancyGrid};
