//! IO side of the uvbot simulator: map and scenario files, run artifacts,
//! the teleoperation wire protocol with its relay server, and the pieces the
//! `uvbot` binary is built from.

pub mod cli;
pub mod endpoint;
pub mod export;
pub mod mapio;
pub mod protocol;
pub mod registry;
pub mod robot_client;
pub mod run;
pub mod scenario;
pub mod server;
