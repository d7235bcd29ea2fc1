//! Human-in-the-loop demonstration server.
//!
//! A control thread runs geometric admittance control on the simulated arm at
//! 1 kHz of simulated time, streams telemetry over a WebSocket at `/session`,
//! applies gain commands at the next control tick and records `(e_G, action)`
//! pairs as a behaviour-cloning dataset.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{Ack, Command, CommandFrame, ErrorFrame, Flags, ServerFrame, Telemetry};
pub use se3_gic::control::joint_velocity_pd;
pub use server::{serve, spawn, ServerConfig, ServerHandle, TeleopError};
pub use session::{Session, SessionConfig};
