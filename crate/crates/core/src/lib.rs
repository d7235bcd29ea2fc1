//! Geometric impedance control on SE(3) with learned, left-invariant gain
//! scheduling, plus the simulation and training stack around it.

// `!(x < y)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod experiments;
pub mod liegroup;
pub mod policy;

pub use error::{Error, Result};
