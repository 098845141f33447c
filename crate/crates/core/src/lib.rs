//! System identification and model-predictive control for a tendon-driven
//! snake robot reduced to two joint angles.
//!
//! Pipeline: [`plantsim`] generates force/angle records, [`dataset`] loads,
//! filters and splits them, [`n4sid`], [`arx`] and [`sindyc`] identify
//! models sharing the [`model`] abstraction, [`kinematics`] reconstructs the
//! full chain, and [`mpc`] closes the loop on the synthetic plant.

pub mod arx;
pub mod config;
pub mod dataset;
pub mod error;
pub mod kinematics;
pub mod linalg;
pub mod model;
pub mod mpc;
pub mod n4sid;
pub mod pipeline;
pub mod plantsim;
pub mod sindyc;

pub use error::{Error, Result};
