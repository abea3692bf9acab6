//! Simulation and estimation of quantum Fisher information lower bounds from
//! noisy randomized measurements.
//!
//! The crate is organised bottom-up: [`qmath`] supplies dense linear algebra,
//! [`states`] and [`metrology`] provide target states and exact oracles,
//! [`noise`] and [`sampling`] generate synthetic measurement records,
//! [`calibration`] and [`shadows`] turn records into estimates, and
//! [`harness`] wires everything into reproducible experiments.

pub mod calibration;
pub mod error;
pub mod harness;
pub mod metrology;
pub mod noise;
pub mod qmath;
pub mod sampling;
pub mod seeds;
pub mod shadows;
pub mod states;

pub use error::{Error, Result};
