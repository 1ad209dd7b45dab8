//! Decentralized lane keeping and lane changing with control barrier
//! functions and coordination functions.

pub mod certificates;
pub mod controller;
pub mod coordination;
pub mod error;
pub mod gradcheck;
pub mod perception;
pub mod plot;
pub mod qp;
pub mod simulator;
pub mod vehicle;

pub use error::{Error, Result};
