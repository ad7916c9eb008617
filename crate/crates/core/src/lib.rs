//! Policy synthesis, exact evaluation and simulation of transmission policies
//! that minimize the long-run Age of Incorrect Information (AoII) of a
//! discrete-time Markov source monitored over a HARQ channel under a
//! transmission-rate budget.

pub mod curve;
pub mod error;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod renewal;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
