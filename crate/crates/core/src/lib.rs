//! Passivity analysis for evolutionary game dynamics.
//!
//! The crate certifies passivity of LTI systems through frequency-domain
//! tests, constructs passive feedback systems that destabilize any stable
//! non-passive plant, and simulates the nonlinear closed loops formed by
//! evolutionary dynamics (replicator, logit) and higher-order games.

pub mod destabilizer;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod lti;
pub mod population;
pub mod serde_ext;
pub mod sim;

pub use error::{Error, Result};
