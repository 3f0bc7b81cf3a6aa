//! Simulator and controller toolkit for 3D NAND flash reliability.
//!
//! The crate is organized bottom-up:
//!
//! * [`voltage`]: MLC states, Gray coding, Gaussian state distributions and
//!   optimal read reference voltages.
//! * [`models`]: retention/wear, layer variation, interference, read disturb
//!   and read error models.
//! * [`sim`]: a multi-chip flash simulator with Monte Carlo and analytic modes.
//! * [`fit`]: least squares, Gaussian and gamma fitting, KL divergence and
//!   empirical optimal voltages.
//! * [`controller`]: read-voltage policies, LaVAR, ReMAR, ReNAC, refresh and
//!   ECC sizing.
//! * [`raid`]: conventional and layer-interleaved RAID layouts.
//! * [`harness`]: experiment configuration, sweeps, lifetime evaluation,
//!   plots and acceptance checks.

pub mod controller;
pub mod error;
pub mod harness;
pub mod fit;
pub mod models;
pub mod raid;
pub mod sim;
pub mod voltage;

pub use error::{Error, Result};
