//! Simulation library for streaming frequency and mean estimation under
//! local differential privacy, the fine-grained manipulation attacks that
//! target the adaptive budget/population allocation of such protocols, and a
//! sampling-based defense.
//!
//! The crate is organized around the pipeline of a single simulated run:
//! [`data_targets`] produce user streams and attack-target streams,
//! [`freq_oracle`] / [`mean_mech`] provide the local randomizers,
//! [`stream_protocols`] drive the w-event budgeted publication protocols,
//! [`attack_core`] solves the per-step fake-report allocation problems,
//! [`attack_orchestrators`] turn those solvers into full attack strategies,
//! [`defense`] filters suspicious publications, and [`harness`] wires it all
//! into reproducible experiment grids.

pub mod attack_core;
pub mod attack_orchestrators;
pub mod data_targets;
pub mod defense;
pub mod error;
pub mod freq_oracle;
pub mod harness;
pub mod mean_mech;
pub mod rng;
pub mod stream_protocols;
pub mod util;

pub use error::{Error, Result};
