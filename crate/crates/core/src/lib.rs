//! Energy-efficient resource allocation for aggregated RF/VLC heterogeneous
//! networks.
//!
//! The pipeline is: [`scenario`] draws a topology, [`channel`] computes gains,
//! [`matching`] assigns users to APs, [`subchannel`] grants subchannels,
//! [`power_alloc`] optimizes transmit powers and [`orchestrator`] ties the
//! stages into complete schemes. [`rate_energy`] evaluates and validates any
//! allocation.

pub mod channel;
pub mod error;
pub mod matching;
pub mod orchestrator;
pub mod power_alloc;
pub mod rate_energy;
pub mod scenario;
pub mod subchannel;

pub use error::{Error, Result};
