//! Saturation throughput of an 802.11 WLAN that reuses the idle downlink
//! slots of a TDD OFDMA primary network.

pub mod config;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod mac;
pub mod markov;
pub mod phase;
pub mod primary_chain;
pub mod qn1;
pub mod simulator;
pub mod striping;
pub mod txtime;

pub use config::{Ratio, ScenarioConfig, Striping};
pub use error::{Error, Result};
