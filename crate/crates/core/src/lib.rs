//! Simulator and protocol library for infrastructure-free, frequency-agile,
//! multi-hop LoRa sensor networks.

pub mod channel;
pub mod energy;
pub mod freqsel;
pub mod harness;
pub mod mac;
pub mod mlmodel;
pub mod netstack;
pub mod phy;
pub mod rng;
pub mod time;
