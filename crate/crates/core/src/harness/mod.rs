//! Scenario files, the discrete-event engine and result export.

pub mod engine;
pub mod queue;
pub mod report;
pub mod scenario;

use thiserror::Error;

pub use engine::{run, run_with, Engine};
pub use queue::EventQueue;
pub use report::{export, MetricsReport, NodeSummary, Outcome, PacketRecord, SelectionEvent};
pub use scenario::{
    load_scenario, parse_scenario, AdaptScope, EnergyParams, FaultSpec, FreqselParams, Method, NodeSpec, Role,
    RoutingParams, ScenarioSpec, TrafficParams,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("channel: {0}")]
    Channel(#[from] crate::channel::ChannelError),
    #[error("mac: {0}")]
    Mac(#[from] crate::mac::MacError),
    #[error("phy: {0}")]
    Phy(#[from] crate::phy::PhyError),
    #[error("energy: {0}")]
    Energy(#[from] crate::energy::EnergyError),
    #[error("freqsel: {0}")]
    Freqsel(#[from] crate::freqsel::FreqselError),
    #[error("gateway: {0}")]
    Gateway(#[from] crate::netstack::gateway::GatewayError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
