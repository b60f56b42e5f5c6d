//! Downstream configuration flood with duplicate suppression.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::routing::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum FloodError {
    #[error("multicast config needs at least one target node")]
    EmptyMulticast,
    #[error("config message carries no parameters")]
    NoParameters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloodMode {
    /// Applied only by the origin.
    Local,
    Broadcast,
    Multicast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigKey {
    MlOpTime,
    StatusPeriod,
    SplThresh,
    CalibConfig,
    FreqPlan,
    AggregationPeriod,
}

/// Frequency plan commands carried inside a `freq_plan` parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum FreqPlanValue {
    /// Switch the receive frequency at an absolute time.
    Assign { freq_hz: u64, activate_at_ms: u64 },
    /// Run a probing campaign over the listed frequencies.
    Campaign { freqs_hz: Vec<u64>, start_ms: u64, slot_ms: u64, probes: u32 },
    /// Passive noise scan over the listed frequencies.
    Scan { freqs_hz: Vec<u64>, start_ms: u64, slot_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Number(f64),
    Text(String),
    Plan(FreqPlanValue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMessage {
    pub origin: NodeId,
    pub mode: FloodMode,
    #[serde(default)]
    pub target_nodes: Vec<NodeId>,
    pub params: BTreeMap<ConfigKey, ConfigValue>,
    pub version: u64,
    /// Routing epoch the message is gated on, if any.
    #[serde(default)]
    pub epoch: Option<u64>,
}

impl ConfigMessage {
    pub fn new(
        origin: NodeId,
        mode: FloodMode,
        target_nodes: Vec<NodeId>,
        params: BTreeMap<ConfigKey, ConfigValue>,
        version: u64,
    ) -> Result<Self, FloodError> {
        let msg = Self { origin, mode, target_nodes, params, version, epoch: None };
        msg.validate()?;
        Ok(msg)
    }

    pub fn validate(&self) -> Result<(), FloodError> {
        if self.params.is_empty() {
            return Err(FloodError::NoParameters);
        }
        if self.mode == FloodMode::Multicast && self.target_nodes.is_empty() {
            return Err(FloodError::EmptyMulticast);
        }
        Ok(())
    }

    pub fn applies_to(&self, node: NodeId) -> bool {
        match self.mode {
            FloodMode::Local => node == self.origin,
            FloodMode::Broadcast => true,
            FloodMode::Multicast => self.target_nodes.contains(&node),
        }
    }

    /// Whether receivers should pass the message on.
    pub fn forwards(&self) -> bool {
        self.mode != FloodMode::Local
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloodVerdict {
    /// First copy; apply if targeted and forward.
    Fresh,
    /// Already seen this or a newer version from the origin.
    Duplicate,
}

/// Per-node record of the newest version seen from each origin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FloodState {
    pub last_seen: BTreeMap<NodeId, u64>,
    pub applied: BTreeMap<ConfigKey, ConfigValue>,
}

impl FloodState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accept(&mut self, msg: &ConfigMessage) -> FloodVerdict {
        match self.last_seen.get(&msg.origin) {
            Some(&v) if v >= msg.version => FloodVerdict::Duplicate,
            _ => {
                self.last_seen.insert(msg.origin, msg.version);
                FloodVerdict::Fresh
            }
        }
    }

    /// Handles a received copy: returns (apply here, forward on).
    pub fn receive(&mut self, me: NodeId, msg: &ConfigMessage) -> (bool, bool) {
        match self.accept(msg) {
            FloodVerdict::Duplicate => (false, false),
            FloodVerdict::Fresh => {
                let apply = msg.applies_to(me);
                if apply {
                    for (k, v) in &msg.params {
                        self.applied.insert(*k, v.clone());
                    }
                }
                (apply, msg.forwards())
            }
        }
    }
}

/// Result of a flood over a known topology.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FloodOutcome {
    pub applied: BTreeSet<NodeId>,
    pub received: BTreeSet<NodeId>,
    /// Number of forwarding rounds until the flood died out.
    pub rounds: usize,
    pub transmissions: usize,
}

/// Loss-free synchronous flood: each round every node that got the message
/// in the previous round rebroadcasts it once.
pub fn flood<F>(
    states: &mut BTreeMap<NodeId, FloodState>,
    neighbors: F,
    msg: &ConfigMessage,
) -> FloodOutcome
where
    F: Fn(NodeId) -> Vec<NodeId>,
{
    let mut out = FloodOutcome::default();
    let Some(origin) = states.get_mut(&msg.origin) else {
        return out;
    };
    let (apply, forward) = origin.receive(msg.origin, msg);
    if apply {
        out.applied.insert(msg.origin);
    }
    if !forward && !apply {
        return out;
    }
    out.received.insert(msg.origin);
    let mut frontier = if forward { vec![msg.origin] } else { Vec::new() };
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for n in frontier {
            out.transmissions += 1;
            for nb in neighbors(n) {
                let Some(s) = states.get_mut(&nb) else { continue };
                let (apply, forward) = s.receive(nb, msg);
                if apply {
                    out.applied.insert(nb);
                }
                if forward {
                    out.received.insert(nb);
                    next.push(nb);
                }
            }
        }
        if !next.is_empty() {
            out.rounds += 1;
        }
        frontier = next;
    }
    out
}
