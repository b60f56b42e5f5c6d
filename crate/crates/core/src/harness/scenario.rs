//! Scenario files (TOML) and their validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::channel::ChannelParams;
use crate::energy::{HarvesterSpec, PowerProfile, RadioPower, DEFAULT_CAPACITY_WH};
use crate::freqsel::{LinkWeighting, NoiseTerm};
use crate::mac::MacParams;
use crate::netstack::{ConfigKey, ConfigValue, FloodMode, NodeId};
use crate::phy::{self, ChannelPlan, RadioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Edge,
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub position_m: [f64; 2],
    #[serde(default = "edge")]
    pub role: Role,
}

fn edge() -> Role {
    Role::Edge
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingParams {
    /// Smallest and largest beacon interval of the adaptive beacon timer.
    pub beacon_min_s: f64,
    pub beacon_max_s: f64,
    pub etx_window: usize,
    pub etx_cap: f64,
    /// Unicast outcomes needed before the data-path estimate replaces the
    /// beacon-derived one.
    pub etx_min_samples: usize,
    /// Path cost change that counts as a route change.
    pub path_change_threshold: f64,
    pub beacon_payload_bytes: usize,
}

impl Default for RoutingParams {
    fn default() -> Self {
        Self {
            beacon_min_s: 10.0,
            beacon_max_s: 600.0,
            etx_window: crate::netstack::etx::DEFAULT_WINDOW,
            etx_cap: crate::netstack::etx::DEFAULT_ETX_CAP,
            etx_min_samples: 4,
            path_change_threshold: 1.0,
            beacon_payload_bytes: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    pub enabled: bool,
    /// First report no earlier than this.
    pub start_s: f64,
    /// Zero disables a report kind.
    pub decision_period_s: f64,
    pub decision_payload_bytes: usize,
    pub spl_period_s: f64,
    pub spl_payload_bytes: usize,
    pub status_period_s: f64,
    pub status_payload_bytes: usize,
    /// Base-station readings are delivered locally.
    pub base_reports: bool,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            enabled: true,
            start_s: 120.0,
            decision_period_s: 60.0,
            decision_payload_bytes: 16,
            spl_period_s: 60.0,
            spl_payload_bytes: 8,
            status_period_s: 3600.0,
            status_payload_bytes: 24,
            base_reports: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    None,
    Offline,
    Online,
    Lowpower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptScope {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreqselParams {
    pub method: Method,
    pub scope: AdaptScope,
    /// When the base announces the first campaign.
    pub start_s: f64,
    /// Repeat period; absent means a single round.
    pub period_s: Option<f64>,
    /// 10 s intervals measured per frequency.
    pub n_intervals: u32,
    pub probes_per_interval: u32,
    pub probe_payload_bytes: usize,
    /// Passive scan time per frequency in low-power mode.
    pub scan_slot_s: f64,
    pub k: usize,
    /// Defaults to every plan frequency except the discovery frequency.
    pub candidates_hz: Option<Vec<u64>>,
    pub noise_term: NoiseTerm,
    pub link_weighting: LinkWeighting,
    /// Gap between announcing a plan and its start or activation.
    pub flood_margin_s: f64,
    /// Time the base waits for metric reports after a campaign.
    pub report_wait_s: f64,
    pub records_per_report: usize,
}

impl Default for FreqselParams {
    fn default() -> Self {
        Self {
            method: Method::None,
            scope: AdaptScope::Global,
            start_s: 300.0,
            period_s: None,
            n_intervals: 3,
            probes_per_interval: 3,
            probe_payload_bytes: 8,
            scan_slot_s: 10.0,
            k: 5,
            candidates_hz: None,
            noise_term: NoiseTerm::Inverted,
            link_weighting: LinkWeighting::PerLink,
            flood_margin_s: 120.0,
            report_wait_s: 300.0,
            records_per_report: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub profile: PowerProfile,
    pub harvester: HarvesterSpec,
    pub radio: RadioPower,
    pub capacity_wh: f64,
    pub initial_soc: f64,
    pub load_efficiency: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            profile: PowerProfile::default(),
            harvester: HarvesterSpec::default(),
            radio: RadioPower::default(),
            capacity_wh: DEFAULT_CAPACITY_WH,
            initial_soc: 1.0,
            load_efficiency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    /// The link between `a` and `b` disappears.
    LinkDown { at_s: f64, a: NodeId, b: NodeId },
    /// The node loses all state; it is silent for `down_s`.
    NodeReboot {
        at_s: f64,
        node: NodeId,
        #[serde(default)]
        down_s: f64,
    },
    /// The node starts a distributed reset.
    Reset { at_s: f64, node: NodeId },
}

impl FaultSpec {
    pub fn at_s(&self) -> f64 {
        match self {
            Self::LinkDown { at_s, .. } | Self::NodeReboot { at_s, .. } | Self::Reset { at_s, .. } => *at_s,
        }
    }
}

/// A configuration flood issued by the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    pub at_s: f64,
    pub mode: FloodMode,
    #[serde(default)]
    pub targets: Vec<NodeId>,
    pub params: BTreeMap<ConfigKey, ConfigValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    /// Must fit in 63 bits so the echoed file stays valid TOML.
    pub seed: u64,
    pub duration_s: f64,
    pub nodes: Vec<NodeSpec>,
    #[serde(default = "RadioConfig::deployed")]
    pub radio: RadioConfig,
    #[serde(default)]
    pub plan: ChannelPlan,
    /// Data frequency every node starts on; defaults to the first plan
    /// frequency that is not the discovery frequency.
    #[serde(default)]
    pub initial_rx_freq_hz: Option<u64>,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub mac: MacParams,
    #[serde(default)]
    pub routing: RoutingParams,
    #[serde(default)]
    pub traffic: TrafficParams,
    #[serde(default)]
    pub freqsel: FreqselParams,
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub commands: Vec<CommandSpec>,
    /// Export every listen window in the radio trace.
    #[serde(default = "yes")]
    pub trace_listen: bool,
}

fn yes() -> bool {
    true
}

impl ScenarioSpec {
    /// A scenario with every section at its default.
    pub fn new(seed: u64, duration_s: f64, nodes: Vec<NodeSpec>) -> Self {
        Self {
            name: String::new(),
            seed,
            duration_s,
            nodes,
            radio: RadioConfig::deployed(),
            plan: ChannelPlan::default(),
            initial_rx_freq_hz: None,
            channel: ChannelParams::default(),
            mac: MacParams::default(),
            routing: RoutingParams::default(),
            traffic: TrafficParams::default(),
            freqsel: FreqselParams::default(),
            energy: EnergyParams::default(),
            faults: Vec::new(),
            commands: Vec::new(),
            trace_listen: true,
        }
    }

    /// Straight line of `hops + 1` nodes, base at the origin, ids 1..=hops+1.
    pub fn line(seed: u64, duration_s: f64, hops: u32, spacing_m: f64) -> Self {
        let nodes = (0..=hops)
            .map(|i| NodeSpec {
                id: i + 1,
                position_m: [f64::from(i) * spacing_m, 0.0],
                role: if i == 0 { Role::Base } else { Role::Edge },
            })
            .collect();
        Self::new(seed, duration_s, nodes)
    }

    pub fn base_id(&self) -> NodeId {
        self.nodes.iter().find(|n| n.role == Role::Base).map_or(0, |n| n.id)
    }

    pub fn initial_rx_freq(&self) -> u64 {
        self.initial_rx_freq_hz.unwrap_or_else(|| {
            self.plan
                .frequencies_hz
                .iter()
                .copied()
                .find(|&f| f != self.plan.discovery_freq_hz)
                .unwrap_or(self.plan.discovery_freq_hz)
        })
    }

    pub fn candidates(&self) -> Vec<u64> {
        self.freqsel.candidates_hz.clone().unwrap_or_else(|| {
            self.plan.frequencies_hz.iter().copied().filter(|&f| f != self.plan.discovery_freq_hz).collect()
        })
    }

    /// Every problem found, one message per issue.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errs = Vec::new();
        if self.seed > i64::MAX as u64 {
            errs.push(format!("seed {} must be below 2^63", self.seed));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            errs.push(format!("duration_s {} must be a non-negative number", self.duration_s));
        }
        if self.nodes.is_empty() {
            errs.push("nodes: at least one node is required".into());
        }
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                errs.push(format!("nodes: duplicate node id {}", n.id));
            }
        }
        let bases = self.nodes.iter().filter(|n| n.role == Role::Base).count();
        if bases != 1 {
            errs.push(format!("nodes: exactly one base required, found {bases}"));
        }
        if let Err(e) = self.plan.validate() {
            errs.push(format!("plan: {e}"));
        }
        let in_band = |f: u64| (phy::BAND_LOW_HZ..=phy::BAND_HIGH_HZ).contains(&(f as f64));
        let in_plan = |f: u64| self.plan.contains(f);
        let f0 = self.initial_rx_freq();
        if !in_band(f0) || !in_plan(f0) {
            errs.push(format!("initial_rx_freq_hz: {f0} Hz is not a plan frequency inside 902-928 MHz"));
        }
        for f in self.candidates() {
            if !in_band(f) || !in_plan(f) {
                errs.push(format!("freqsel.candidates_hz: {f} Hz is not a plan frequency inside 902-928 MHz"));
            }
            if f == self.plan.discovery_freq_hz {
                errs.push(format!("freqsel.candidates_hz: {f} Hz is the discovery frequency"));
            }
        }
        if self.freqsel.method != Method::None && self.candidates().is_empty() {
            errs.push("freqsel: no candidate frequencies".into());
        }
        let t = &self.traffic;
        for (name, period) in [
            ("traffic.decision_period_s", t.decision_period_s),
            ("traffic.spl_period_s", t.spl_period_s),
            ("traffic.status_period_s", t.status_period_s),
        ] {
            if !(period >= 0.0 && period.is_finite()) {
                errs.push(format!("{name}: {period} must be a non-negative number (0 disables)"));
            }
        }
        if self.freqsel.period_s.is_some_and(|p| p.is_nan() || p <= 0.0) {
            errs.push("freqsel.period_s must be positive when set".into());
        }
        if self.freqsel.k == 0 {
            errs.push("freqsel.k must be at least 1".into());
        }
        if self.freqsel.n_intervals == 0 {
            errs.push("freqsel.n_intervals must be at least 1".into());
        }
        if self.freqsel.records_per_report == 0 {
            errs.push("freqsel.records_per_report must be at least 1".into());
        }
        if let Err(e) = self.channel.validate() {
            errs.push(format!("channel: {e}"));
        }
        if let Err(e) = self.mac.schedule(0) {
            errs.push(format!("mac: {e}"));
        }
        let r = &self.routing;
        if !(r.beacon_min_s > 0.0 && r.beacon_max_s >= r.beacon_min_s) {
            errs.push("routing: need 0 < beacon_min_s <= beacon_max_s".into());
        }
        if r.etx_window == 0 || r.etx_cap < 1.0 {
            errs.push("routing: etx_window must be positive and etx_cap at least 1".into());
        }
        for (name, bytes) in [
            ("routing.beacon_payload_bytes", r.beacon_payload_bytes),
            ("traffic.decision_payload_bytes", self.traffic.decision_payload_bytes),
            ("traffic.spl_payload_bytes", self.traffic.spl_payload_bytes),
            ("traffic.status_payload_bytes", self.traffic.status_payload_bytes),
            ("freqsel.probe_payload_bytes", self.freqsel.probe_payload_bytes),
        ] {
            if bytes > phy::MAX_PAYLOAD_BYTES {
                errs.push(format!("{name}: {bytes} exceeds {}", phy::MAX_PAYLOAD_BYTES));
            }
        }
        if let Err(e) = self.energy.profile.validate() {
            errs.push(format!("energy.profile: {e}"));
        }
        if let Err(e) = self.energy.harvester.validate() {
            errs.push(format!("energy.harvester: {e}"));
        }
        if self.energy.capacity_wh <= 0.0 || !(0.0..=1.0).contains(&self.energy.initial_soc) {
            errs.push("energy: capacity_wh must be positive and initial_soc in [0, 1]".into());
        }
        if !(self.energy.load_efficiency > 0.0 && self.energy.load_efficiency <= 1.0) {
            errs.push("energy.load_efficiency must be in (0, 1]".into());
        }
        let ids: BTreeSet<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        for f in &self.faults {
            let nodes: Vec<NodeId> = match f {
                FaultSpec::LinkDown { a, b, .. } => vec![*a, *b],
                FaultSpec::NodeReboot { node, .. } | FaultSpec::Reset { node, .. } => vec![*node],
            };
            for n in nodes.into_iter().filter(|n| !ids.contains(n)) {
                errs.push(format!("faults: unknown node id {n}"));
            }
        }
        for c in &self.commands {
            if c.mode == FloodMode::Multicast && c.targets.is_empty() {
                errs.push("commands: multicast needs targets".into());
            }
            if c.params.is_empty() {
                errs.push("commands: no parameters".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Invalid(errs))
        }
    }

    /// The fully defaulted scenario as TOML.
    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Serialize(e.to_string()))
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, HarnessError> {
    let spec: ScenarioSpec = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
duration_s = 60

[[nodes]]
id = 1
position_m = [0, 0]
role = "base"

[[nodes]]
id = 2
position_m = [100, 0]
"#;

    #[test]
    fn minimal_gets_defaults_and_echoes() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.mac, MacParams::default());
        assert_eq!(s.traffic.decision_period_s, 60.0);
        assert_eq!(s.traffic.status_period_s, 3600.0);
        assert_eq!(s.plan, ChannelPlan::default());
        let echoed = s.to_toml().unwrap();
        assert!(echoed.contains("decision_period_s = 60.0"), "{echoed}");
        assert_eq!(parse_scenario(&echoed).unwrap(), s);
    }

    #[test]
    fn duplicate_id_named() {
        let text = MINIMAL.replace("id = 2", "id = 1");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("duplicate node id 1"), "{err}");
    }

    #[test]
    fn out_of_band_frequency_rejected() {
        let text = format!("initial_rx_freq_hz = 868000000\n{MINIMAL}");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("868000000"), "{err}");
    }

    #[test]
    fn unknown_field_has_context() {
        let text = format!("{MINIMAL}\n[traffic]\ndecision_perod_s = 5\n");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("decision_perod_s"), "{err}");
    }
}
