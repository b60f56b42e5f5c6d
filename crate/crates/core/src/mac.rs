//! Receiver-centric duty-cycled MAC.
//!
//! Every receiver wakes once per frame for a short window whose slot is a
//! pseudo-random function of its advertised seed and the frame index. A sender
//! that knows a neighbor's seed computes the next window and transmits into
//! it on the neighbor's receive frequency. Neighbors are found through
//! periodic beacons on a fixed discovery frequency that never adapts.
//!
//! Slot hash: `H(seed, f) = splitmix64_mix(seed + (f + 1) * 0x9E3779B97F4A7C15)`
//! where `splitmix64_mix` is the SplitMix64 output finalizer
//! (`z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`).
//! The slot is `H(seed, f) mod slots_per_frame`, i.e. the `f`-th output of a
//! SplitMix64 stream seeded with `seed`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Channel;
use crate::phy::{ChannelPlan, RadioConfig};
use crate::rng::mix64;
use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("radio trace is empty")]
    EmptyTrace,
    #[error("observation horizon must be positive")]
    ZeroHorizon,
    #[error("neighbor {0} is unknown; discovery required")]
    UnknownNeighbor(u32),
    #[error("wake window {window_us} us must be positive and no longer than the frame {frame_us} us")]
    InvalidWindow { window_us: u64, frame_us: u64 },
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The slot hash `H(seed, frame)`.
pub fn wake_hash(seed: u64, frame_index: u64) -> u64 {
    mix64(seed.wrapping_add(frame_index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// MAC timing parameters shared by all nodes of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacParams {
    #[serde(default = "default_frame_ms")]
    pub frame_ms: u64,
    #[serde(default = "default_window_ms")]
    pub wake_window_ms: u64,
    #[serde(default = "default_beacon_s")]
    pub beacon_period_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Neighbors silent for longer than this are forgotten.
    #[serde(default = "default_silence")]
    pub neighbor_timeout_s: f64,
    /// Optional per-node clock skew bound for stress runs; 0 disables.
    #[serde(default)]
    pub clock_skew_ppm: f64,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
}

fn default_frame_ms() -> u64 {
    1000
}
fn default_window_ms() -> u64 {
    11
}
fn default_beacon_s() -> f64 {
    10.0
}
fn default_retries() -> u32 {
    3
}
fn default_silence() -> f64 {
    3600.0
}
fn default_queue() -> usize {
    32
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            frame_ms: default_frame_ms(),
            wake_window_ms: default_window_ms(),
            beacon_period_s: default_beacon_s(),
            max_retries: default_retries(),
            neighbor_timeout_s: default_silence(),
            clock_skew_ppm: 0.0,
            queue_capacity: default_queue(),
        }
    }
}

impl MacParams {
    pub fn nominal_duty_cycle(&self) -> f64 {
        self.wake_window_ms as f64 / self.frame_ms as f64
    }

    pub fn schedule(&self, seed: u64) -> Result<WakeupSchedule, MacError> {
        WakeupSchedule::new(seed, self.frame_ms * 1000, self.wake_window_ms * 1000)
    }
}

/// A receiver's pseudo-random wakeup schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WakeupSchedule {
    pub seed: u64,
    pub frame_us: u64,
    pub window_us: u64,
    /// Actual oscillator error of this node; senders plan with the nominal clock.
    pub skew_ppm: f64,
}

impl WakeupSchedule {
    pub fn new(seed: u64, frame_us: u64, window_us: u64) -> Result<Self, MacError> {
        if window_us == 0 || window_us > frame_us {
            return Err(MacError::InvalidWindow { window_us, frame_us });
        }
        Ok(Self { seed, frame_us, window_us, skew_ppm: 0.0 })
    }

    pub fn with_skew(mut self, ppm: f64) -> Self {
        self.skew_ppm = ppm;
        self
    }

    pub fn slots_per_frame(&self) -> u64 {
        self.frame_us / self.window_us
    }

    pub fn duty_cycle(&self) -> f64 {
        self.window_us as f64 / self.frame_us as f64
    }

    /// Slot the receiver wakes in during `frame_index`.
    pub fn wake_slot(&self, frame_index: u64) -> u64 {
        wake_hash(self.seed, frame_index) % self.slots_per_frame()
    }

    /// Nominal window `[start, end)` of a frame.
    pub fn window(&self, frame_index: u64) -> (SimTime, SimTime) {
        let start = frame_index * self.frame_us + self.wake_slot(frame_index) * self.window_us;
        (SimTime(start), SimTime(start + self.window_us))
    }

    /// Window as it really occurs with this node's clock skew applied.
    pub fn actual_window(&self, frame_index: u64) -> (SimTime, SimTime) {
        let (s, e) = self.window(frame_index);
        if self.skew_ppm == 0.0 {
            return (s, e);
        }
        let scale = 1.0 + self.skew_ppm * 1e-6;
        (SimTime((s.0 as f64 / scale).round() as u64), SimTime((e.0 as f64 / scale).round() as u64))
    }

    /// Earliest instant at or after `now` when the nominal window is open.
    pub fn next_window_open(&self, now: SimTime) -> SimTime {
        let frame = now.0 / self.frame_us;
        let (start, end) = self.window(frame);
        if now <= start {
            start
        } else if now < end {
            now
        } else {
            self.window(frame + 1).0
        }
    }

    /// Whether a frame whose preamble spans `[t, t + preamble)` is heard.
    pub fn hears(&self, t: SimTime, preamble: SimTime) -> bool {
        let end = t + preamble;
        let frame = t.0 / self.frame_us;
        let lo = frame.saturating_sub(1);
        (lo..=frame + 1).any(|f| {
            let (ws, we) = self.actual_window(f);
            ws < end && t < we
        })
    }

    /// All nominal windows overlapping `[from, to)`.
    pub fn windows_between(&self, from: SimTime, to: SimTime) -> impl Iterator<Item = (SimTime, SimTime)> + '_ {
        let first = from.0 / self.frame_us;
        let last = to.0.div_ceil(self.frame_us);
        (first..last)
            .map(move |f| self.actual_window(f))
            .filter(move |&(s, e)| e > from && s < to)
            .map(move |(s, e)| (s.max(from), e.min(to)))
    }
}

/// What a node knows about one neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub node_id: u32,
    pub seed: u64,
    pub rx_freq_hz: u64,
    pub last_heard: SimTime,
}

/// Earliest time at or after `now` at which `neighbor`'s wake window opens.
pub fn next_rendezvous(table: &NeighborTable, neighbor: u32, params: &MacParams, now: SimTime) -> Result<SimTime, MacError> {
    let n = table.get(neighbor).ok_or(MacError::UnknownNeighbor(neighbor))?;
    Ok(params.schedule(n.seed)?.next_window_open(now))
}

/// Neighbor table with silence-based expiry.
#[derive(Debug, Clone, Default)]
pub struct NeighborTable {
    entries: BTreeMap<u32, NeighborEntry>,
}

impl NeighborTable {
    pub fn upsert(&mut self, entry: NeighborEntry) -> bool {
        let changed = self
            .entries
            .get(&entry.node_id)
            .is_none_or(|old| old.seed != entry.seed || old.rx_freq_hz != entry.rx_freq_hz);
        self.entries.insert(entry.node_id, entry);
        changed
    }

    pub fn get(&self, id: u32) -> Option<&NeighborEntry> {
        self.entries.get(&id)
    }

    pub fn get_mut(&mut self, id: u32) -> Option<&mut NeighborEntry> {
        self.entries.get_mut(&id)
    }

    /// Drops entries not heard since `now - horizon`; returns the removed ids.
    pub fn expire(&mut self, now: SimTime, horizon: SimTime) -> Vec<u32> {
        let cutoff = now - horizon;
        let stale: Vec<u32> = self.entries.values().filter(|e| e.last_heard < cutoff).map(|e| e.node_id).collect();
        for id in &stale {
            self.entries.remove(id);
        }
        stale
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.entries.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NeighborEntry> {
        self.entries.values_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// A discoverable node for the standalone [`discover`] run.
#[derive(Debug, Clone, Copy)]
pub struct DiscoveryNode {
    pub id: u32,
    pub seed: u64,
    pub rx_freq_hz: u64,
    /// Offset of the first beacon inside the beacon period.
    pub beacon_phase_s: f64,
}

/// Runs beaconing on the plan's discovery frequency for `duration_s` and
/// returns what `node` learned. With `lossless` every in-range beacon lands.
pub fn discover(
    node: u32,
    nodes: &[DiscoveryNode],
    plan: &ChannelPlan,
    channel: &Channel,
    cfg: &RadioConfig,
    beacon_period_s: f64,
    duration_s: f64,
    lossless: bool,
) -> BTreeSet<NeighborEntryKey> {
    let mut found = BTreeSet::new();
    let mut draw = 0u64;
    for other in nodes.iter().filter(|n| n.id != node) {
        let mut t = other.beacon_phase_s;
        while t < duration_s {
            draw += 1;
            if let Some(sample) = channel.sample_link(other.id, node, plan.discovery_freq_hz, t, cfg) {
                if lossless || channel.receive(&sample, cfg, node, draw) {
                    found.insert(NeighborEntryKey { node_id: other.id, seed: other.seed, rx_freq_hz: other.rx_freq_hz });
                    break;
                }
            }
            t += beacon_period_s;
        }
    }
    found
}

/// Beacon content learned during discovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NeighborEntryKey {
    pub node_id: u32,
    pub seed: u64,
    pub rx_freq_hz: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadioMode {
    Listen,
    Rx,
    Tx,
}

impl RadioMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RadioMode::Listen => "listen",
            RadioMode::Rx => "rx",
            RadioMode::Tx => "tx",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "listen" => Some(RadioMode::Listen),
            "rx" => Some(RadioMode::Rx),
            "tx" => Some(RadioMode::Tx),
            _ => None,
        }
    }
}

/// One radio-on interval of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioInterval {
    pub node_id: u32,
    pub t_on: SimTime,
    pub t_off: SimTime,
    pub freq_hz: u64,
    pub mode: RadioMode,
}

/// Length of the union of `[on, off)` intervals.
pub fn union_length(mut spans: Vec<(SimTime, SimTime)>) -> u64 {
    spans.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(SimTime, SimTime)> = None;
    for (s, e) in spans {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += (ce - cs).0;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += (ce - cs).0;
    }
    total
}

/// Per-node radio-on fraction over `horizon`.
pub fn duty_cycle_by_node(trace: &[RadioInterval], horizon: SimTime) -> Result<BTreeMap<u32, f64>, MacError> {
    if trace.is_empty() {
        return Err(MacError::EmptyTrace);
    }
    if horizon.0 == 0 {
        return Err(MacError::ZeroHorizon);
    }
    let mut spans: BTreeMap<u32, Vec<(SimTime, SimTime)>> = BTreeMap::new();
    for iv in trace {
        spans.entry(iv.node_id).or_default().push((iv.t_on, iv.t_off.min(horizon)));
    }
    Ok(spans
        .into_iter()
        .map(|(id, s)| (id, union_length(s) as f64 / horizon.0 as f64))
        .collect())
}

/// Radio-on time over total time, averaged over the nodes present in the trace.
pub fn measured_duty_cycle(trace: &[RadioInterval], horizon: SimTime) -> Result<f64, MacError> {
    let per_node = duty_cycle_by_node(trace, horizon)?;
    Ok(per_node.values().sum::<f64>() / per_node.len() as f64)
}
