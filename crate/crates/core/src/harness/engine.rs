//! Discrete-event simulation of a whole network.
//!
//! Nodes beacon on the discovery frequency with an adaptive (doubling)
//! interval, build a collection tree from the beacons, and forward reports
//! hop by hop into the receiver's wake window on the receiver's data
//! frequency. Configuration floods ride on beacons. Frequency-selection
//! rounds are driven by the base: it floods a measurement plan, nodes probe
//! and sample noise during the plan's slots, and either report the metrics
//! to the base (global scope) or pick their own receive frequency (local
//! scope).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::json;

use super::queue::EventQueue;
use super::report::{MetricsReport, NodeSummary, Outcome, OutageRow, PacketRecord, SelectionEvent};
use super::scenario::{AdaptScope, FaultSpec, Method, Role, ScenarioSpec};
use super::HarnessError;
use crate::channel::{reception_probability, Channel, LinkSample};
use crate::energy::{self, EnergyState, HarvestTrace, SocParams};
use crate::freqsel::{
    self, aggregate_interval, percentile, FloodContext, IntervalSamples, LinkId, LinkIntervalMetrics, ReconfigAction,
    ScoreOptions, Scope,
};
use crate::mac::{self, NeighborEntry, NeighborTable, RadioInterval, RadioMode, WakeupSchedule};
use crate::netstack::{
    ConfigKey, ConfigMessage, ConfigValue, FloodMode, FloodState, FreqPlanValue, GatewayRecord, LinkEstimator, NodeId,
    RouteAdvert, RoutingState,
};
use crate::phy;
use crate::rng::{self, stream};
use crate::time::SimTime;

const INTERVAL_US: u64 = 10_000_000;
const NO_ROUTE_GIVEUP: SimTime = SimTime(120_000_000);
const NO_ROUTE_RETRY: SimTime = SimTime(10_000_000);
const GUARD: SimTime = SimTime(1_000);
const CONFIGS_PER_ORIGIN: usize = 2;
const CONFIG_BYTES: usize = 12;
/// Transmissions older than this are no longer needed for overlap checks.
const AIR_MEMORY: SimTime = SimTime(5_000_000);

const KINDS: [&str; 3] = ["decision", "spl", "status"];
const CLASSES: [&str; 4] = ["dog_bark", "engine_idling", "jackhammer", "siren"];

#[derive(Debug, Clone)]
struct Packet {
    id: u64,
    origin: NodeId,
    kind: &'static str,
    payloads: Vec<serde_json::Value>,
    records: Vec<LinkIntervalMetrics>,
    bytes: usize,
    hops: u32,
    attempts: u32,
    no_route_since: Option<SimTime>,
}

#[derive(Debug, Clone)]
struct BeaconFrame {
    seed: u64,
    rx_freq_hz: u64,
    advert: RouteAdvert,
    configs: Vec<ConfigMessage>,
}

#[derive(Debug, Clone)]
enum TxKind {
    Beacon(Box<BeaconFrame>),
    Data { dest: NodeId, control: bool },
    Probe { dest: NodeId },
}

#[derive(Debug, Clone)]
struct Transmission {
    sender: NodeId,
    inc: u64,
    start: SimTime,
    end: SimTime,
    freq_hz: u64,
    kind: TxKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlanKind {
    Scan,
    Campaign,
}

#[derive(Debug, Clone)]
struct NodePlan {
    kind: PlanKind,
    freqs: Vec<u64>,
    start: SimTime,
    slot: SimTime,
    probes: u32,
    applied_at: SimTime,
    cancelled_at: Option<SimTime>,
    base_interval: u32,
    tally: BTreeMap<(NodeId, u64, u32), IntervalSamples>,
}

impl NodePlan {
    fn end(&self) -> SimTime {
        SimTime(self.start.0 + self.slot.0 * self.freqs.len() as u64)
    }

    fn slot_at(&self, t: SimTime) -> Option<usize> {
        if t < self.start || t >= self.end() || self.cancelled_at.is_some_and(|c| t >= c) {
            return None;
        }
        Some(((t.0 - self.start.0) / self.slot.0) as usize)
    }

    fn slot_span(&self, k: usize) -> (SimTime, SimTime) {
        let s = self.start.0 + self.slot.0 * k as u64;
        (SimTime(s), SimTime(s + self.slot.0))
    }

    fn interval_of(&self, t: SimTime, n_intervals: u32) -> u32 {
        let k = self.slot_at(t).unwrap_or(0);
        let j = ((t.0 - self.slot_span(k).0 .0) / INTERVAL_US) as u32;
        self.base_interval + j.min(n_intervals.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
struct Node {
    id: NodeId,
    is_base: bool,
    pos: [f64; 2],
    sched: WakeupSchedule,
    up: bool,
    inc: u64,
    down_spans: Vec<(SimTime, SimTime)>,
    rx_freq: u64,
    rx_history: Vec<(SimTime, u64)>,
    plans: Vec<NodePlan>,
    round_base: Option<u32>,
    neighbors: NeighborTable,
    routing: RoutingState,
    estimators: BTreeMap<NodeId, LinkEstimator>,
    beacon_etx: BTreeMap<NodeId, f64>,
    flood: FloodState,
    carried: BTreeMap<(NodeId, u64), ConfigMessage>,
    trickle_us: u64,
    trickle_gen: u64,
    control: VecDeque<Packet>,
    data: VecDeque<Packet>,
    sending: bool,
    reservations: Vec<(SimTime, SimTime)>,
    radio: Vec<RadioInterval>,
    draws: u64,
    periods_s: [f64; 3],
    records: Vec<LinkIntervalMetrics>,
    unreported: Vec<LinkIntervalMetrics>,
    tx_airtime_s: f64,
    rx_airtime_s: f64,
}

impl Node {
    fn freq_at(&self, t: SimTime) -> u64 {
        if let Some(f) = self.plan_freq_at(t) {
            return f;
        }
        let i = self.rx_history.partition_point(|&(s, _)| s <= t);
        if i == 0 {
            self.rx_history.first().map_or(self.rx_freq, |h| h.1)
        } else {
            self.rx_history[i - 1].1
        }
    }

    fn plan_freq_at(&self, t: SimTime) -> Option<u64> {
        self.plans.iter().rev().find_map(|p| p.slot_at(t).map(|k| p.freqs[k]))
    }

    fn queued(&self) -> usize {
        self.control.len() + self.data.len()
    }

    fn conflict_end(&self, s: SimTime, e: SimTime) -> Option<SimTime> {
        self.reservations.iter().filter(|&&(rs, re)| rs < e + GUARD && s < re + GUARD).map(|&(_, re)| re).max()
    }

    fn next_draw(&mut self) -> u64 {
        self.draws += 1;
        self.draws
    }
}

#[derive(Debug, Clone)]
enum Event {
    Traffic { node: NodeId, inc: u64, kind: usize },
    TrickleFire { node: NodeId, inc: u64, gen: u64 },
    TrickleEnd { node: NodeId, inc: u64, gen: u64 },
    TxEnd { tx: u64 },
    TrySend { node: NodeId, inc: u64 },
    SlotStart { node: NodeId, inc: u64, plan: usize, slot: usize },
    SlotEnd { node: NodeId, inc: u64, plan: usize, slot: usize },
    PlanEnd { node: NodeId, inc: u64, plan: usize },
    Activate { node: NodeId, inc: u64, freq: u64 },
    Fault(usize),
    NodeUp { node: NodeId },
    BaseRound { round: u32 },
    BaseDecide { stage: u8 },
    Command(usize),
}

pub struct Engine<'a> {
    spec: ScenarioSpec,
    seed: u64,
    horizon: SimTime,
    channel: Channel,
    nodes: BTreeMap<NodeId, Node>,
    base: NodeId,
    queue: EventQueue<Event>,
    air: BTreeMap<u64, Transmission>,
    next_tx: u64,
    blocked: BTreeSet<(NodeId, NodeId)>,
    packets: Vec<PacketRecord>,
    gateway: Vec<GatewayRecord>,
    gateway_seq: BTreeMap<NodeId, u64>,
    collected: Vec<LinkIntervalMetrics>,
    selections: Vec<SelectionEvent>,
    config_version: u64,
    round_base: u32,
    preamble: SimTime,
    hook: Option<&'a mut dyn FnMut(&GatewayRecord)>,
}

/// Runs a scenario to completion.
pub fn run(spec: &ScenarioSpec) -> Result<MetricsReport, HarnessError> {
    Engine::new(spec)?.run()
}

/// Runs a scenario, handing each gateway record to `hook` as it is produced.
pub fn run_with(spec: &ScenarioSpec, hook: &mut dyn FnMut(&GatewayRecord)) -> Result<MetricsReport, HarnessError> {
    let mut e = Engine::new(spec)?;
    e.hook = Some(hook);
    e.run()
}

fn pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl<'a> Engine<'a> {
    pub fn new(spec: &ScenarioSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        let seed = spec.seed;
        let positions: Vec<(u32, f64, f64)> = spec.nodes.iter().map(|n| (n.id, n.position_m[0], n.position_m[1])).collect();
        let channel = Channel::new(spec.channel.clone(), &positions, seed, spec.duration_s)?;
        let f0 = spec.initial_rx_freq();
        let mut nodes = BTreeMap::new();
        for n in &spec.nodes {
            let id = u64::from(n.id);
            let skew = spec.mac.clock_skew_ppm * (2.0 * rng::uniform(seed, &[stream::MAC_SEED, id, 1]) - 1.0);
            let sched = spec.mac.schedule(rng::hash_keys(seed, &[stream::MAC_SEED, id]))?.with_skew(skew);
            let is_base = n.role == Role::Base;
            let mut routing = RoutingState::new(n.id, is_base);
            routing.max_path_etx = crate::netstack::routing::DEFAULT_MAX_PATH_ETX;
            nodes.insert(
                n.id,
                Node {
                    id: n.id,
                    is_base,
                    pos: n.position_m,
                    sched,
                    up: true,
                    inc: 0,
                    down_spans: Vec::new(),
                    rx_freq: f0,
                    rx_history: vec![(SimTime::ZERO, f0)],
                    plans: Vec::new(),
                    round_base: None,
                    neighbors: NeighborTable::default(),
                    routing,
                    estimators: BTreeMap::new(),
                    beacon_etx: BTreeMap::new(),
                    flood: FloodState::new(),
                    carried: BTreeMap::new(),
                    trickle_us: 0,
                    trickle_gen: 0,
                    control: VecDeque::new(),
                    data: VecDeque::new(),
                    sending: false,
                    reservations: Vec::new(),
                    radio: Vec::new(),
                    draws: 0,
                    periods_s: [spec.traffic.decision_period_s, spec.traffic.spl_period_s, spec.traffic.status_period_s],
                    records: Vec::new(),
                    unreported: Vec::new(),
                    tx_airtime_s: 0.0,
                    rx_airtime_s: 0.0,
                },
            );
        }
        let preamble = SimTime::from_secs_f64(spec.radio.preamble_time_s());
        Ok(Self {
            base: spec.base_id(),
            spec: spec.clone(),
            seed,
            horizon: SimTime::from_secs_f64(spec.duration_s),
            channel,
            nodes,
            queue: EventQueue::new(),
            air: BTreeMap::new(),
            next_tx: 0,
            blocked: BTreeSet::new(),
            packets: Vec::new(),
            gateway: Vec::new(),
            gateway_seq: BTreeMap::new(),
            collected: Vec::new(),
            selections: Vec::new(),
            config_version: 0,
            round_base: 0,
            preamble,
            hook: None,
        })
    }

    fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[&id]
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes.get_mut(&id).expect("known node")
    }

    fn uniform(&self, keys: &[u64]) -> f64 {
        rng::uniform(self.seed, keys)
    }

    fn airtime(&self, bytes: usize) -> SimTime {
        let s = phy::airtime(&self.spec.radio, bytes.min(phy::MAX_PAYLOAD_BYTES)).unwrap_or(0.0);
        SimTime::from_secs_f64(s)
    }

    fn link_ok(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.channel.link_loss_db(a, b).is_some() && !self.blocked.contains(&pair(a, b))
    }

    pub fn run(mut self) -> Result<MetricsReport, HarnessError> {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for &id in &ids {
            self.boot(id);
        }
        for (i, f) in self.spec.faults.iter().enumerate() {
            self.queue.push(SimTime::from_secs_f64(f.at_s()), Event::Fault(i));
        }
        for (i, c) in self.spec.commands.iter().enumerate() {
            self.queue.push(SimTime::from_secs_f64(c.at_s), Event::Command(i));
        }
        if self.spec.freqsel.method != Method::None {
            self.queue.push(SimTime::from_secs_f64(self.spec.freqsel.start_s), Event::BaseRound { round: 0 });
        }
        while let Some((_, ev)) = self.queue.pop_before(self.horizon) {
            self.handle(ev)?;
        }
        self.finish()
    }

    /// Starts beaconing and traffic for a node that just came up.
    fn boot(&mut self, id: NodeId) {
        let now = self.now();
        self.trickle_reset(id, true);
        let t = &self.spec.traffic;
        let node = self.node(id);
        if !t.enabled || (node.is_base && !t.base_reports) {
            return;
        }
        let start = SimTime::from_secs_f64(t.start_s).max(now);
        let inc = node.inc;
        let periods = node.periods_s;
        for kind in 0..KINDS.len() {
            let period = periods[kind];
            if period <= 0.0 {
                continue;
            }
            let u = self.uniform(&[stream::TRAFFIC, u64::from(id), kind as u64, inc]);
            self.queue.push(start + SimTime::from_secs_f64(u * period), Event::Traffic { node: id, inc, kind });
        }
    }

    fn alive(&self, id: NodeId, inc: u64) -> bool {
        let n = self.node(id);
        n.up && n.inc == inc
    }

    fn handle(&mut self, ev: Event) -> Result<(), HarnessError> {
        match ev {
            Event::Traffic { node, inc, kind } if self.alive(node, inc) => self.on_traffic(node, kind),
            Event::TrickleFire { node, inc, gen } if self.alive(node, inc) && self.node(node).trickle_gen == gen => {
                self.on_beacon_timer(node)
            }
            Event::TrickleEnd { node, inc, gen } if self.alive(node, inc) && self.node(node).trickle_gen == gen => {
                self.on_trickle_end(node)
            }
            Event::TxEnd { tx } => self.on_tx_end(tx)?,
            Event::TrySend { node, inc } if self.alive(node, inc) => self.try_send(node),
            Event::SlotStart { node, inc, plan, slot } if self.alive(node, inc) => self.on_slot_start(node, plan, slot),
            Event::SlotEnd { node, inc, plan, slot } if self.alive(node, inc) => self.on_slot_end(node, plan, slot),
            Event::PlanEnd { node, inc, plan } if self.alive(node, inc) => self.on_plan_end(node, plan),
            Event::Activate { node, inc, freq } if self.alive(node, inc) => self.set_rx_freq(node, freq, true),
            Event::Fault(i) => self.on_fault(i),
            Event::NodeUp { node } => self.on_node_up(node),
            Event::BaseRound { round } => self.on_base_round(round)?,
            Event::BaseDecide { stage } => self.on_base_decide(stage)?,
            Event::Command(i) => self.on_command(i)?,
            _ => {}
        }
        Ok(())
    }

    // ---- beaconing -------------------------------------------------------

    fn trickle_reset(&mut self, id: NodeId, force: bool) {
        let imin = SimTime::from_secs_f64(self.spec.routing.beacon_min_s).0;
        let node = self.node(id);
        if !force && node.trickle_us == imin {
            return;
        }
        let node = self.node_mut(id);
        node.trickle_us = imin;
        node.trickle_gen += 1;
        self.schedule_trickle_interval(id);
    }

    fn schedule_trickle_interval(&mut self, id: NodeId) {
        let now = self.now();
        let node = self.node_mut(id);
        let draw = node.next_draw();
        let (i, gen, inc) = (node.trickle_us, node.trickle_gen, node.inc);
        let u = self.uniform(&[stream::BEACON_TIMER, u64::from(id), draw]);
        let fire = SimTime(i / 2 + (u * (i / 2) as f64) as u64);
        self.queue.push(now + fire, Event::TrickleFire { node: id, inc, gen });
        self.queue.push(now + SimTime(i), Event::TrickleEnd { node: id, inc, gen });
    }

    fn on_trickle_end(&mut self, id: NodeId) {
        let imax = SimTime::from_secs_f64(self.spec.routing.beacon_max_s).0;
        let node = self.node_mut(id);
        node.trickle_us = (node.trickle_us * 2).min(imax);
        self.schedule_trickle_interval(id);
    }

    fn on_beacon_timer(&mut self, id: NodeId) {
        let now = self.now();
        let timeout = SimTime::from_secs_f64(self.spec.mac.neighbor_timeout_s);
        let node = self.node_mut(id);
        for gone in node.neighbors.expire(now, timeout) {
            node.routing.forget(gone);
            node.estimators.remove(&gone);
            node.beacon_etx.remove(&gone);
        }
        let frame = BeaconFrame {
            seed: node.sched.seed,
            rx_freq_hz: node.rx_freq,
            advert: node.routing.advert(),
            configs: node.carried.values().cloned().collect(),
        };
        let bytes = self.spec.routing.beacon_payload_bytes + CONFIG_BYTES * frame.configs.len();
        let dur = self.airtime(bytes);
        let mut start = now;
        while let Some(e) = self.node(id).conflict_end(start, start + dur) {
            start = e + GUARD;
        }
        let freq = self.spec.plan.discovery_freq_hz;
        self.register_tx(id, start, dur, freq, TxKind::Beacon(Box::new(frame)));
        self.refresh_routing(id);
    }

    fn register_tx(&mut self, id: NodeId, start: SimTime, dur: SimTime, freq_hz: u64, kind: TxKind) -> u64 {
        let end = start + dur;
        let node = self.node_mut(id);
        node.reservations.push((start, end));
        let inc = node.inc;
        let tx = self.next_tx;
        self.next_tx += 1;
        self.air.insert(tx, Transmission { sender: id, inc, start, end, freq_hz, kind });
        self.queue.push(end, Event::TxEnd { tx });
        tx
    }

    fn beacon_link_etx(&self, sample: &LinkSample) -> f64 {
        let p = reception_probability(sample.snr_db, &self.spec.radio, self.spec.channel.reception_width_db);
        (1.0 / p.max(1e-12)).min(self.spec.routing.etx_cap)
    }

    fn link_etx(&self, id: NodeId, nb: NodeId) -> f64 {
        let node = self.node(id);
        match node.estimators.get(&nb) {
            Some(est) if est.attempts() as usize >= self.spec.routing.etx_min_samples => {
                est.etx().unwrap_or(self.spec.routing.etx_cap)
            }
            _ => node.beacon_etx.get(&nb).copied().unwrap_or(self.spec.routing.etx_cap),
        }
    }

    fn on_beacon(&mut self, id: NodeId, from: NodeId, frame: &BeaconFrame, sample: &LinkSample) -> Result<(), HarnessError> {
        let now = self.now();
        let betx = self.beacon_link_etx(sample);
        let mut reset = false;
        {
            let node = self.node_mut(id);
            node.beacon_etx.insert(from, betx);
            reset |= node.neighbors.upsert(NeighborEntry {
                node_id: from,
                seed: frame.seed,
                rx_freq_hz: frame.rx_freq_hz,
                last_heard: now,
            });
        }
        let etx = self.link_etx(id, from);
        let node = self.node_mut(id);
        reset |= node.routing.hear(from, frame.advert, etx, now);
        if !frame.advert.path_etx.is_finite() && node.routing.path_etx.is_finite() && !node.is_base {
            reset |= node.routing.parent != Some(from);
        }
        if !frame.advert.path_etx.is_finite() && node.is_base {
            reset = true;
        }
        if reset {
            self.trickle_reset(id, false);
        }
        self.refresh_routing(id);
        self.absorb_configs(id, &frame.configs)?;
        Ok(())
    }

    fn absorb_configs(&mut self, id: NodeId, configs: &[ConfigMessage]) -> Result<(), HarnessError> {
        let mut reset = false;
        let mut theirs: BTreeMap<NodeId, u64> = BTreeMap::new();
        for msg in configs {
            let v = theirs.entry(msg.origin).or_default();
            *v = (*v).max(msg.version);
        }
        let mut sorted: Vec<&ConfigMessage> = configs.iter().collect();
        sorted.sort_by_key(|m| (m.origin, m.version));
        for msg in sorted {
            let (apply, forward) = self.node_mut(id).flood.receive(id, msg);
            if forward {
                self.carry(id, msg.clone());
                reset = true;
            }
            if apply {
                self.apply_config(id, msg)?;
            }
        }
        let node = self.node(id);
        let stale = node.carried.keys().any(|&(origin, v)| theirs.get(&origin).is_none_or(|&t| t < v));
        if reset || stale {
            self.trickle_reset(id, false);
        }
        Ok(())
    }

    fn carry(&mut self, id: NodeId, msg: ConfigMessage) {
        let node = self.node_mut(id);
        let origin = msg.origin;
        node.carried.insert((origin, msg.version), msg);
        let mine: Vec<(NodeId, u64)> = node.carried.keys().filter(|k| k.0 == origin).copied().collect();
        for k in mine.iter().take(mine.len().saturating_sub(CONFIGS_PER_ORIGIN)) {
            node.carried.remove(k);
        }
    }

    /// Re-evaluates the parent and resets the beacon timer on route changes.
    fn refresh_routing(&mut self, id: NodeId) {
        let threshold = self.spec.routing.path_change_threshold;
        let node = self.node_mut(id);
        let before = (node.routing.parent, node.routing.path_etx, node.routing.epoch);
        node.routing.refresh_children();
        node.routing.update_parent();
        node.routing.update_wave();
        let r = &node.routing;
        let gained_or_lost = before.1.is_finite() != r.path_etx.is_finite();
        let moved = before.1.is_finite() && r.path_etx.is_finite() && (before.1 - r.path_etx).abs() > threshold;
        if before.0 != r.parent || before.2 != r.epoch || gained_or_lost || moved {
            self.trickle_reset(id, false);
        }
    }

    // ---- configuration ---------------------------------------------------

    /// Issues a flood from the base; the base applies it immediately.
    fn issue(&mut self, mode: FloodMode, targets: Vec<NodeId>, params: BTreeMap<ConfigKey, ConfigValue>) -> Result<(), HarnessError> {
        self.config_version += 1;
        let msg = ConfigMessage { origin: self.base, mode, target_nodes: targets, params, version: self.config_version, epoch: None };
        if msg.validate().is_err() {
            return Err(HarnessError::Invalid(vec![format!("config flood {:?} is malformed", msg.params.keys())]));
        }
        self.dispatch(msg)
    }

    fn dispatch(&mut self, msg: ConfigMessage) -> Result<(), HarnessError> {
        let base = self.base;
        if !self.node(base).up {
            tracing::warn!("base is down; configuration flood lost");
            return Ok(());
        }
        let (apply, forward) = self.node_mut(base).flood.receive(base, &msg);
        if forward {
            self.carry(base, msg.clone());
            self.trickle_reset(base, false);
        }
        if apply {
            self.apply_config(base, &msg)?;
        }
        Ok(())
    }

    fn apply_config(&mut self, id: NodeId, msg: &ConfigMessage) -> Result<(), HarnessError> {
        let now = self.now();
        for (key, value) in &msg.params {
            match (key, value) {
                (ConfigKey::FreqPlan, ConfigValue::Plan(plan)) => match plan {
                    FreqPlanValue::Assign { freq_hz, activate_at_ms } => {
                        let inc = self.node(id).inc;
                        let at = SimTime::from_millis(*activate_at_ms).max(now);
                        self.queue.push(at, Event::Activate { node: id, inc, freq: *freq_hz });
                    }
                    FreqPlanValue::Campaign { freqs_hz, start_ms, slot_ms, probes } => {
                        self.add_plan(id, PlanKind::Campaign, freqs_hz, *start_ms, *slot_ms, *probes)
                    }
                    FreqPlanValue::Scan { freqs_hz, start_ms, slot_ms } => {
                        self.add_plan(id, PlanKind::Scan, freqs_hz, *start_ms, *slot_ms, 0)
                    }
                },
                (ConfigKey::StatusPeriod, ConfigValue::Number(s)) => self.node_mut(id).periods_s[2] = *s,
                (ConfigKey::AggregationPeriod, ConfigValue::Number(s)) => self.node_mut(id).periods_s[0] = *s,
                _ => tracing::debug!(node = id, ?key, "configuration stored"),
            }
        }
        Ok(())
    }

    fn add_plan(&mut self, id: NodeId, kind: PlanKind, freqs: &[u64], start_ms: u64, slot_ms: u64, probes: u32) {
        let now = self.now();
        let plan = NodePlan {
            kind,
            freqs: freqs.to_vec(),
            start: SimTime::from_millis(start_ms),
            slot: SimTime::from_millis(slot_ms.max(1)),
            probes,
            applied_at: now,
            cancelled_at: None,
            base_interval: (SimTime::from_millis(start_ms).0 / INTERVAL_US) as u32,
            tally: BTreeMap::new(),
        };
        if plan.end() <= now || freqs.is_empty() {
            return;
        }
        let lowpower = self.spec.freqsel.method == Method::Lowpower;
        let node = self.node_mut(id);
        if kind == PlanKind::Scan || !lowpower {
            node.round_base = Some(plan.base_interval);
        }
        let inc = node.inc;
        let idx = node.plans.len();
        let spans: Vec<(SimTime, SimTime)> = (0..plan.freqs.len()).map(|k| plan.slot_span(k)).collect();
        let end = plan.end();
        node.plans.push(plan);
        for (k, (s, e)) in spans.into_iter().enumerate() {
            if e <= now {
                continue;
            }
            self.queue.push(s.max(now), Event::SlotStart { node: id, inc, plan: idx, slot: k });
            self.queue.push(e, Event::SlotEnd { node: id, inc, plan: idx, slot: k });
        }
        self.queue.push(end, Event::PlanEnd { node: id, inc, plan: idx });
    }

    fn set_rx_freq(&mut self, id: NodeId, freq: u64, global: bool) {
        let now = self.now();
        let (window, cap) = (self.spec.routing.etx_window, self.spec.routing.etx_cap);
        let node = self.node_mut(id);
        if node.rx_freq == freq {
            return;
        }
        node.rx_freq = freq;
        node.rx_history.push((now, freq));
        // link quality on the old frequency says little about the new one
        for est in node.estimators.values_mut() {
            *est = LinkEstimator::new(window, cap);
        }
        if global {
            for e in node.neighbors.iter_mut() {
                e.rx_freq_hz = freq;
            }
        }
        self.trickle_reset(id, false);
    }

    fn on_command(&mut self, i: usize) -> Result<(), HarnessError> {
        let c = self.spec.commands[i].clone();
        self.issue(c.mode, c.targets, c.params)
    }

    // ---- frequency selection rounds --------------------------------------

    fn align_start(&self) -> u64 {
        let t = self.now() + SimTime::from_secs_f64(self.spec.freqsel.flood_margin_s);
        t.0.div_ceil(INTERVAL_US) * INTERVAL_US / 1000
    }

    fn flood_plan(&mut self, value: FreqPlanValue) -> Result<SimTime, HarnessError> {
        let end = match &value {
            FreqPlanValue::Campaign { freqs_hz, start_ms, slot_ms, .. } | FreqPlanValue::Scan { freqs_hz, start_ms, slot_ms } => {
                SimTime::from_millis(start_ms + slot_ms * freqs_hz.len() as u64)
            }
            FreqPlanValue::Assign { activate_at_ms, .. } => SimTime::from_millis(*activate_at_ms),
        };
        self.issue(FloodMode::Broadcast, vec![], BTreeMap::from([(ConfigKey::FreqPlan, ConfigValue::Plan(value))]))?;
        Ok(end)
    }

    fn campaign(&self, freqs: Vec<u64>) -> FreqPlanValue {
        let fs = &self.spec.freqsel;
        FreqPlanValue::Campaign {
            freqs_hz: freqs,
            start_ms: self.align_start(),
            slot_ms: u64::from(fs.n_intervals) * INTERVAL_US / 1000,
            probes: fs.probes_per_interval,
        }
    }

    fn after_plan(&mut self, end: SimTime, stage: u8) {
        let wait = match self.spec.freqsel.scope {
            AdaptScope::Global => self.spec.freqsel.report_wait_s,
            AdaptScope::Local => 1.0,
        };
        self.queue.push(end + SimTime::from_secs_f64(wait), Event::BaseDecide { stage });
    }

    fn on_base_round(&mut self, round: u32) -> Result<(), HarnessError> {
        let fs = self.spec.freqsel.clone();
        if let Some(p) = fs.period_s {
            let next = SimTime::from_secs_f64(fs.start_s + p * f64::from(round + 1));
            self.queue.push(next, Event::BaseRound { round: round + 1 });
        }
        let cands = self.spec.candidates();
        let value = if fs.method == Method::Lowpower {
            FreqPlanValue::Scan {
                freqs_hz: cands,
                start_ms: self.align_start(),
                slot_ms: SimTime::from_secs_f64(fs.scan_slot_s).as_millis().max(1),
            }
        } else {
            self.campaign(cands)
        };
        if let FreqPlanValue::Campaign { start_ms, .. } | FreqPlanValue::Scan { start_ms, .. } = &value {
            self.round_base = (SimTime::from_millis(*start_ms).0 / INTERVAL_US) as u32;
        }
        let end = self.flood_plan(value)?;
        let local = fs.scope == AdaptScope::Local;
        if fs.method == Method::Lowpower || !local {
            self.after_plan(end, 0);
        }
        Ok(())
    }

    fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            noise_term: self.spec.freqsel.noise_term,
            link_weighting: self.spec.freqsel.link_weighting,
            n_intervals: None,
        }
    }

    fn on_base_decide(&mut self, stage: u8) -> Result<(), HarnessError> {
        let fs = self.spec.freqsel.clone();
        let pool: Vec<LinkIntervalMetrics> = self.collected.iter().filter(|m| m.interval >= self.round_base).cloned().collect();
        let opts = self.score_options();
        let cands = self.spec.candidates();
        let local = fs.scope == AdaptScope::Local;
        let chosen = match (fs.method, stage) {
            (Method::Lowpower, 0) if local => {
                let plan = self.campaign(cands);
                self.flood_plan(plan)?;
                return Ok(());
            }
            (Method::Lowpower, 0) => {
                let mut short: Vec<u64> = freqsel::select::rank_by_noise(&pool, Scope::NetworkWide, None)
                    .into_iter()
                    .filter(|(f, _)| cands.contains(f))
                    .map(|(f, _)| f)
                    .take(fs.k)
                    .collect();
                if short.is_empty() {
                    tracing::warn!("no scan reports reached the base; probing every candidate");
                    short = cands.iter().copied().take(fs.k).collect();
                }
                let plan = self.campaign(short);
                let end = self.flood_plan(plan)?;
                self.after_plan(end, 1);
                return Ok(());
            }
            (Method::Lowpower, _) => freqsel::lowpower_select(&pool, fs.k, Scope::NetworkWide, &opts).map(|s| s.selection),
            (Method::Online, _) => freqsel::online_select(&pool, Scope::NetworkWide, &opts),
            (Method::Offline, _) => freqsel::offline_select(&pool, &cands),
            (Method::None, _) => return Ok(()),
        };
        let freq = match chosen {
            Ok(sel) => sel.freq_hz,
            Err(e) => {
                tracing::warn!(error = %e, "selection failed; keeping the current frequency");
                return Ok(());
            }
        };
        let now = self.now();
        self.selections.push(SelectionEvent {
            t_s: now.as_secs_f64(),
            scope: "global".into(),
            node: self.base,
            method: method_name(fs.method).into(),
            freq_hz: freq,
        });
        let ctx = FloodContext {
            origin: self.base,
            version: self.config_version + 1,
            activate_at_ms: (now + SimTime::from_secs_f64(fs.flood_margin_s)).as_millis(),
        };
        let actions = freqsel::apply_selection(Scope::NetworkWide, freq, ctx)
            .map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
        for a in actions {
            if let ReconfigAction::Flood(msg) = a {
                self.config_version = msg.version;
                self.dispatch(msg)?;
            }
        }
        Ok(())
    }

    fn on_slot_start(&mut self, id: NodeId, plan: usize, slot: usize) {
        let now = self.now();
        let p = &self.node(id).plans[plan];
        if p.kind != PlanKind::Campaign || p.slot_at(now).is_none() {
            return;
        }
        let freq = p.freqs[slot];
        let (slot_start, slot_end) = p.slot_span(slot);
        let probes = p.probes;
        let n_int = self.spec.freqsel.n_intervals;
        let dur = self.airtime(self.spec.freqsel.probe_payload_bytes);
        let frame_us = self.spec.mac.frame_ms * 1000;
        let per_interval = (INTERVAL_US / frame_us).max(1);
        let targets: Vec<(NodeId, u64)> = self.node(id).neighbors.iter().map(|e| (e.node_id, e.seed)).collect();
        for (nb, seed) in targets {
            let Ok(sched) = self.spec.mac.schedule(seed) else { continue };
            let mut peers: Vec<NodeId> = self.node(nb).neighbors.ids().collect();
            if !peers.contains(&id) {
                peers.push(id);
                peers.sort_unstable();
            }
            let m = peers.len() as u64;
            let rank = peers.iter().position(|&p| p == id).unwrap_or(0) as u64;
            for j in 0..u64::from(n_int) {
                let first_frame = (slot_start.0 + j * INTERVAL_US) / frame_us;
                let offs: BTreeSet<u64> = (0..u64::from(probes)).map(|k| (rank + k * m) % per_interval).collect();
                for off in offs {
                    let start = sched.window(first_frame + off).0;
                    if start < now || start + dur > slot_end || self.node(id).conflict_end(start, start + dur).is_some() {
                        continue;
                    }
                    self.register_tx(id, start, dur, freq, TxKind::Probe { dest: nb });
                }
            }
        }
    }

    fn on_slot_end(&mut self, id: NodeId, plan: usize, slot: usize) {
        let n_int = self.spec.freqsel.n_intervals;
        let cfg = self.spec.radio;
        let node = self.node(id);
        let p = &node.plans[plan];
        if p.cancelled_at.is_some() {
            return;
        }
        let freq = p.freqs[slot];
        let (s, e) = p.slot_span(slot);
        let from = s.max(p.applied_at);
        let windows: Vec<(SimTime, SimTime)> = node.sched.windows_between(from, e).collect();
        let mut noise: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (ws, _) in windows {
            let interval = self.node(id).plans[plan].interval_of(ws, n_int);
            let draw = self.node_mut(id).next_draw();
            let v = self.channel.measure_noise(id, freq, ws.as_secs_f64(), &cfg, draw);
            noise.entry(interval).or_default().push(v);
        }
        let node = self.node_mut(id);
        let p = &mut node.plans[plan];
        let mut out = Vec::new();
        match p.kind {
            PlanKind::Scan => {
                for (interval, v) in &noise {
                    let samples = IntervalSamples { noise_dbm: v.clone(), ..Default::default() };
                    out.push(aggregate_interval(LinkId::scan(id), freq, *interval, &samples));
                }
            }
            PlanKind::Campaign => {
                let keys: Vec<(NodeId, u64, u32)> = p.tally.keys().filter(|k| k.1 == freq).copied().collect();
                for key in keys {
                    let mut samples = p.tally.remove(&key).unwrap_or_default();
                    samples.noise_dbm = noise.get(&key.2).cloned().unwrap_or_default();
                    out.push(aggregate_interval(LinkId::new(key.0, id), freq, key.2, &samples));
                }
            }
        }
        node.records.extend(out.iter().cloned());
        let is_base = node.is_base;
        if self.spec.freqsel.scope == AdaptScope::Global && !out.is_empty() {
            if is_base {
                self.collected.extend(out);
            } else {
                self.node_mut(id).unreported.extend(out);
                self.flush_reports(id, false);
            }
        }
    }

    /// Sends full report packets, and the remainder when `all` is set.
    fn flush_reports(&mut self, id: NodeId, all: bool) {
        let per = self.spec.freqsel.records_per_report.max(1);
        loop {
            let node = self.node_mut(id);
            if node.unreported.is_empty() || (!all && node.unreported.len() < per) {
                return;
            }
            let n = per.min(node.unreported.len());
            let chunk: Vec<LinkIntervalMetrics> = node.unreported.drain(..n).collect();
            self.originate_report(id, chunk);
        }
    }

    fn on_plan_end(&mut self, id: NodeId, plan: usize) {
        self.flush_reports(id, true);
        let p = &self.node(id).plans[plan];
        if p.cancelled_at.is_none() && p.kind == PlanKind::Campaign && self.spec.freqsel.scope == AdaptScope::Local {
            self.local_select(id);
        }
    }

    fn local_select(&mut self, id: NodeId) {
        let fs = &self.spec.freqsel;
        let node = self.node(id);
        let base = node.round_base.unwrap_or(0);
        let pool: Vec<LinkIntervalMetrics> = node.records.iter().filter(|m| m.interval >= base).cloned().collect();
        let scope = Scope::Incoming(id);
        let opts = self.score_options();
        let res = match fs.method {
            Method::Online => freqsel::online_select(&pool, scope, &opts),
            Method::Lowpower => freqsel::lowpower_select(&pool, fs.k, scope, &opts).map(|s| s.selection),
            Method::Offline => {
                let mine: Vec<LinkIntervalMetrics> = pool.into_iter().filter(|m| m.link_id.dst == id).collect();
                freqsel::offline_select(&mine, &self.spec.candidates())
            }
            Method::None => return,
        };
        match res {
            Ok(sel) => {
                self.selections.push(SelectionEvent {
                    t_s: self.now().as_secs_f64(),
                    scope: "local".into(),
                    node: id,
                    method: method_name(fs.method).into(),
                    freq_hz: sel.freq_hz,
                });
                self.set_rx_freq(id, sel.freq_hz, false);
            }
            Err(e) => tracing::debug!(node = id, error = %e, "local selection skipped"),
        }
    }

    // ---- traffic ---------------------------------------------------------

    fn on_traffic(&mut self, id: NodeId, kind: usize) {
        let now = self.now();
        let period = self.node(id).periods_s[kind];
        let inc = self.node(id).inc;
        if period > 0.0 {
            self.queue.push(now + SimTime::from_secs_f64(period), Event::Traffic { node: id, inc, kind });
        }
        let draw = self.node_mut(id).next_draw();
        let u = |k: u64| rng::uniform(self.seed, &[stream::APP_PAYLOAD, u64::from(id), draw, k]);
        let node = self.node(id);
        let (payload, bytes) = match kind {
            0 => {
                let window = period.max(0.0) as u32;
                let counts: BTreeMap<&str, u32> =
                    CLASSES.iter().enumerate().map(|(i, c)| (*c, (u(i as u64) * f64::from(window) / 10.0) as u32)).collect();
                (json!({"window_s": window, "counts": counts}), self.spec.traffic.decision_payload_bytes)
            }
            1 => (json!({"laeq_db": round1(50.0 + 30.0 * u(0))}), self.spec.traffic.spl_payload_bytes),
            _ => {
                let path = node.routing.path_etx;
                (
                    json!({
                        "uptime_s": (now - node.down_spans.last().map_or(SimTime::ZERO, |d| d.1)).0 / 1_000_000,
                        "parent": node.routing.parent,
                        "path_etx": path.is_finite().then_some(path),
                        "epoch": node.routing.epoch,
                        "rx_freq_hz": node.rx_freq,
                        "battery_wh": round1(self.battery_estimate_wh(id)),
                    }),
                    self.spec.traffic.status_payload_bytes,
                )
            }
        };
        self.originate(id, KINDS[kind], vec![payload], Vec::new(), bytes, false);
    }

    /// Rough on-board battery estimate used in status reports.
    fn battery_estimate_wh(&self, id: NodeId) -> f64 {
        let e = &self.spec.energy;
        let node = self.node(id);
        let t_s = self.now().as_secs_f64();
        let trace = HarvestTrace::Constant(e.harvester.peak_sun_hours_per_day);
        let harvest = trace.panel_energy_wh(e.harvester.panel_w, 0.0, t_s / 3600.0) * e.harvester.conversion_efficiency;
        let radio_j = node.tx_airtime_s * e.radio.tx_w + (node.rx_airtime_s + node.sched.duty_cycle() * t_s) * e.radio.rx_w;
        let load_wh = (e.profile.non_network_mw() / 1000.0 * t_s + radio_j) / 3600.0 / e.load_efficiency;
        (e.capacity_wh * e.initial_soc + harvest - load_wh).clamp(0.0, e.capacity_wh)
    }

    fn originate_report(&mut self, id: NodeId, records: Vec<LinkIntervalMetrics>) {
        let payloads = records
            .iter()
            .map(|m| {
                json!({
                    "src": m.link_id.src,
                    "freq_hz": m.freq_hz,
                    "interval": m.interval,
                    "tx": m.tx,
                    "rx": m.rx,
                    "noise_p95_dbm": m.noise_p95_dbm,
                    "snr_p5_db": m.snr_p5_db,
                    "rssi_p5_dbm": m.rssi_p5_dbm,
                })
            })
            .collect();
        let bytes = 4 + 16 * records.len();
        self.originate(id, "link_metrics", payloads, records, bytes, true);
    }

    fn originate(
        &mut self,
        id: NodeId,
        kind: &'static str,
        payloads: Vec<serde_json::Value>,
        records: Vec<LinkIntervalMetrics>,
        bytes: usize,
        control: bool,
    ) {
        let now = self.now();
        let pid = self.packets.len() as u64;
        self.packets.push(PacketRecord {
            packet_id: pid,
            origin: id,
            kind: kind.into(),
            created_s: now.as_secs_f64(),
            outcome: Outcome::InFlight,
            end_s: None,
            hops: 0,
        });
        let pkt = Packet { id: pid, origin: id, kind, payloads, records, bytes, hops: 0, attempts: 0, no_route_since: None };
        if self.node(id).is_base {
            self.deliver(pkt);
            return;
        }
        if self.node(id).routing.parent.is_none() {
            self.finalize(pid, Outcome::Undeliverable, 0);
            return;
        }
        self.enqueue(id, pkt, control);
    }

    fn enqueue(&mut self, id: NodeId, pkt: Packet, control: bool) {
        let cap = self.spec.mac.queue_capacity;
        let node = self.node_mut(id);
        let q = if control { &mut node.control } else { &mut node.data };
        if q.len() >= cap {
            let (pid, hops) = (pkt.id, pkt.hops);
            self.finalize(pid, Outcome::DroppedQueue, hops);
            return;
        }
        q.push_back(pkt);
        self.try_send(id);
    }

    fn finalize(&mut self, pid: u64, outcome: Outcome, hops: u32) {
        let now = self.now().as_secs_f64();
        let rec = &mut self.packets[pid as usize];
        debug_assert_eq!(rec.outcome, Outcome::InFlight, "packet {pid} finalized twice");
        rec.outcome = outcome;
        rec.end_s = Some(now);
        rec.hops = hops;
    }

    fn deliver(&mut self, pkt: Packet) {
        let now = self.now();
        self.finalize(pkt.id, Outcome::Delivered, pkt.hops);
        if pkt.kind == "link_metrics" {
            self.collected.extend(pkt.records.iter().cloned());
        }
        for payload in pkt.payloads {
            let seq = self.gateway_seq.entry(pkt.origin).or_default();
            *seq += 1;
            match GatewayRecord::new(pkt.origin, pkt.kind, *seq, now.as_millis(), payload) {
                Ok(rec) => {
                    if let Some(h) = self.hook.as_mut() {
                        h(&rec);
                    }
                    self.gateway.push(rec);
                }
                Err(e) => tracing::error!(error = %e, "gateway record rejected"),
            }
        }
    }

    fn try_send(&mut self, id: NodeId) {
        let now = self.now();
        let node = self.node(id);
        if node.sending || !node.up {
            return;
        }
        let control = !node.control.is_empty();
        let Some(pkt) = (if control { node.control.front() } else { node.data.front() }) else { return };
        let (pid, hops, attempts, bytes, no_route_since) = (pkt.id, pkt.hops, pkt.attempts, pkt.bytes, pkt.no_route_since);
        let parent = node.routing.parent.filter(|p| node.neighbors.get(*p).is_some());
        let Some(dest) = parent else {
            let since = no_route_since.unwrap_or(now);
            if now - since >= NO_ROUTE_GIVEUP {
                self.pop_head(id, control);
                self.finalize(pid, Outcome::Undeliverable, hops);
                self.try_send(id);
            } else {
                let inc = node.inc;
                self.head_mut(id, control).no_route_since = Some(since);
                self.queue.push(now + NO_ROUTE_RETRY, Event::TrySend { node: id, inc });
            }
            return;
        };
        let frame_us = self.spec.mac.frame_ms * 1000;
        let backoff = if attempts == 0 {
            0
        } else {
            let draw = self.node_mut(id).next_draw();
            let span = 1u64 << attempts.min(6);
            1 + (self.uniform(&[stream::TRAFFIC, u64::from(id), draw]) * span as f64) as u64
        };
        let dur = self.airtime(bytes);
        let node = self.node(id);
        let mut t = now + SimTime(backoff * frame_us);
        let start = loop {
            let Ok(s) = mac::next_rendezvous(&node.neighbors, dest, &self.spec.mac, t) else { return };
            let probed = self.air.values().any(|o| matches!(o.kind, TxKind::Probe { dest: d } if d == dest) && o.start < s + dur + GUARD && s < o.end + GUARD);
            match node.conflict_end(s, s + dur) {
                None if !probed => break s,
                None => t = s + SimTime(self.spec.mac.wake_window_ms * 1000),
                Some(_) => t = s + SimTime(self.spec.mac.wake_window_ms * 1000),
            }
        };
        let freq = node.plan_freq_at(start).unwrap_or_else(|| node.neighbors.get(dest).map_or(node.rx_freq, |e| e.rx_freq_hz));
        self.node_mut(id).sending = true;
        self.register_tx(id, start, dur, freq, TxKind::Data { dest, control });
    }

    fn head_mut(&mut self, id: NodeId, control: bool) -> &mut Packet {
        let node = self.node_mut(id);
        let q = if control { &mut node.control } else { &mut node.data };
        q.front_mut().expect("queued packet")
    }

    fn pop_head(&mut self, id: NodeId, control: bool) -> Option<Packet> {
        let node = self.node_mut(id);
        if control {
            node.control.pop_front()
        } else {
            node.data.pop_front()
        }
    }

    // ---- the air ---------------------------------------------------------

    /// Decodes `tx` at `rx`. `None` when the receiver never heard the frame,
    /// `Some(None)` when it heard but failed to decode.
    fn resolve(&mut self, tx: &Transmission, rx: NodeId, beacon: bool) -> Option<Option<LinkSample>> {
        let r = self.node(rx);
        if !r.up || !self.link_ok(tx.sender, rx) {
            return None;
        }
        let overlaps = |o: &Transmission| o.start < tx.end && tx.start < o.end;
        if self.air.values().any(|o| o.sender == rx && overlaps(o)) {
            return None;
        }
        if !beacon && (r.freq_at(tx.start) != tx.freq_hz || !r.sched.hears(tx.start, self.preamble)) {
            return None;
        }
        let t = tx.start.as_secs_f64();
        let sample = self.channel.sample_link(tx.sender, rx, tx.freq_hz, t, &self.spec.radio)?;
        let collided = self.air.values().any(|o| {
            o.sender != tx.sender
                && o.sender != rx
                && o.freq_hz == tx.freq_hz
                && overlaps(o)
                && !(o.start == tx.start && o.end == tx.end && o.sender == tx.sender)
                && self.link_ok(o.sender, rx)
        });
        let rnode = self.node_mut(rx);
        rnode.radio.push(RadioInterval { node_id: rx, t_on: tx.start, t_off: tx.end, freq_hz: tx.freq_hz, mode: RadioMode::Rx });
        rnode.rx_airtime_s += (tx.end - tx.start).as_secs_f64();
        let draw = rnode.next_draw();
        if collided {
            return Some(None);
        }
        Some(self.channel.receive(&sample, &self.spec.radio, rx, draw).then_some(sample))
    }

    fn on_tx_end(&mut self, id: u64) -> Result<(), HarnessError> {
        let now = self.now();
        self.air.retain(|_, o| o.end + AIR_MEMORY >= now);
        let Some(tx) = self.air.get(&id).cloned() else { return Ok(()) };
        if !self.alive(tx.sender, tx.inc) {
            return Ok(());
        }
        {
            let s = self.node_mut(tx.sender);
            s.reservations.retain(|&(_, e)| e > now);
            s.radio.push(RadioInterval { node_id: tx.sender, t_on: tx.start, t_off: tx.end, freq_hz: tx.freq_hz, mode: RadioMode::Tx });
            s.tx_airtime_s += (tx.end - tx.start).as_secs_f64();
        }
        match &tx.kind {
            TxKind::Beacon(frame) => {
                let ids: Vec<NodeId> = self.nodes.keys().copied().filter(|&n| n != tx.sender).collect();
                for rx in ids {
                    if let Some(Some(sample)) = self.resolve(&tx, rx, true) {
                        self.on_beacon(rx, tx.sender, frame, &sample)?;
                    }
                }
            }
            TxKind::Probe { dest } => {
                let dest = *dest;
                let got = self.resolve(&tx, dest, false).flatten();
                let n_int = self.spec.freqsel.n_intervals;
                let r = self.node_mut(dest);
                if r.up {
                    if let Some(p) = r.plans.iter_mut().rev().find(|p| p.kind == PlanKind::Campaign && p.slot_at(tx.start).is_some()) {
                        let interval = p.interval_of(tx.start, n_int);
                        p.tally
                            .entry((tx.sender, tx.freq_hz, interval))
                            .or_default()
                            .record_attempt(got.map(|s| (s.rssi_dbm, s.snr_db)));
                    }
                }
            }
            TxKind::Data { dest, control } => {
                let (dest, control) = (*dest, *control);
                let ok = self.resolve(&tx, dest, false).flatten().is_some();
                self.on_unicast_outcome(tx.sender, dest, control, ok);
            }
        }
        Ok(())
    }

    fn on_unicast_outcome(&mut self, id: NodeId, dest: NodeId, control: bool, ok: bool) {
        let (window, cap, min_samples) = (self.spec.routing.etx_window, self.spec.routing.etx_cap, self.spec.routing.etx_min_samples);
        let max_retries = self.spec.mac.max_retries;
        let ttl = 2 * self.nodes.len() as u32;
        {
            let node = self.node_mut(id);
            node.sending = false;
            let est = node.estimators.entry(dest).or_insert_with(|| LinkEstimator::new(window, cap));
            est.record(ok);
            if est.attempts() as usize >= min_samples {
                let etx = est.etx().unwrap_or(cap);
                node.routing.set_link_etx(dest, etx);
            }
        }
        self.refresh_routing(id);
        if ok {
            let mut pkt = self.pop_head(id, control).expect("packet in flight");
            pkt.hops += 1;
            pkt.attempts = 0;
            pkt.no_route_since = None;
            if self.node(dest).is_base {
                self.deliver(pkt);
            } else if pkt.hops >= ttl {
                self.finalize(pkt.id, Outcome::Undeliverable, pkt.hops);
            } else {
                self.enqueue(dest, pkt, control);
            }
        } else {
            let head = self.head_mut(id, control);
            head.attempts += 1;
            if head.attempts > max_retries {
                let pkt = self.pop_head(id, control).expect("packet in flight");
                self.finalize(pkt.id, Outcome::DroppedChannel, pkt.hops);
            }
        }
        self.try_send(id);
    }

    // ---- faults ----------------------------------------------------------

    fn on_fault(&mut self, i: usize) {
        let now = self.now();
        match self.spec.faults[i].clone() {
            FaultSpec::LinkDown { a, b, .. } => {
                tracing::info!(a, b, "link down");
                self.blocked.insert(pair(a, b));
            }
            FaultSpec::Reset { node, .. } => {
                if self.node(node).up {
                    self.node_mut(node).routing.start_reset();
                    self.trickle_reset(node, true);
                }
            }
            FaultSpec::NodeReboot { node, down_s, .. } => {
                if !self.node(node).up {
                    return;
                }
                let n = self.node_mut(node);
                n.up = false;
                n.inc += 1;
                n.sending = false;
                n.reservations.clear();
                for p in &mut n.plans {
                    if p.end() > now {
                        p.cancelled_at = Some(now);
                    }
                }
                let dropped: Vec<(u64, u32)> = n.control.drain(..).chain(n.data.drain(..)).map(|p| (p.id, p.hops)).collect();
                n.down_spans.push((now, now + SimTime::from_secs_f64(down_s)));
                for (pid, hops) in dropped {
                    self.finalize(pid, Outcome::DroppedQueue, hops);
                }
                self.air.retain(|_, o| !(o.sender == node && o.start > now));
                self.queue.push(now + SimTime::from_secs_f64(down_s), Event::NodeUp { node });
            }
        }
    }

    fn on_node_up(&mut self, id: NodeId) {
        let now = self.now();
        let f0 = self.spec.initial_rx_freq();
        let periods = [self.spec.traffic.decision_period_s, self.spec.traffic.spl_period_s, self.spec.traffic.status_period_s];
        let n = self.node_mut(id);
        if let Some(last) = n.down_spans.last_mut() {
            last.1 = now;
        }
        n.up = true;
        n.inc += 1;
        n.neighbors.clear();
        n.routing = RoutingState::new(id, n.is_base);
        n.estimators.clear();
        n.beacon_etx.clear();
        n.flood = FloodState::new();
        n.carried.clear();
        n.periods_s = periods;
        n.round_base = None;
        n.unreported.clear();
        if n.rx_freq != f0 {
            n.rx_freq = f0;
            n.rx_history.push((now, f0));
        }
        self.boot(id);
    }

    // ---- wrap-up ---------------------------------------------------------

    fn finish(mut self) -> Result<MetricsReport, HarnessError> {
        let horizon = self.horizon;
        for n in self.nodes.values_mut() {
            if let Some(last) = n.down_spans.last_mut() {
                last.1 = last.1.min(horizon);
            }
        }
        let mut trace = Vec::new();
        let mut nodes = Vec::new();
        let mut outages = Vec::new();
        let e = self.spec.energy.clone();
        let mut latencies: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        let mut generated: BTreeMap<NodeId, (u64, u64)> = BTreeMap::new();
        for p in &self.packets {
            let g = generated.entry(p.origin).or_default();
            g.0 += 1;
            if let Some(l) = p.latency_s() {
                g.1 += 1;
                latencies.entry(p.origin).or_default().push(l);
            }
        }
        for n in self.nodes.values() {
            let mut ivs: Vec<RadioInterval> = n.radio.iter().filter(|iv| iv.t_on < horizon).copied().collect();
            let mut up_from = SimTime::ZERO;
            let mut up_spans = Vec::new();
            for &(ds, de) in &n.down_spans {
                up_spans.push((up_from, ds.min(horizon)));
                up_from = de;
            }
            up_spans.push((up_from, horizon));
            let mut up_us = 0;
            for &(s, e) in &up_spans {
                if e <= s {
                    continue;
                }
                up_us += (e - s).0;
                for (ws, we) in n.sched.windows_between(s, e) {
                    ivs.push(RadioInterval { node_id: n.id, t_on: ws, t_off: we, freq_hz: n.freq_at(ws), mode: RadioMode::Listen });
                }
            }
            for iv in &mut ivs {
                iv.t_off = iv.t_off.min(horizon);
            }
            ivs.sort_by_key(|iv| (iv.t_on, iv.mode, iv.t_off));
            if horizon.0 == 0 {
                continue;
            }
            let on_us = mac::union_length(ivs.iter().map(|iv| (iv.t_on, iv.t_off)).collect());
            let tx_us = mac::union_length(ivs.iter().filter(|iv| iv.mode == RadioMode::Tx).map(|iv| (iv.t_on, iv.t_off)).collect());
            let tx_s = tx_us as f64 * 1e-6;
            let rx_s = on_us.saturating_sub(tx_us) as f64 * 1e-6;
            let up_s = up_us as f64 * 1e-6;
            let radio_tx_j = energy::radio_energy(tx_s, energy::RadioMode::Tx, &e.radio);
            let radio_rx_j = energy::radio_energy(rx_s, energy::RadioMode::Rx, &e.radio);
            let frontend_j = e.profile.frontend_mw * 1e-3 * up_s;
            let inference_j = e.profile.inference_duty * e.profile.inference_active_mw * 1e-3 * up_s;
            let idle_j = e.profile.idle_mw * 1e-3 * up_s;
            let total_j = radio_tx_j + radio_rx_j + frontend_j + inference_j + idle_j;
            let (gen, ok) = generated.get(&n.id).copied().unwrap_or_default();
            let lat = latencies.get(&n.id).cloned().unwrap_or_default();
            nodes.push(NodeSummary {
                node_id: n.id,
                role: if n.is_base { "base" } else { "edge" }.into(),
                x_m: n.pos[0],
                y_m: n.pos[1],
                generated: gen,
                delivered: ok,
                delivery_ratio: (gen > 0).then(|| ok as f64 / gen as f64),
                latency_p50_s: percentile(&lat, 50.0),
                latency_p95_s: percentile(&lat, 95.0),
                duty_cycle: on_us as f64 / horizon.0 as f64,
                tx_s,
                rx_s,
                radio_tx_j,
                radio_rx_j,
                frontend_j,
                inference_j,
                idle_j,
                total_j,
                rx_freq_hz: n.rx_freq,
                parent: n.routing.parent,
                path_etx: n.routing.path_etx.is_finite().then_some(n.routing.path_etx),
                epoch: n.routing.epoch,
            });
            let load_w = total_j / horizon.as_secs_f64();
            let state = EnergyState::new(e.capacity_wh, e.capacity_wh * e.initial_soc)?;
            let params = SocParams {
                step_h: (horizon.as_secs_f64() / 3600.0).min(1.0),
                horizon_days: horizon.as_secs_f64() / 86_400.0,
                load_efficiency: e.load_efficiency,
                ..SocParams::default()
            };
            let soc = energy::simulate_soc(&state, load_w, &e.harvester, &HarvestTrace::Constant(e.harvester.peak_sun_hours_per_day), &params)?;
            outages.extend(soc.outages.iter().map(|o| OutageRow::new(n.id, o)));
            if self.spec.trace_listen {
                trace.extend(ivs);
            } else {
                trace.extend(ivs.into_iter().filter(|iv| iv.mode != RadioMode::Listen));
            }
        }
        let link_metrics = match self.spec.freqsel.scope {
            AdaptScope::Global => std::mem::take(&mut self.collected),
            AdaptScope::Local => self.nodes.values().flat_map(|n| n.records.iter().cloned()).collect(),
        };
        let mut link_metrics = link_metrics;
        link_metrics.sort_by_key(|m| (m.interval, m.freq_hz, m.link_id));
        for n in self.nodes.values() {
            debug_assert!(n.queued() == 0 || self.packets.iter().any(|p| p.outcome == Outcome::InFlight));
        }
        Ok(MetricsReport {
            scenario: self.spec,
            horizon_s: horizon.as_secs_f64(),
            link_metrics,
            nodes,
            packets: self.packets,
            gateway: self.gateway,
            radio_trace: trace,
            selections: self.selections,
            outages,
        })
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::None => "none",
        Method::Offline => "offline",
        Method::Online => "online",
        Method::Lowpower => "lowpower",
    }
}
