//! Synchronous beacon-round executor for routing, reset and flooding on an
//! abstract graph. In each round every node broadcasts one beacon built from
//! the state at the start of the round.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand::seq::IndexedRandom;

use super::flood::{flood, ConfigMessage, FloodOutcome, FloodState};
use super::routing::{tree_violations, NodeId, ResetWave, RouteAdvert, RoutingState, WavePhase};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub etx: f64,
    /// Per-attempt delivery probability used by convergecast.
    pub prr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryReport {
    pub delivered: bool,
    pub hops: usize,
    pub path: Vec<NodeId>,
    pub transmissions: usize,
    /// One round per transmission attempt.
    pub latency_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct RoundNetwork {
    pub base: NodeId,
    pub nodes: BTreeMap<NodeId, RoutingState>,
    pub floods: BTreeMap<NodeId, FloodState>,
    links: BTreeMap<(NodeId, NodeId), LinkSpec>,
    round: u64,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

impl RoundNetwork {
    pub fn new(base: NodeId, ids: impl IntoIterator<Item = NodeId>) -> Self {
        let mut nodes = BTreeMap::new();
        let mut floods = BTreeMap::new();
        for id in ids.into_iter().chain([base]) {
            nodes.insert(id, RoutingState::new(id, id == base));
            floods.insert(id, FloodState::new());
        }
        Self { base, nodes, floods, links: BTreeMap::new(), round: 0 }
    }

    /// Line `0 - 1 - ... - hops` with the base at 0 and loss-free links.
    pub fn line(hops: u32) -> Self {
        let mut net = Self::new(0, 0..=hops);
        for i in 0..hops {
            net.add_link(i, i + 1, 1.0);
        }
        net
    }

    /// Random connected graph on `n` nodes: a random spanning tree plus
    /// extra edges with probability `p_extra`, link ETX uniform in [1, 2].
    pub fn random_connected<R: Rng>(n: u32, p_extra: f64, rng: &mut R) -> Self {
        let mut net = Self::new(0, 0..n);
        for i in 1..n {
            let j = rng.random_range(0..i);
            let etx = rng.random_range(1.0..=2.0);
            net.add_link(i, j, etx);
        }
        for a in 0..n {
            for b in (a + 1)..n {
                if !net.links.contains_key(&key(a, b)) && rng.random_bool(p_extra) {
                    let etx = rng.random_range(1.0..=2.0);
                    net.add_link(a, b, etx);
                }
            }
        }
        net
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, etx: f64) {
        self.links.insert(key(a, b), LinkSpec { etx, prr: 1.0 });
    }

    pub fn set_link(&mut self, a: NodeId, b: NodeId, spec: LinkSpec) {
        self.links.insert(key(a, b), spec);
    }

    pub fn remove_link(&mut self, a: NodeId, b: NodeId) {
        self.links.remove(&key(a, b));
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<LinkSpec> {
        self.links.get(&key(a, b)).copied()
    }

    pub fn neighbors(&self, n: NodeId) -> Vec<NodeId> {
        self.links
            .keys()
            .filter_map(|&(a, b)| if a == n { Some(b) } else if b == n { Some(a) } else { None })
            .collect()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    fn hop_distances(&self, from: NodeId) -> BTreeMap<NodeId, usize> {
        let mut dist = BTreeMap::from([(from, 0)]);
        let mut q = VecDeque::from([from]);
        while let Some(n) = q.pop_front() {
            let d = dist[&n];
            for nb in self.neighbors(n) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(nb) {
                    e.insert(d + 1);
                    q.push_back(nb);
                }
            }
        }
        dist
    }

    pub fn reachable_from_base(&self) -> BTreeSet<NodeId> {
        self.hop_distances(self.base).into_keys().collect()
    }

    /// Hop diameter of the connected component holding the base.
    pub fn diameter(&self) -> usize {
        self.reachable_from_base()
            .into_iter()
            .map(|n| self.hop_distances(n).into_values().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// One beacon round. Returns true if any parent, cost or epoch changed.
    pub fn step(&mut self) -> bool {
        self.round += 1;
        let now = SimTime::from_secs(self.round);
        let adverts: BTreeMap<NodeId, RouteAdvert> = self.nodes.iter().map(|(&id, s)| (id, s.advert())).collect();
        let before: Vec<_> = self.nodes.values().map(|s| (s.parent, s.path_etx.to_bits(), s.epoch)).collect();
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let nbrs = self.neighbors(id);
            let links: Vec<f64> = nbrs.iter().map(|&nb| self.links[&key(id, nb)].etx).collect();
            let s = self.nodes.get_mut(&id).expect("known node");
            s.neighbor_table.retain(|k, _| nbrs.contains(k));
            for (&nb, &etx) in nbrs.iter().zip(&links) {
                if let Some(a) = adverts.get(&nb) {
                    s.hear(nb, *a, etx, now);
                }
            }
            s.refresh_children();
            s.update_parent();
            s.update_wave();
        }
        let after: Vec<_> = self.nodes.values().map(|s| (s.parent, s.path_etx.to_bits(), s.epoch)).collect();
        before != after
    }

    pub fn violations(&self) -> Vec<String> {
        let reach = self.reachable_from_base();
        tree_violations(&self.nodes, self.base, &reach, |a, b| self.link(a, b).map(|l| l.etx))
    }

    pub fn is_legal(&self) -> bool {
        self.violations().is_empty()
    }

    /// Steps until the state is legal and a further round changes nothing.
    /// Returns the number of rounds taken to reach that state.
    pub fn run_until_stable(&mut self, max_rounds: usize) -> Option<usize> {
        for r in 0..=max_rounds {
            if self.is_legal() {
                let mut probe = self.clone();
                if !probe.step() {
                    return Some(r);
                }
            }
            if r < max_rounds {
                self.step();
            }
        }
        None
    }

    pub fn distributed_reset(&mut self, initiator: NodeId) {
        if let Some(s) = self.nodes.get_mut(&initiator) {
            s.start_reset();
        }
    }

    /// True once the initiator's wave has collected every completion.
    pub fn wave_complete(&self, initiator: NodeId) -> bool {
        self.nodes.get(&initiator).is_some_and(|s| s.wave.phase == WavePhase::Complete)
    }

    /// Node loses all state, as after a power cycle.
    pub fn reboot(&mut self, node: NodeId) {
        let is_base = node == self.base;
        self.nodes.insert(node, RoutingState::new(node, is_base));
    }

    /// Overwrites every node's routing state with random values.
    pub fn corrupt<R: Rng>(&mut self, rng: &mut R) {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for &id in &ids {
            let s = self.nodes.get_mut(&id).expect("known node");
            s.parent = if rng.random_bool(0.8) { ids.choose(rng).copied() } else { None };
            s.path_etx = if rng.random_bool(0.9) { rng.random_range(0.0..20.0) } else { f64::INFINITY };
            s.epoch = rng.random_range(0..6);
            s.wave = ResetWave {
                epoch: rng.random_range(0..6),
                phase: *[WavePhase::Idle, WavePhase::Propagate, WavePhase::Complete].choose(rng).expect("non-empty"),
                initiator: *ids.choose(rng).expect("non-empty"),
                wave_parent: ids.choose(rng).copied(),
            };
            s.children = ids.iter().copied().filter(|_| rng.random_bool(0.2)).collect();
            s.neighbor_table.clear();
            for _ in 0..rng.random_range(0..4) {
                let nb = *ids.choose(rng).expect("non-empty");
                let advert = RouteAdvert {
                    epoch: rng.random_range(0..6),
                    path_etx: rng.random_range(0.0..20.0),
                    parent: ids.choose(rng).copied(),
                    phase: WavePhase::Idle,
                    wave_parent: None,
                    initiator: nb,
                };
                s.neighbor_table.insert(
                    nb,
                    super::routing::NeighborRoute { link_etx: rng.random_range(0.5..3.0), advert, last_update: SimTime::ZERO },
                );
            }
        }
    }

    /// Forwards a packet parent by parent with up to `max_retries`
    /// retransmissions per hop.
    pub fn convergecast<R: Rng>(&self, origin: NodeId, max_retries: u32, rng: &mut R) -> DeliveryReport {
        let mut report = DeliveryReport { delivered: false, hops: 0, path: vec![origin], transmissions: 0, latency_rounds: 0 };
        let mut cur = origin;
        while cur != self.base {
            if report.hops >= self.nodes.len() {
                return report;
            }
            let Some(parent) = self.nodes.get(&cur).and_then(|s| s.parent) else {
                return report;
            };
            let Some(link) = self.link(cur, parent) else {
                return report;
            };
            let mut ok = false;
            for _ in 0..=max_retries {
                report.transmissions += 1;
                report.latency_rounds += 1;
                if link.prr >= 1.0 || rng.random_bool(link.prr.clamp(0.0, 1.0)) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return report;
            }
            report.hops += 1;
            report.path.push(parent);
            cur = parent;
        }
        report.delivered = true;
        report
    }

    pub fn flood_config(&mut self, msg: &ConfigMessage) -> FloodOutcome {
        let adj: BTreeMap<NodeId, Vec<NodeId>> = self.nodes.keys().map(|&n| (n, self.neighbors(n))).collect();
        flood(&mut self.floods, |n| adj.get(&n).cloned().unwrap_or_default(), msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn line_converges_to_hop_counts() {
        let mut net = RoundNetwork::line(7);
        let r = net.run_until_stable(50).expect("converges");
        assert!(r <= 8, "{r}");
        for i in 0..=7 {
            assert_eq!(net.nodes[&i].path_etx, f64::from(i));
        }
    }

    #[test]
    fn parent_cycle_repaired_by_reset() {
        let mut net = RoundNetwork::line(5);
        net.run_until_stable(50).unwrap();
        // 3 -> 4 -> 5 -> 3 with plausible but false costs
        net.add_link(3, 5, 1.0);
        for (n, p, c) in [(3, 4, 1.0), (4, 5, 1.5), (5, 3, 0.5)] {
            let s = net.nodes.get_mut(&n).unwrap();
            s.parent = Some(p);
            s.path_etx = c;
        }
        assert!(!net.is_legal());
        net.distributed_reset(0);
        let bound = 4 * net.diameter();
        let r = net.run_until_stable(bound).expect("stabilizes");
        assert!(r <= bound);
    }

    #[test]
    fn reset_on_legal_state_keeps_tree() {
        let mut net = RoundNetwork::line(4);
        net.run_until_stable(50).unwrap();
        let parents: Vec<_> = net.nodes.values().map(|s| s.parent).collect();
        let e = net.nodes[&0].epoch;
        net.distributed_reset(0);
        net.run_until_stable(50).unwrap();
        assert_eq!(net.nodes.values().map(|s| s.parent).collect::<Vec<_>>(), parents);
        assert!(net.nodes.values().all(|s| s.epoch == e + 1));
        for _ in 0..10 {
            net.step();
        }
        assert!(net.wave_complete(0));
    }

    #[test]
    fn reboot_mid_wave_adopts_epoch() {
        let mut net = RoundNetwork::line(6);
        net.run_until_stable(50).unwrap();
        net.distributed_reset(0);
        net.step();
        net.step();
        net.reboot(4);
        assert_eq!(net.nodes[&4].epoch, 0);
        net.step();
        net.step();
        net.step();
        assert_eq!(net.nodes[&4].epoch, net.nodes[&0].epoch);
        assert!(net.run_until_stable(50).is_some());
    }

    #[test]
    fn convergecast_identity_and_disconnect() {
        let mut net = RoundNetwork::line(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(!net.convergecast(3, 3, &mut rng).delivered);
        net.run_until_stable(20).unwrap();
        let r = net.convergecast(0, 3, &mut rng);
        assert!(r.delivered);
        assert_eq!(r.hops, 0);
    }
}
