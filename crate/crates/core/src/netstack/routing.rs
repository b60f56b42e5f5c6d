//! Collection-tree routing on an ETX gradient, with epoch-stamped
//! distributed reset.
//!
//! Every beacon carries the sender's epoch, path ETX, parent and reset-wave
//! phase. A node that hears a higher epoch than its own adopts it and clears
//! its routing state; the base answers a higher epoch by moving one past it,
//! so the last wave always originates at the root. Parent choice only
//! considers same-epoch neighbors whose advertised cost is strictly below the
//! node's own, which keeps parent pointers acyclic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

pub type NodeId = u32;

/// Costs above this are treated as unreachable.
pub const DEFAULT_MAX_PATH_ETX: f64 = 256.0;
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavePhase {
    Idle,
    Propagate,
    Complete,
}

/// A node's view of the most recent reset wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetWave {
    pub epoch: u64,
    pub phase: WavePhase,
    pub initiator: NodeId,
    /// Neighbor the wave arrived from; `None` at the initiator.
    pub wave_parent: Option<NodeId>,
}

/// Routing fields of a beacon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteAdvert {
    pub epoch: u64,
    pub path_etx: f64,
    pub parent: Option<NodeId>,
    pub phase: WavePhase,
    pub wave_parent: Option<NodeId>,
    pub initiator: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRoute {
    pub link_etx: f64,
    pub advert: RouteAdvert,
    pub last_update: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    pub id: NodeId,
    pub is_base: bool,
    pub parent: Option<NodeId>,
    /// 0 at the base, infinite when disconnected.
    pub path_etx: f64,
    pub neighbor_table: BTreeMap<NodeId, NeighborRoute>,
    pub children: BTreeSet<NodeId>,
    pub epoch: u64,
    pub wave: ResetWave,
    pub max_path_etx: f64,
}

/// Candidate parent ranking: lowest advertised + link cost, then lowest id.
pub fn select_parent(state: &RoutingState) -> Option<(NodeId, f64)> {
    if state.is_base {
        return None;
    }
    let mut best: Option<(NodeId, f64)> = None;
    for (&id, nb) in &state.neighbor_table {
        let adv = &nb.advert;
        if adv.epoch != state.epoch
            || !adv.path_etx.is_finite()
            || adv.path_etx >= state.path_etx
            || adv.parent == Some(state.id)
            || !nb.link_etx.is_finite()
        {
            continue;
        }
        let cost = adv.path_etx + nb.link_etx;
        if cost > state.max_path_etx {
            continue;
        }
        match best {
            Some((_, c)) if cost >= c - TIE_EPS => {}
            _ => best = Some((id, cost)),
        }
    }
    best
}

impl RoutingState {
    pub fn new(id: NodeId, is_base: bool) -> Self {
        Self {
            id,
            is_base,
            parent: None,
            path_etx: if is_base { 0.0 } else { f64::INFINITY },
            neighbor_table: BTreeMap::new(),
            children: BTreeSet::new(),
            epoch: 0,
            wave: ResetWave { epoch: 0, phase: WavePhase::Idle, initiator: id, wave_parent: None },
            max_path_etx: DEFAULT_MAX_PATH_ETX,
        }
    }

    pub fn advert(&self) -> RouteAdvert {
        RouteAdvert {
            epoch: self.epoch,
            path_etx: self.path_etx,
            parent: self.parent,
            phase: self.wave.phase,
            wave_parent: self.wave.wave_parent,
            initiator: self.wave.initiator,
        }
    }

    pub fn clear_routing(&mut self) {
        self.parent = None;
        self.path_etx = if self.is_base { 0.0 } else { f64::INFINITY };
        self.children.clear();
    }

    fn adopt_epoch(&mut self, epoch: u64, from: NodeId, initiator: NodeId) {
        if self.is_base {
            self.epoch = epoch + 1;
            self.wave = ResetWave { epoch: self.epoch, phase: WavePhase::Propagate, initiator: self.id, wave_parent: None };
        } else {
            self.epoch = epoch;
            self.wave = ResetWave { epoch, phase: WavePhase::Propagate, initiator, wave_parent: Some(from) };
        }
        self.clear_routing();
    }

    /// Starts a reset wave with an epoch above everything this node knows.
    pub fn start_reset(&mut self) {
        let known = self.neighbor_table.values().map(|n| n.advert.epoch).max().unwrap_or(0);
        self.epoch = self.epoch.max(known) + 1;
        self.wave = ResetWave { epoch: self.epoch, phase: WavePhase::Propagate, initiator: self.id, wave_parent: None };
        self.clear_routing();
    }

    /// Processes one received beacon. Returns true when the epoch changed.
    pub fn hear(&mut self, from: NodeId, advert: RouteAdvert, link_etx: f64, now: SimTime) -> bool {
        let epoch_changed = advert.epoch > self.epoch;
        if epoch_changed {
            self.adopt_epoch(advert.epoch, from, advert.initiator);
        }
        self.neighbor_table.insert(from, NeighborRoute { link_etx, advert, last_update: now });
        epoch_changed
    }

    pub fn set_link_etx(&mut self, neighbor: NodeId, etx: f64) {
        if let Some(n) = self.neighbor_table.get_mut(&neighbor) {
            n.link_etx = etx;
        }
    }

    pub fn forget(&mut self, neighbor: NodeId) {
        self.neighbor_table.remove(&neighbor);
        self.children.remove(&neighbor);
    }

    pub fn refresh_children(&mut self) {
        self.children = self
            .neighbor_table
            .iter()
            .filter(|(_, n)| n.advert.parent == Some(self.id) && n.advert.epoch == self.epoch)
            .map(|(&id, _)| id)
            .collect();
    }

    /// Re-evaluates the parent. Returns true when parent or cost changed.
    pub fn update_parent(&mut self) -> bool {
        if self.is_base {
            let changed = self.parent.is_some() || self.path_etx != 0.0;
            self.parent = None;
            self.path_etx = 0.0;
            return changed;
        }
        let (parent, path) = match select_parent(self) {
            Some((p, c)) => (Some(p), c),
            None => (None, f64::INFINITY),
        };
        let changed = parent != self.parent || path.to_bits() != self.path_etx.to_bits();
        self.parent = parent;
        self.path_etx = path;
        changed
    }

    /// Moves a propagating wave to complete once every neighbor runs this
    /// epoch and every wave child reports completion.
    pub fn update_wave(&mut self) -> bool {
        if self.wave.phase != WavePhase::Propagate {
            return false;
        }
        let done = self.neighbor_table.iter().all(|(_, n)| {
            let a = &n.advert;
            a.epoch == self.epoch && (a.wave_parent != Some(self.id) || a.phase == WavePhase::Complete)
        });
        if done {
            self.wave.phase = WavePhase::Complete;
        }
        done
    }

    /// Self-consistency of this node's path cost against its parent's advert.
    pub fn is_consistent(&self) -> bool {
        if self.is_base {
            return self.parent.is_none() && self.path_etx == 0.0;
        }
        match self.parent {
            None => !self.path_etx.is_finite(),
            Some(p) => self
                .neighbor_table
                .get(&p)
                .is_some_and(|n| (n.advert.path_etx + n.link_etx - self.path_etx).abs() < 1e-9),
        }
    }
}

/// Checks that parent pointers form a tree rooted at `base`.
///
/// `link_etx(a, b)` returns the current link cost if `a` and `b` are
/// neighbors. Every node in `reachable` must reach the base in at most N-1
/// hops with a path cost equal to link plus parent cost; no node may sit on a
/// cycle.
pub fn tree_violations<F>(
    states: &BTreeMap<NodeId, RoutingState>,
    base: NodeId,
    reachable: &BTreeSet<NodeId>,
    link_etx: F,
) -> Vec<String>
where
    F: Fn(NodeId, NodeId) -> Option<f64>,
{
    let mut out = Vec::new();
    let n = states.len();
    let Some(root) = states.get(&base) else {
        return vec![format!("base {base} missing")];
    };
    if root.parent.is_some() || root.path_etx != 0.0 {
        out.push("base has a parent or non-zero cost".into());
    }
    for (&id, s) in states {
        let mut cur = id;
        let mut steps = 0;
        while let Some(p) = states.get(&cur).and_then(|s| s.parent) {
            cur = p;
            steps += 1;
            if steps > n {
                out.push(format!("node {id} is on or leads into a parent cycle"));
                break;
            }
        }
        if !reachable.contains(&id) || id == base {
            continue;
        }
        if cur != base {
            out.push(format!("node {id} does not reach the base"));
            continue;
        }
        if steps > n - 1 {
            out.push(format!("node {id} needs {steps} hops"));
        }
        if s.epoch != root.epoch {
            out.push(format!("node {id} epoch {} differs from base epoch {}", s.epoch, root.epoch));
        }
        let p = s.parent.expect("reaches base so has a parent");
        match (link_etx(id, p), states.get(&p)) {
            (Some(l), Some(ps)) if (l + ps.path_etx - s.path_etx).abs() <= 1e-9 => {}
            (Some(l), Some(ps)) => out.push(format!(
                "node {id}: path_etx {} != link {} + parent {}",
                s.path_etx, l, ps.path_etx
            )),
            _ => out.push(format!("node {id}: parent {p} is not a neighbor")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn advert(epoch: u64, path: f64, parent: Option<NodeId>) -> RouteAdvert {
        RouteAdvert { epoch, path_etx: path, parent, phase: WavePhase::Idle, wave_parent: None, initiator: 0 }
    }

    #[test]
    fn line_picks_upstream() {
        // A(base)=1, B=2, C=3 with perfect links
        let mut b = RoutingState::new(2, false);
        b.hear(1, advert(0, 0.0, None), 1.0, SimTime::ZERO);
        b.update_parent();
        assert_eq!(b.parent, Some(1));
        assert_eq!(b.path_etx, 1.0);
        let mut c = RoutingState::new(3, false);
        c.hear(2, b.advert(), 1.0, SimTime::ZERO);
        c.update_parent();
        assert_eq!(c.parent, Some(2));
        assert_eq!(c.path_etx, 2.0);
    }

    #[test]
    fn equal_cost_tie_goes_to_lower_id() {
        let mut s = RoutingState::new(9, false);
        s.hear(7, advert(0, 2.0, Some(1)), 1.0, SimTime::ZERO);
        s.hear(4, advert(0, 1.0, Some(1)), 2.0, SimTime::ZERO);
        s.update_parent();
        assert_eq!(s.parent, Some(4));
        assert_eq!(s.path_etx, 3.0);
    }

    #[test]
    fn monotonicity_guard_blocks_loops() {
        let mut s = RoutingState::new(5, false);
        s.path_etx = 2.0;
        s.hear(6, advert(0, 2.0, Some(1)), 1.0, SimTime::ZERO);
        s.hear(7, advert(0, 3.5, Some(1)), 1.0, SimTime::ZERO);
        assert_eq!(select_parent(&s), None);
        s.update_parent();
        assert_eq!(s.parent, None);
        assert!(s.path_etx.is_infinite());
    }

    #[test]
    fn own_child_is_never_parent() {
        let mut s = RoutingState::new(5, false);
        s.hear(6, advert(0, 1.0, Some(5)), 1.0, SimTime::ZERO);
        assert_eq!(select_parent(&s), None);
    }

    #[test]
    fn other_epoch_neighbors_ignored() {
        let mut s = RoutingState::new(5, false);
        s.epoch = 3;
        s.hear(6, advert(2, 1.0, Some(1)), 1.0, SimTime::ZERO);
        assert_eq!(select_parent(&s), None);
    }

    #[test]
    fn higher_epoch_adopted_and_state_cleared() {
        let mut s = RoutingState::new(5, false);
        s.parent = Some(6);
        s.path_etx = 2.0;
        assert!(s.hear(8, advert(4, 1.0, Some(1)), 1.0, SimTime::ZERO));
        assert_eq!(s.epoch, 4);
        assert_eq!(s.parent, None);
        assert_eq!(s.wave.phase, WavePhase::Propagate);
        assert_eq!(s.wave.wave_parent, Some(8));
        s.update_parent();
        assert_eq!(s.parent, Some(8));
    }

    #[test]
    fn base_outbids_higher_epoch() {
        let mut b = RoutingState::new(1, true);
        b.hear(2, advert(7, 3.0, None), 1.0, SimTime::ZERO);
        assert_eq!(b.epoch, 8);
        assert_eq!(b.wave.initiator, 1);
        b.update_parent();
        assert_eq!(b.path_etx, 0.0);
    }

    #[test]
    fn reset_moves_past_known_epochs() {
        let mut b = RoutingState::new(1, true);
        b.hear(2, advert(0, 1.0, Some(1)), 1.0, SimTime::ZERO);
        b.start_reset();
        assert_eq!(b.epoch, 1);
        assert_eq!(b.wave.phase, WavePhase::Propagate);
    }
}
