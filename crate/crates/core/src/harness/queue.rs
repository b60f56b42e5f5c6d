//! Time-ordered event queue with insertion-order tiebreak.

use std::collections::BTreeMap;

use crate::time::SimTime;

#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    events: BTreeMap<(SimTime, u64), E>,
    seq: u64,
    now: SimTime,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { events: BTreeMap::new(), seq: 0, now: SimTime::ZERO }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Schedules `event` at `at`; times in the past are clamped to now.
    pub fn push(&mut self, at: SimTime, event: E) {
        debug_assert!(at >= self.now, "event scheduled in the past: {at} < {}", self.now);
        let at = at.max(self.now);
        self.events.insert((at, self.seq), event);
        self.seq += 1;
    }

    /// Next event strictly before `horizon`, advancing the clock.
    pub fn pop_before(&mut self, horizon: SimTime) -> Option<(SimTime, E)> {
        let entry = self.events.first_entry()?;
        if entry.key().0 >= horizon {
            return None;
        }
        let ((t, _), e) = entry.remove_entry();
        self.now = t;
        Some((t, e))
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}
