//! Windowed ETX link estimation.

use std::collections::VecDeque;

pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_ETX_CAP: f64 = 16.0;

/// attempts / successes, capped; zero successes yield the cap.
pub fn etx_update(successes: u32, attempts: u32, cap: f64) -> f64 {
    debug_assert!(attempts >= successes);
    if successes == 0 {
        return cap;
    }
    (f64::from(attempts) / f64::from(successes)).min(cap)
}

/// Sliding window of unicast outcomes on one outgoing link.
#[derive(Debug, Clone)]
pub struct LinkEstimator {
    window: usize,
    cap: f64,
    history: VecDeque<bool>,
}

impl Default for LinkEstimator {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW, DEFAULT_ETX_CAP)
    }
}

impl LinkEstimator {
    pub fn new(window: usize, cap: f64) -> Self {
        Self { window: window.max(1), cap, history: VecDeque::with_capacity(window) }
    }

    pub fn record(&mut self, success: bool) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(success);
    }

    pub fn attempts(&self) -> u32 {
        self.history.len() as u32
    }

    /// `None` until at least one attempt has been made.
    pub fn etx(&self) -> Option<f64> {
        if self.history.is_empty() {
            return None;
        }
        let ok = self.history.iter().filter(|&&s| s).count() as u32;
        Some(etx_update(ok, self.attempts(), self.cap))
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn etx_examples() {
        assert_eq!(etx_update(32, 32, 16.0), 1.0);
        assert_eq!(etx_update(16, 32, 16.0), 2.0);
        assert_eq!(etx_update(0, 32, 16.0), 16.0);
        assert_eq!(etx_update(1, 32, 16.0), 16.0);
    }

    #[test]
    fn estimator_window_slides() {
        let mut e = LinkEstimator::new(4, 16.0);
        assert_eq!(e.etx(), None);
        for _ in 0..4 {
            e.record(false);
        }
        assert_eq!(e.etx(), Some(16.0));
        for _ in 0..4 {
            e.record(true);
        }
        assert_eq!(e.etx(), Some(1.0));
        e.record(false);
        e.record(false);
        assert_eq!(e.etx(), Some(2.0));
        assert_eq!(e.attempts(), 4);
    }
}
