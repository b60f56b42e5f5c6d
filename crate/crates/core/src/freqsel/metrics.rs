//! Per-(link, frequency, interval) link metrics and their aggregation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::FreqselError;
use crate::netstack::NodeId;

/// Directed link. A self-link (`src == dst`) carries passive noise scans at
/// `dst` with no packet traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId {
    pub src: NodeId,
    pub dst: NodeId,
}

impl LinkId {
    pub fn new(src: NodeId, dst: NodeId) -> Self {
        Self { src, dst }
    }

    pub fn scan(node: NodeId) -> Self {
        Self { src: node, dst: node }
    }

    pub fn is_scan(&self) -> bool {
        self.src == self.dst
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.dst)
    }
}

impl FromStr for LinkId {
    type Err = FreqselError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FreqselError::BadLinkId(s.to_string());
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        Ok(Self { src: a.trim().parse().map_err(|_| bad())?, dst: b.trim().parse().map_err(|_| bad())? })
    }
}

impl Serialize for LinkId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LinkId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Metrics for one link on one frequency over one 10 s interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkIntervalMetrics {
    pub link_id: LinkId,
    pub freq_hz: u64,
    pub interval: u32,
    pub noise_p95_dbm: Option<f64>,
    pub snr_p5_db: Option<f64>,
    pub rssi_p5_dbm: Option<f64>,
    pub tx: u32,
    pub rx: u32,
}

impl LinkIntervalMetrics {
    pub fn prr(&self) -> Option<f64> {
        (self.tx > 0).then(|| f64::from(self.rx) / f64::from(self.tx))
    }

    pub fn validate(&self) -> Result<(), FreqselError> {
        if self.rx > self.tx {
            return Err(FreqselError::InvalidRecord(format!(
                "{} @ {} interval {}: rx {} > tx {}",
                self.link_id, self.freq_hz, self.interval, self.rx, self.tx
            )));
        }
        Ok(())
    }
}

/// Nearest-rank percentile, `p` in (0, 100]. `None` for an empty slice.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Raw observations for one (link, frequency, interval).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalSamples {
    pub noise_dbm: Vec<f64>,
    pub rx_rssi_dbm: Vec<f64>,
    pub rx_snr_db: Vec<f64>,
    pub attempts: u32,
    pub successes: u32,
}

impl IntervalSamples {
    pub fn record_noise(&mut self, dbm: f64) {
        self.noise_dbm.push(dbm);
    }

    pub fn record_attempt(&mut self, received: Option<(f64, f64)>) {
        self.attempts += 1;
        if let Some((rssi, snr)) = received {
            self.successes += 1;
            self.rx_rssi_dbm.push(rssi);
            self.rx_snr_db.push(snr);
        }
    }
}

pub fn aggregate_interval(link_id: LinkId, freq_hz: u64, interval: u32, s: &IntervalSamples) -> LinkIntervalMetrics {
    LinkIntervalMetrics {
        link_id,
        freq_hz,
        interval,
        noise_p95_dbm: percentile(&s.noise_dbm, 95.0),
        snr_p5_db: percentile(&s.rx_snr_db, 5.0),
        rssi_p5_dbm: percentile(&s.rx_rssi_dbm, 5.0),
        tx: s.attempts,
        rx: s.successes,
    }
}

/// Min-max scaling to [0, 1]; a constant input maps to 0.5 everywhere.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(values.iter().copied());
    values.iter().map(|&v| scale(v, lo, hi)).collect()
}

pub(crate) fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub(crate) fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}
