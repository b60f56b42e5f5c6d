//! Run results and their CSV / JSONL export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenario::ScenarioSpec;
use super::HarnessError;
use crate::energy::OutageEvent;
use crate::freqsel::csvio::write_metrics;
use crate::freqsel::LinkIntervalMetrics;
use crate::mac::RadioInterval;
use crate::netstack::gateway::write_jsonl;
use crate::netstack::{GatewayRecord, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    DroppedChannel,
    DroppedQueue,
    Undeliverable,
    /// Still queued when the run ended.
    InFlight,
}

impl Outcome {
    pub const ALL: [Outcome; 5] =
        [Self::Delivered, Self::DroppedChannel, Self::DroppedQueue, Self::Undeliverable, Self::InFlight];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub packet_id: u64,
    pub origin: NodeId,
    pub kind: String,
    pub created_s: f64,
    pub outcome: Outcome,
    pub end_s: Option<f64>,
    pub hops: u32,
}

impl PacketRecord {
    pub fn latency_s(&self) -> Option<f64> {
        (self.outcome == Outcome::Delivered).then(|| self.end_s.unwrap_or(self.created_s) - self.created_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: NodeId,
    pub role: String,
    pub x_m: f64,
    pub y_m: f64,
    pub generated: u64,
    pub delivered: u64,
    pub delivery_ratio: Option<f64>,
    pub latency_p50_s: Option<f64>,
    pub latency_p95_s: Option<f64>,
    pub duty_cycle: f64,
    pub tx_s: f64,
    pub rx_s: f64,
    pub radio_tx_j: f64,
    pub radio_rx_j: f64,
    pub frontend_j: f64,
    pub inference_j: f64,
    pub idle_j: f64,
    pub total_j: f64,
    pub rx_freq_hz: u64,
    pub parent: Option<NodeId>,
    pub path_etx: Option<f64>,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub t_s: f64,
    pub scope: String,
    pub node: NodeId,
    pub method: String,
    pub freq_hz: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageRow {
    pub node_id: NodeId,
    pub start_h: f64,
    pub end_h: Option<f64>,
}

impl OutageRow {
    pub fn new(node_id: NodeId, e: &OutageEvent) -> Self {
        Self { node_id, start_h: e.start_h, end_h: e.end_h }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Fully defaulted scenario that produced this report.
    pub scenario: ScenarioSpec,
    pub horizon_s: f64,
    pub link_metrics: Vec<LinkIntervalMetrics>,
    pub nodes: Vec<NodeSummary>,
    pub packets: Vec<PacketRecord>,
    pub gateway: Vec<GatewayRecord>,
    /// Radio-on intervals; listen windows only when the scenario asks for them.
    pub radio_trace: Vec<RadioInterval>,
    pub selections: Vec<SelectionEvent>,
    pub outages: Vec<OutageRow>,
}

impl MetricsReport {
    pub fn outcome_counts(&self) -> BTreeMap<Outcome, u64> {
        let mut out: BTreeMap<Outcome, u64> = Outcome::ALL.iter().map(|&o| (o, 0)).collect();
        for p in &self.packets {
            *out.entry(p.outcome).or_default() += 1;
        }
        out
    }

    /// Delivered over packets with a final outcome created in `[t0, t1)`.
    pub fn delivery_ratio_between(&self, t0: f64, t1: f64) -> Option<f64> {
        let (mut done, mut ok) = (0u64, 0u64);
        for p in self.packets.iter().filter(|p| p.created_s >= t0 && p.created_s < t1 && p.outcome != Outcome::InFlight) {
            done += 1;
            ok += u64::from(p.outcome == Outcome::Delivered);
        }
        (done > 0).then(|| ok as f64 / done as f64)
    }

    pub fn delivery_ratio(&self) -> Option<f64> {
        self.delivery_ratio_between(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Mean per-node radio duty cycle.
    pub fn mean_duty_cycle(&self) -> Option<f64> {
        (!self.nodes.is_empty()).then(|| self.nodes.iter().map(|n| n.duty_cycle).sum::<f64>() / self.nodes.len() as f64)
    }

    /// Last frequency chosen by a network-wide selection, if any.
    pub fn final_global_selection(&self) -> Option<u64> {
        self.selections.iter().rev().find(|s| s.scope == "global").map(|s| s.freq_hz)
    }
}

#[derive(Serialize)]
struct TraceRow {
    node_id: NodeId,
    t_on_us: u64,
    t_off_us: u64,
    freq_hz: u64,
    mode: &'static str,
}

fn csv_file<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    w.write_record(header).map_err(|e| HarnessError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub const NODES_HEADER: &[&str] = &[
    "node_id", "role", "x_m", "y_m", "generated", "delivered", "delivery_ratio", "latency_p50_s", "latency_p95_s",
    "duty_cycle", "tx_s", "rx_s", "radio_tx_j", "radio_rx_j", "frontend_j", "inference_j", "idle_j", "total_j",
    "rx_freq_hz", "parent", "path_etx", "epoch",
];
pub const PACKETS_HEADER: &[&str] = &["packet_id", "origin", "kind", "created_s", "outcome", "end_s", "hops"];
pub const TRACE_HEADER: &[&str] = &["node_id", "t_on_us", "t_off_us", "freq_hz", "mode"];
pub const SELECTIONS_HEADER: &[&str] = &["t_s", "scope", "node", "method", "freq_hz"];
pub const OUTAGES_HEADER: &[&str] = &["node_id", "start_h", "end_h"];

/// Writes every result file into `dir` and returns their paths.
pub fn export(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let p = |name: &str| dir.join(name);
    let mut written = Vec::new();

    let lm = p("link_metrics.csv");
    write_metrics(BufWriter::new(File::create(&lm)?), &report.link_metrics)?;
    written.push(lm);

    csv_file(&p("nodes.csv"), NODES_HEADER, &report.nodes)?;
    written.push(p("nodes.csv"));
    csv_file(&p("packets.csv"), PACKETS_HEADER, &report.packets)?;
    written.push(p("packets.csv"));

    let trace: Vec<TraceRow> = report
        .radio_trace
        .iter()
        .map(|iv| TraceRow {
            node_id: iv.node_id,
            t_on_us: iv.t_on.micros(),
            t_off_us: iv.t_off.micros(),
            freq_hz: iv.freq_hz,
            mode: iv.mode.as_str(),
        })
        .collect();
    csv_file(&p("radio_trace.csv"), TRACE_HEADER, &trace)?;
    written.push(p("radio_trace.csv"));
    csv_file(&p("selections.csv"), SELECTIONS_HEADER, &report.selections)?;
    written.push(p("selections.csv"));
    csv_file(&p("outages.csv"), OUTAGES_HEADER, &report.outages)?;
    written.push(p("outages.csv"));

    let gw = p("gateway.jsonl");
    let mut f = BufWriter::new(File::create(&gw)?);
    write_jsonl(&mut f, &report.gateway)?;
    f.flush()?;
    written.push(gw);

    let echo = p("scenario.resolved.toml");
    std::fs::write(&echo, report.scenario.to_toml()?)?;
    written.push(echo);
    Ok(written)
}
