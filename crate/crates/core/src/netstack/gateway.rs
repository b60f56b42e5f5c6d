//! Gateway JSON records: one object per datagram.
//!
//! Wire shape, in field order:
//! `{"node_id":u32,"kind":str,"seq":u64,"sim_time_ms":u64,"payload":{...}}`
//! where `kind` is one of `decision`, `spl`, `status`, `link_metrics` and the
//! payload object depends on the kind.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::{ToSocketAddrs, UdpSocket};

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use super::routing::NodeId;

pub const MAX_DATAGRAM_BYTES: usize = 512;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown record kind {0:?}")]
    UnknownKind(String),
    #[error("serialized record is {len} bytes, limit is {MAX_DATAGRAM_BYTES}")]
    Oversize { len: usize },
    #[error("malformed record: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionPayload {
    pub window_s: u32,
    /// Detected class label → count within the window.
    pub counts: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplPayload {
    pub laeq_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusPayload {
    pub uptime_s: u64,
    pub parent: Option<NodeId>,
    /// `None` while disconnected.
    pub path_etx: Option<f64>,
    pub epoch: u64,
    pub rx_freq_hz: u64,
    pub battery_wh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkMetricsPayload {
    pub src: NodeId,
    pub freq_hz: u64,
    pub interval: u32,
    pub tx: u32,
    pub rx: u32,
    pub noise_p95_dbm: Option<f64>,
    pub snr_p5_db: Option<f64>,
    pub rssi_p5_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GatewayPayload {
    Decision(DecisionPayload),
    Spl(SplPayload),
    Status(StatusPayload),
    LinkMetrics(LinkMetricsPayload),
}

impl GatewayPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Decision(_) => "decision",
            Self::Spl(_) => "spl",
            Self::Status(_) => "status",
            Self::LinkMetrics(_) => "link_metrics",
        }
    }

    pub fn from_kind(kind: &str, payload: serde_json::Value) -> Result<Self, GatewayError> {
        Ok(match kind {
            "decision" => Self::Decision(serde_json::from_value(payload)?),
            "spl" => Self::Spl(serde_json::from_value(payload)?),
            "status" => Self::Status(serde_json::from_value(payload)?),
            "link_metrics" => Self::LinkMetrics(serde_json::from_value(payload)?),
            other => return Err(GatewayError::UnknownKind(other.to_string())),
        })
    }
}

impl Serialize for GatewayPayload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Decision(p) => p.serialize(s),
            Self::Spl(p) => p.serialize(s),
            Self::Status(p) => p.serialize(s),
            Self::LinkMetrics(p) => p.serialize(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayRecord {
    pub node_id: NodeId,
    pub seq: u64,
    pub sim_time_ms: u64,
    pub payload: GatewayPayload,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    node_id: NodeId,
    kind: String,
    seq: u64,
    sim_time_ms: u64,
    payload: serde_json::Value,
}

impl Serialize for GatewayRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("GatewayRecord", 5)?;
        st.serialize_field("node_id", &self.node_id)?;
        st.serialize_field("kind", self.payload.kind())?;
        st.serialize_field("seq", &self.seq)?;
        st.serialize_field("sim_time_ms", &self.sim_time_ms)?;
        st.serialize_field("payload", &self.payload)?;
        st.end()
    }
}

impl GatewayRecord {
    /// Builds a record from a kind string and raw payload, rejecting kinds
    /// and payload shapes outside the schema.
    pub fn new(
        node_id: NodeId,
        kind: &str,
        seq: u64,
        sim_time_ms: u64,
        payload: serde_json::Value,
    ) -> Result<Self, GatewayError> {
        Ok(Self { node_id, seq, sim_time_ms, payload: GatewayPayload::from_kind(kind, payload)? })
    }

    pub fn kind(&self) -> &'static str {
        self.payload.kind()
    }
}

/// Serializes one record, enforcing the datagram size limit.
pub fn gateway_emit(record: &GatewayRecord) -> Result<String, GatewayError> {
    let s = serde_json::to_string(record)?;
    if s.len() > MAX_DATAGRAM_BYTES {
        return Err(GatewayError::Oversize { len: s.len() });
    }
    Ok(s)
}

pub fn parse_record(s: &str) -> Result<GatewayRecord, GatewayError> {
    let raw: RawRecord = serde_json::from_str(s)?;
    GatewayRecord::new(raw.node_id, &raw.kind, raw.seq, raw.sim_time_ms, raw.payload)
}

/// Sends records as UDP datagrams.
pub struct UdpSink {
    socket: UdpSocket,
}

impl UdpSink {
    pub fn connect<A: ToSocketAddrs>(target: A) -> Result<Self, GatewayError> {
        let socket = UdpSocket::bind("0.0.0.0:0")?;
        socket.connect(target)?;
        Ok(Self { socket })
    }

    pub fn send(&self, record: &GatewayRecord) -> Result<(), GatewayError> {
        let s = gateway_emit(record)?;
        self.socket.send(s.as_bytes())?;
        Ok(())
    }
}

/// Writes records one per line.
pub fn write_jsonl<W: Write>(mut w: W, records: &[GatewayRecord]) -> Result<(), GatewayError> {
    for r in records {
        writeln!(w, "{}", gateway_emit(r)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn spl_wire_format() {
        let r = GatewayRecord {
            node_id: 7,
            seq: 1,
            sim_time_ms: 1000,
            payload: GatewayPayload::Spl(SplPayload { laeq_db: 68.2 }),
        };
        assert_eq!(
            gateway_emit(&r).unwrap(),
            r#"{"node_id":7,"kind":"spl","seq":1,"sim_time_ms":1000,"payload":{"laeq_db":68.2}}"#
        );
    }

    #[test]
    fn status_roundtrip() {
        let r = GatewayRecord {
            node_id: 3,
            seq: 42,
            sim_time_ms: 3_600_000,
            payload: GatewayPayload::Status(StatusPayload {
                uptime_s: 3600,
                parent: Some(1),
                path_etx: Some(1.25),
                epoch: 2,
                rx_freq_hz: 903_500_000,
                battery_wh: 11.5,
            }),
        };
        assert_eq!(parse_record(&gateway_emit(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn unknown_kind_rejected() {
        let err = GatewayRecord::new(1, "telemetry", 0, 0, json!({})).unwrap_err();
        assert!(matches!(err, GatewayError::UnknownKind(k) if k == "telemetry"));
    }

    #[test]
    fn oversize_rejected() {
        let counts = (0..60).map(|i| (format!("class_{i:03}"), i)).collect();
        let r = GatewayRecord {
            node_id: 1,
            seq: 0,
            sim_time_ms: 0,
            payload: GatewayPayload::Decision(DecisionPayload { window_s: 60, counts }),
        };
        assert!(matches!(gateway_emit(&r), Err(GatewayError::Oversize { .. })));
    }

    #[test]
    fn udp_delivery() {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        let sink = UdpSink::connect(rx.local_addr().unwrap()).unwrap();
        let r = GatewayRecord {
            node_id: 2,
            seq: 5,
            sim_time_ms: 10,
            payload: GatewayPayload::Spl(SplPayload { laeq_db: 55.0 }),
        };
        sink.send(&r).unwrap();
        let mut buf = [0u8; 1024];
        let n = rx.recv(&mut buf).unwrap();
        assert_eq!(parse_record(std::str::from_utf8(&buf[..n]).unwrap()).unwrap(), r);
    }
}
