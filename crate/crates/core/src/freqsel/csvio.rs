//! Link-metrics CSV: `link_id,freq_hz,interval,noise_p95_dbm,snr_p5_db,rssi_p5_dbm,tx,rx`.
//! Absent percentiles are empty cells.

use std::io::{Read, Write};
use std::path::Path;

use super::metrics::LinkIntervalMetrics;
use super::FreqselError;

pub const HEADER: [&str; 8] = ["link_id", "freq_hz", "interval", "noise_p95_dbm", "snr_p5_db", "rssi_p5_dbm", "tx", "rx"];

pub fn write_metrics<W: Write>(w: W, records: &[LinkIntervalMetrics]) -> Result<(), FreqselError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(HEADER)?;
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<LinkIntervalMetrics>, FreqselError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(FreqselError::BadHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let m: LinkIntervalMetrics = rec?;
        m.validate()?;
        out.push(m);
    }
    Ok(out)
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<LinkIntervalMetrics>, FreqselError> {
    read_metrics(std::fs::File::open(path)?)
}
