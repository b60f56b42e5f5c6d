use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use lorasim::freqsel::csvio::read_metrics_file;
use lorasim::freqsel::select::{lowpower_select, offline_select, online_select, RankedFrequency};
use lorasim::freqsel::cluster::{DEFAULT_K, DEFAULT_RESTARTS};
use lorasim::freqsel::{cluster_links, LinkWeighting, NoiseTerm, Scope, ScoreOptions};
use tracing::info;

use crate::output::csv_writer;

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MethodArg {
    Offline,
    Online,
    Lowpower,
}

#[derive(Args, Debug)]
pub struct FreqselArgs {
    /// Link-metrics CSV (link_id,freq_hz,interval,noise_p95_dbm,snr_p5_db,rssi_p5_dbm,tx,rx).
    input: PathBuf,
    #[arg(long, value_enum, default_value = "online")]
    method: MethodArg,
    /// Shortlist size for the low-power method.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// network, or node:<id> for the links into one receiver.
    #[arg(long, default_value = "network")]
    scope: Scope,
    #[arg(long, default_value = "inverted")]
    noise_term: NoiseTerm,
    #[arg(long, default_value = "per_link")]
    link_weighting: LinkWeighting,
    /// Only use the most recent N intervals.
    #[arg(long)]
    n_intervals: Option<u32>,
    /// Offline candidate frequencies in Hz (default: every frequency in the input).
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<u64>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn main(a: FreqselArgs) -> anyhow::Result<()> {
    let records = read_metrics_file(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let opts = ScoreOptions { noise_term: a.noise_term, link_weighting: a.link_weighting, n_intervals: a.n_intervals };
    let mut noise: Vec<(u64, f64)> = Vec::new();
    let sel = match a.method {
        MethodArg::Online => online_select(&records, a.scope, &opts)?,
        MethodArg::Offline => {
            let candidates: Vec<u64> = if a.candidates.is_empty() {
                records.iter().map(|m| m.freq_hz).collect::<BTreeSet<_>>().into_iter().collect()
            } else {
                a.candidates.clone()
            };
            offline_select(&records, &candidates)?
        }
        MethodArg::Lowpower => {
            let lp = lowpower_select(&records, a.k, a.scope, &opts)?;
            noise = lp.shortlist;
            lp.selection
        }
    };
    if !sel.excluded.is_empty() {
        info!(excluded = ?sel.excluded, "frequencies without usable records");
    }

    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["rank", "freq_hz", "score", "links", "records", "shortlist_noise_norm", "chosen"])?;
    for (i, RankedFrequency { freq_hz, score, links, records }) in sel.ranking.iter().enumerate() {
        let n = noise.iter().find(|(f, _)| f == freq_hz).map(|(_, v)| v.to_string()).unwrap_or_default();
        w.write_record([
            (i + 1).to_string(),
            freq_hz.to_string(),
            score.to_string(),
            links.to_string(),
            records.to_string(),
            n,
            (*freq_hz == sel.freq_hz).to_string(),
        ])?;
    }
    w.flush()?;
    eprintln!("chosen frequency: {} Hz", sel.freq_hz);
    Ok(())
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Link-metrics CSV.
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cluster(a: ClusterArgs) -> anyhow::Result<()> {
    let records = read_metrics_file(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (idx, c) = cluster_links(&records, a.k, a.restarts, a.seed)?;
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record([
        "row", "link_id", "freq_hz", "interval", "noise", "snr", "rssi", "prr", "cluster", "label",
    ])?;
    for (j, &i) in idx.iter().enumerate() {
        let m = &records[i];
        let f = c.features[j];
        w.write_record([
            i.to_string(),
            m.link_id.to_string(),
            m.freq_hz.to_string(),
            m.interval.to_string(),
            f[0].to_string(),
            f[1].to_string(),
            f[2].to_string(),
            f[3].to_string(),
            c.run.assignments[j].to_string(),
            c.point_label(j).as_str().to_string(),
        ])?;
    }
    w.flush()?;
    info!(points = idx.len(), inertia = c.run.inertia, "clustered");
    Ok(())
}
