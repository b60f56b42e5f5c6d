use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use lorasim::harness::{self, export, load_scenario, MetricsReport, Outcome, ScenarioSpec};
use lorasim::netstack::gateway::UdpSink;
use tracing::{info, warn};

use crate::output::{csv_writer, opt};

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Output directory for the CSV/JSONL results.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also stream gateway records as UDP datagrams to host:port.
    #[arg(long, value_name = "HOST:PORT")]
    udp: Option<String>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run this many consecutive seeds in parallel, one subdirectory each.
    #[arg(long, value_name = "N", conflicts_with = "udp")]
    sweep: Option<u64>,
}

const SUMMARY_HEADER: [&str; 8] =
    ["seed", "packets", "delivered", "delivery_ratio", "mean_duty_cycle", "selections", "final_freq_hz", "out_dir"];

fn summary_row(seed: u64, r: &MetricsReport, dir: &Path) -> Vec<String> {
    let counts = r.outcome_counts();
    vec![
        seed.to_string(),
        r.packets.len().to_string(),
        counts[&Outcome::Delivered].to_string(),
        opt(r.delivery_ratio()),
        opt(r.mean_duty_cycle()),
        r.selections.len().to_string(),
        r.final_global_selection().map(|f| f.to_string()).unwrap_or_default(),
        dir.display().to_string(),
    ]
}

fn run_one(spec: &ScenarioSpec, dir: &Path, udp: Option<&str>) -> anyhow::Result<MetricsReport> {
    let report = match udp {
        Some(target) => {
            let sink = UdpSink::connect(target).with_context(|| format!("connecting UDP sink {target}"))?;
            let mut failures = 0u64;
            let mut hook = |rec: &lorasim::netstack::GatewayRecord| {
                if let Err(e) = sink.send(rec) {
                    if failures == 0 {
                        warn!(error = %e, "UDP send failed");
                    }
                    failures += 1;
                }
            };
            let r = harness::run_with(spec, &mut hook)?;
            if failures > 0 {
                warn!(failures, "some gateway datagrams were not sent");
            }
            r
        }
        None => harness::run(spec)?,
    };
    let files = export(&report, dir).with_context(|| format!("exporting to {}", dir.display()))?;
    info!(files = files.len(), dir = %dir.display(), "results written");
    Ok(report)
}

pub fn main(a: RunArgs) -> anyhow::Result<()> {
    let mut spec = load_scenario(&a.scenario).with_context(|| format!("loading {}", a.scenario.display()))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate()?;

    let mut w = csv_writer(None)?;
    w.write_record(SUMMARY_HEADER)?;
    match a.sweep {
        None => {
            let r = run_one(&spec, &a.out, a.udp.as_deref())?;
            w.write_record(summary_row(spec.seed, &r, &a.out))?;
        }
        Some(0) => bail!("--sweep must be at least 1"),
        Some(n) => {
            let jobs: Vec<(u64, PathBuf)> =
                (0..n).map(|i| spec.seed.wrapping_add(i)).map(|s| (s, a.out.join(format!("seed_{s}")))).collect();
            let results: Vec<anyhow::Result<MetricsReport>> = std::thread::scope(|scope| {
                let handles: Vec<_> = jobs
                    .iter()
                    .map(|(seed, dir)| {
                        let mut s = spec.clone();
                        s.seed = *seed;
                        scope.spawn(move || run_one(&s, dir, None))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
            });
            for ((seed, dir), r) in jobs.iter().zip(results) {
                let r = r.with_context(|| format!("seed {seed}"))?;
                w.write_record(summary_row(*seed, &r, dir))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
