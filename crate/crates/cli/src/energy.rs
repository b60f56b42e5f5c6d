use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use lorasim::energy::{
    daily_harvest, simulate_soc, storage_requirement, total_power, EnergyState, HarvestTrace, HarvesterSpec,
    PowerProfile, SocParams,
};
use serde::Deserialize;
use tracing::info;

use crate::output::{csv_writer, opt};

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("action").required(true).args(["sizing", "simulate"]))]
pub struct EnergyArgs {
    /// Print the storage and harvest arithmetic.
    #[arg(long)]
    sizing: bool,
    /// Simulate battery charge over a harvest CSV (day,peak_sun_hours).
    #[arg(long, value_name = "HARVEST_CSV")]
    simulate: Option<PathBuf>,
    /// Node load in mW (default: the 100 mW budget for sizing, the
    /// modeled node draw for simulation).
    #[arg(long)]
    load_mw: Option<f64>,
    /// Hours of autonomy without sun.
    #[arg(long, default_value_t = 72.0)]
    hours: f64,
    /// Battery-to-load efficiency used for sizing.
    #[arg(long, default_value_t = 0.8)]
    efficiency: f64,
    #[arg(long, default_value_t = 5.0)]
    panel_w: f64,
    /// Peak sun hours per day for sizing.
    #[arg(long, default_value_t = 3.0)]
    sun_hours: f64,
    /// Panel-to-battery conversion efficiency.
    #[arg(long, default_value_t = 0.8)]
    conversion: f64,
    /// Battery capacity for simulation (default: the sized requirement).
    #[arg(long)]
    capacity_wh: Option<f64>,
    /// Initial state of charge in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    initial_soc: f64,
    #[arg(long, default_value_t = 1.0)]
    step_h: f64,
    /// Simulated days (default: one pass over the CSV).
    #[arg(long)]
    days: Option<f64>,
    /// Write the SOC trace here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

const BUDGET_MW: f64 = 100.0;

#[derive(Deserialize)]
struct HarvestRow {
    day: u32,
    peak_sun_hours: f64,
}

fn read_harvest(path: &Path) -> anyhow::Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<HarvestRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    rows.sort_by_key(|r| r.day);
    if let Some(w) = rows.windows(2).find(|w| w[0].day == w[1].day) {
        bail!("day {} appears twice", w[0].day);
    }
    if rows.is_empty() {
        bail!("no harvest rows");
    }
    Ok(rows.into_iter().map(|r| r.peak_sun_hours).collect())
}

pub fn main(a: EnergyArgs) -> anyhow::Result<()> {
    let budget_w = a.load_mw.unwrap_or(BUDGET_MW) * 1e-3;
    let storage = storage_requirement(budget_w, a.hours, a.efficiency)?;
    if a.sizing {
        return sizing(&a, budget_w, storage);
    }
    let load_w = a.load_mw.unwrap_or_else(|| total_power(&PowerProfile::default())) * 1e-3;
    let path = a.simulate.as_deref().expect("clap enforces one action");
    let days = read_harvest(path).with_context(|| format!("reading {}", path.display()))?;
    let harvester = HarvesterSpec { panel_w: a.panel_w, peak_sun_hours_per_day: a.sun_hours, conversion_efficiency: a.conversion };
    let capacity = a.capacity_wh.unwrap_or(storage);
    if !(0.0..=1.0).contains(&a.initial_soc) {
        bail!("initial SOC {} outside [0, 1]", a.initial_soc);
    }
    let state = EnergyState::new(capacity, capacity * a.initial_soc)?;
    let params = SocParams { step_h: a.step_h, horizon_days: a.days.unwrap_or(days.len() as f64), ..SocParams::default() };
    let run = simulate_soc(&state, load_w, &harvester, &HarvestTrace::Daily(days), &params)?;

    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["t_h", "battery_wh", "soc", "up"])?;
    for s in &run.samples {
        w.write_record([s.t_h.to_string(), s.battery_wh.to_string(), s.soc.to_string(), s.up.to_string()])?;
    }
    w.flush()?;
    for o in &run.outages {
        info!(start_h = o.start_h, end_h = opt(o.end_h), "outage");
    }
    eprintln!(
        "outages: {}, harvested {:.3} Wh, consumed {:.3} Wh, spilled {:.3} Wh",
        run.outages.len(),
        run.ledger.harvested_wh,
        run.ledger.consumed_wh,
        run.ledger.spilled_wh
    );
    Ok(())
}

fn sizing(a: &EnergyArgs, load_w: f64, storage: f64) -> anyhow::Result<()> {
    let h = HarvesterSpec { panel_w: a.panel_w, peak_sun_hours_per_day: a.sun_hours, conversion_efficiency: a.conversion };
    h.validate()?;
    let raw = daily_harvest(&h);
    let stored = raw * a.conversion;
    let need = load_w * 24.0;
    let mut w = csv_writer(None)?;
    w.write_record(["quantity", "value", "unit", "formula"])?;
    let rows = [
        ("load", load_w, "W", String::new()),
        ("storage_requirement", storage, "Wh", format!("{load_w} W x {} h / {}", a.hours, a.efficiency)),
        ("daily_harvest", raw, "Wh", format!("{} W x {} h", a.panel_w, a.sun_hours)),
        ("daily_harvest_stored", stored, "Wh", format!("{raw} Wh x {}", a.conversion)),
        ("daily_load", need, "Wh", format!("{load_w} W x 24 h")),
        ("daily_surplus", stored - need, "Wh", "daily_harvest_stored - daily_load".to_string()),
    ];
    for (q, v, u, f) in rows {
        w.write_record([q.to_string(), v.to_string(), u.to_string(), f])?;
    }
    w.flush()?;
    Ok(())
}
