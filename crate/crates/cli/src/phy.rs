use clap::{Args, Subcommand, ValueEnum};
use lorasim::phy::{
    airtime, data_rate, fcc_check, sensitivity, AccessMode, Bandwidth, ChannelPlan, CodingRate, DwellEntry, DwellLimit,
    RadioConfig, SpreadingFactor,
};

use crate::output::csv_writer;

#[derive(Args, Debug)]
pub struct PhyArgs {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    radio: RadioArgs,
}

#[derive(Args, Debug)]
struct RadioArgs {
    /// Bandwidth in Hz (125000, 250000 or 500000).
    #[arg(long, global = true, default_value_t = 500_000)]
    bw: u32,
    #[arg(long, global = true, default_value_t = 8)]
    sf: u8,
    /// Coding rate as 4/5..4/8 or the denominator alone.
    #[arg(long, global = true, default_value = "4/5")]
    cr: String,
    /// Transmit power in dBm.
    #[arg(long, global = true, default_value_t = 27.0, allow_negative_numbers = true)]
    power: f64,
    /// Payload length in bytes.
    #[arg(long, global = true, default_value_t = 32)]
    payload: usize,
    /// Receiver noise figure in dB.
    #[arg(long, global = true, default_value_t = 6.0)]
    nf: f64,
    /// Center frequency in Hz.
    #[arg(long, global = true, default_value_t = 915.0e6)]
    freq: f64,
    /// Machine-readable CSV instead of bare values.
    #[arg(long, global = true)]
    csv: bool,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Raw bit rate in bit/s.
    Datarate,
    /// Time on air for one packet in seconds.
    Airtime,
    /// Receiver sensitivity in dBm.
    Sensitivity,
    /// Check a configuration against the 902-928 MHz rules.
    Fcc(FccArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Single,
    Hopping,
}

#[derive(Args, Debug)]
struct FccArgs {
    #[arg(long, value_enum, default_value = "single")]
    mode: ModeArg,
    /// Hopping channel count (contiguous channels of the given bandwidth).
    #[arg(long, default_value_t = 25)]
    channels: usize,
    /// Packets per channel within one dwell window.
    #[arg(long, default_value_t = 1)]
    packets_per_window: u32,
}

fn config(r: &RadioArgs) -> anyhow::Result<RadioConfig> {
    let cr = match r.cr.parse::<u8>() {
        Ok(d) => CodingRate::try_from(d)?,
        Err(_) => CodingRate::parse(&r.cr)?,
    };
    Ok(RadioConfig::new(r.freq, Bandwidth::try_from(r.bw)?, SpreadingFactor::new(r.sf)?, cr, r.power)?)
}

fn emit(r: &RadioArgs, cfg: &RadioConfig, name: &str, value: f64) -> anyhow::Result<()> {
    if r.csv {
        let mut w = csv_writer(None)?;
        w.write_record(["bw_hz", "sf", "cr", "power_dbm", "payload_bytes", "nf_db", name])?;
        w.write_record([
            cfg.bandwidth().hz().to_string(),
            cfg.spreading_factor().value().to_string(),
            cfg.coding_rate().to_string(),
            cfg.tx_power_dbm().to_string(),
            r.payload.to_string(),
            r.nf.to_string(),
            value.to_string(),
        ])?;
        w.flush()?;
    } else {
        println!("{value}");
    }
    Ok(())
}

pub fn main(a: PhyArgs) -> anyhow::Result<()> {
    let r = &a.radio;
    let cfg = config(r)?;
    match &a.verb {
        Verb::Datarate => emit(r, &cfg, "data_rate_bps", data_rate(&cfg)),
        Verb::Airtime => emit(r, &cfg, "airtime_s", airtime(&cfg, r.payload)?),
        Verb::Sensitivity => emit(r, &cfg, "sensitivity_dbm", sensitivity(&cfg, r.nf)),
        Verb::Fcc(f) => fcc(r, &cfg, f),
    }
}

fn fcc(r: &RadioArgs, cfg: &RadioConfig, f: &FccArgs) -> anyhow::Result<()> {
    let (mode, plan) = match f.mode {
        ModeArg::Single => (AccessMode::SingleFrequency, ChannelPlan::default()),
        ModeArg::Hopping => (AccessMode::Hopping, ChannelPlan::contiguous(f.channels, u64::from(cfg.bandwidth().hz()))?),
    };
    let on_air = airtime(cfg, r.payload)? * f64::from(f.packets_per_window);
    let dwell: Vec<DwellEntry> = match mode {
        AccessMode::Hopping => plan.frequencies_hz.iter().map(|&freq_hz| DwellEntry { freq_hz, on_air_s: on_air }).collect(),
        AccessMode::SingleFrequency => Vec::new(),
    };
    let verdict = fcc_check(cfg, &plan, mode, &dwell, DwellLimit::default());
    if r.csv {
        let mut w = csv_writer(None)?;
        w.write_record(["compliant", "rule", "reason"])?;
        if verdict.compliant() {
            w.write_record(["true", "", ""])?;
        }
        for v in &verdict.violations {
            w.write_record(["false", v.rule.id(), &v.reason])?;
        }
        w.flush()?;
    } else if verdict.compliant() {
        println!("compliant");
    } else {
        for v in &verdict.violations {
            println!("{}: {}", v.rule.id(), v.reason);
        }
    }
    Ok(())
}
