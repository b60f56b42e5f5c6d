//! Node power budget, solar harvest and battery state of charge, and cell
//! balancing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SERIES_CELLS: usize = 4;
pub const DEFAULT_CAPACITY_WH: f64 = 12.0;
pub const DEFAULT_RESTART_FRACTION: f64 = 0.05;
/// Pairwise spread above which balancing starts.
pub const BALANCE_TRIGGER_V: f64 = 0.100;
/// Cells this close to the highest cell are discharged.
pub const BALANCE_BAND_V: f64 = 0.010;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("efficiency {0} outside (0, 1]")]
    Efficiency(f64),
    #[error("{field} must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("step {0} h outside (0, 1]")]
    Step(f64),
    #[error("peak sun hours {0} outside [0, 24]")]
    SunHours(f64),
    #[error("capacity must be positive, got {0}")]
    Capacity(f64),
}

fn check_eff(e: f64) -> Result<(), EnergyError> {
    if e > 0.0 && e <= 1.0 {
        Ok(())
    } else {
        Err(EnergyError::Efficiency(e))
    }
}

fn check_nonneg(field: &'static str, value: f64) -> Result<(), EnergyError> {
    if value >= 0.0 {
        Ok(())
    } else {
        Err(EnergyError::Negative { field, value })
    }
}

/// Average draw of the non-radio subsystems plus the networking budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerProfile {
    pub frontend_mw: f64,
    pub network_mw: f64,
    /// Back-solved from the 107 mW total: (107 - 6 - 15) / 0.25.
    pub inference_active_mw: f64,
    pub inference_duty: f64,
    pub idle_mw: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self { frontend_mw: 6.0, network_mw: 15.0, inference_active_mw: 344.0, inference_duty: 0.25, idle_mw: 0.0 }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<(), EnergyError> {
        check_nonneg("frontend_mw", self.frontend_mw)?;
        check_nonneg("network_mw", self.network_mw)?;
        check_nonneg("inference_active_mw", self.inference_active_mw)?;
        check_nonneg("idle_mw", self.idle_mw)?;
        if !(0.0..=1.0).contains(&self.inference_duty) {
            return Err(EnergyError::Efficiency(self.inference_duty));
        }
        Ok(())
    }

    /// Draw excluding the networking budget, in mW.
    pub fn non_network_mw(&self) -> f64 {
        self.frontend_mw + self.inference_duty * self.inference_active_mw + self.idle_mw
    }
}

pub fn total_power(p: &PowerProfile) -> f64 {
    p.frontend_mw + p.network_mw + p.inference_duty * p.inference_active_mw + p.idle_mw
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvesterSpec {
    pub panel_w: f64,
    pub peak_sun_hours_per_day: f64,
    pub conversion_efficiency: f64,
}

impl Default for HarvesterSpec {
    fn default() -> Self {
        Self { panel_w: 5.0, peak_sun_hours_per_day: 3.0, conversion_efficiency: 0.8 }
    }
}

impl HarvesterSpec {
    pub fn validate(&self) -> Result<(), EnergyError> {
        check_nonneg("panel_w", self.panel_w)?;
        check_eff(self.conversion_efficiency)?;
        if !(0.0..=24.0).contains(&self.peak_sun_hours_per_day) {
            return Err(EnergyError::SunHours(self.peak_sun_hours_per_day));
        }
        Ok(())
    }
}

/// Storage needed to carry `load_w` for `hours` through a path of the given
/// efficiency.
pub fn storage_requirement(load_w: f64, hours: f64, efficiency: f64) -> Result<f64, EnergyError> {
    check_eff(efficiency)?;
    Ok(load_w * hours / efficiency)
}

/// Panel output per day before conversion losses.
pub fn daily_harvest(spec: &HarvesterSpec) -> f64 {
    spec.panel_w * spec.peak_sun_hours_per_day
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadioMode {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioPower {
    pub tx_w: f64,
    pub rx_w: f64,
}

impl Default for RadioPower {
    fn default() -> Self {
        Self { tx_w: 2.2, rx_w: 0.04 }
    }
}

impl RadioPower {
    pub fn watts(&self, mode: RadioMode) -> f64 {
        match mode {
            RadioMode::Tx => self.tx_w,
            RadioMode::Rx => self.rx_w,
        }
    }
}

/// Joules spent with the radio in `mode` for `airtime_s`.
pub fn radio_energy(airtime_s: f64, mode: RadioMode, power: &RadioPower) -> f64 {
    airtime_s.max(0.0) * power.watts(mode)
}

/// Marks every cell within 10 mV of the highest for discharge when the
/// pack spread exceeds 100 mV.
pub fn balance_step(cells: &[f64; SERIES_CELLS]) -> [bool; SERIES_CELLS] {
    let max = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = cells.iter().copied().fold(f64::INFINITY, f64::min);
    // tolerance absorbs decimal voltages that are not exact in binary
    if max - min <= BALANCE_TRIGGER_V + 1e-9 {
        return [false; SERIES_CELLS];
    }
    cells.map(|v| v >= max - BALANCE_BAND_V - 1e-9)
}

/// Open-circuit voltage of one lithium-titanate cell at a state of charge.
pub fn lto_cell_voltage(soc: f64) -> f64 {
    1.8 + 0.9 * soc.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub battery_wh: f64,
    pub capacity_wh: f64,
    pub cell_voltages_v: [f64; SERIES_CELLS],
    pub balancing_active: [bool; SERIES_CELLS],
}

impl EnergyState {
    pub fn new(capacity_wh: f64, battery_wh: f64) -> Result<Self, EnergyError> {
        if capacity_wh <= 0.0 || capacity_wh.is_nan() {
            return Err(EnergyError::Capacity(capacity_wh));
        }
        check_nonneg("battery_wh", battery_wh)?;
        let battery_wh = battery_wh.min(capacity_wh);
        let v = lto_cell_voltage(battery_wh / capacity_wh);
        Ok(Self { battery_wh, capacity_wh, cell_voltages_v: [v; SERIES_CELLS], balancing_active: [false; SERIES_CELLS] })
    }

    pub fn full(capacity_wh: f64) -> Result<Self, EnergyError> {
        Self::new(capacity_wh, capacity_wh)
    }

    pub fn soc(&self) -> f64 {
        self.battery_wh / self.capacity_wh
    }

    /// Sets all cells to the voltage implied by the charge, then balances.
    pub fn refresh_cells(&mut self) {
        self.cell_voltages_v = [lto_cell_voltage(self.soc()); SERIES_CELLS];
        self.balancing_active = balance_step(&self.cell_voltages_v);
    }
}

/// Daily peak-sun-hour inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HarvestTrace {
    /// Same peak sun hours every day.
    Constant(f64),
    /// One value per day; the sequence repeats past its end.
    Daily(Vec<f64>),
}

impl HarvestTrace {
    pub fn peak_sun_hours(&self, day: usize) -> f64 {
        match self {
            Self::Constant(h) => *h,
            Self::Daily(v) if v.is_empty() => 0.0,
            Self::Daily(v) => v[day % v.len()],
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let bad = |h: f64| !(0.0..=24.0).contains(&h);
        match self {
            Self::Constant(h) if bad(*h) => Err(EnergyError::SunHours(*h)),
            Self::Daily(v) => v.iter().find(|h| bad(**h)).map_or(Ok(()), |h| Err(EnergyError::SunHours(*h))),
            _ => Ok(()),
        }
    }

    /// Panel energy (Wh, pre-conversion) over `[t0, t1]` hours: full rated
    /// power inside a noon-centred window as long as the day's sun hours.
    pub fn panel_energy_wh(&self, panel_w: f64, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let mut total = 0.0;
        let first = (t0 / 24.0).floor() as usize;
        let last = (t1 / 24.0).floor() as usize;
        for day in first..=last {
            let h = self.peak_sun_hours(day);
            let base = day as f64 * 24.0;
            let (lo, hi) = (base + 12.0 - h / 2.0, base + 12.0 + h / 2.0);
            let overlap = t1.min(hi) - t0.max(lo);
            if overlap > 0.0 {
                total += overlap * panel_w;
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocParams {
    pub step_h: f64,
    pub horizon_days: f64,
    /// Efficiency between battery and load.
    pub load_efficiency: f64,
    pub restart_fraction: f64,
}

impl Default for SocParams {
    fn default() -> Self {
        Self { step_h: 1.0, horizon_days: 7.0, load_efficiency: 1.0, restart_fraction: DEFAULT_RESTART_FRACTION }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SocSample {
    pub t_h: f64,
    pub battery_wh: f64,
    pub soc: f64,
    pub up: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutageEvent {
    pub start_h: f64,
    /// `None` if still down at the horizon.
    pub end_h: Option<f64>,
}

/// Energy bookkeeping over a run, all in Wh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SocLedger {
    pub initial_wh: f64,
    /// Post-conversion harvest offered to the battery.
    pub harvested_wh: f64,
    /// Drawn from the battery by the load (including path losses).
    pub consumed_wh: f64,
    /// Harvest discarded because the battery was full.
    pub spilled_wh: f64,
    /// Load demand not met while the node was down.
    pub unserved_wh: f64,
    pub final_wh: f64,
}

impl SocLedger {
    /// initial + harvested - consumed - spilled - final; zero up to rounding.
    pub fn residual(&self) -> f64 {
        self.initial_wh + self.harvested_wh - self.consumed_wh - self.spilled_wh - self.final_wh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocRun {
    pub samples: Vec<SocSample>,
    pub outages: Vec<OutageEvent>,
    pub ledger: SocLedger,
}

/// Integrates battery charge with harvest and load rates held constant over
/// each step (harvest rate = exact step integral / step). Crossings of empty,
/// full and the restart threshold are resolved at their exact time inside a
/// step.
pub fn simulate_soc(
    state: &EnergyState,
    load_w: f64,
    harvester: &HarvesterSpec,
    trace: &HarvestTrace,
    params: &SocParams,
) -> Result<SocRun, EnergyError> {
    if !(params.step_h > 0.0 && params.step_h <= 1.0) {
        return Err(EnergyError::Step(params.step_h));
    }
    check_nonneg("load_w", load_w)?;
    check_eff(params.load_efficiency)?;
    check_eff(harvester.conversion_efficiency)?;
    trace.validate()?;
    let cap = state.capacity_wh;
    let restart = params.restart_fraction * cap;
    let draw = load_w / params.load_efficiency;
    let horizon = params.horizon_days * 24.0;
    let mut b = state.battery_wh;
    let mut up = b > 0.0 || draw == 0.0;
    let mut ledger = SocLedger { initial_wh: b, ..Default::default() };
    let mut outages = Vec::new();
    if !up {
        outages.push(OutageEvent { start_h: 0.0, end_h: None });
    }
    let mut samples = vec![SocSample { t_h: 0.0, battery_wh: b, soc: b / cap, up }];
    let n_steps = (horizon / params.step_h).ceil() as usize;
    for i in 0..n_steps {
        let t0 = i as f64 * params.step_h;
        let t1 = ((i + 1) as f64 * params.step_h).min(horizon);
        let h_rate = trace.panel_energy_wh(harvester.panel_w, t0, t1) / (t1 - t0) * harvester.conversion_efficiency;
        let mut t = t0;
        while t < t1 {
            let rem = t1 - t;
            let rate = if up { h_rate - draw } else { h_rate };
            // time until the next state boundary inside the step
            let (dt, event) = if up && rate < 0.0 && b + rate * rem <= 0.0 {
                (b / -rate, Some(false))
            } else if !up && b < restart && rate > 0.0 && b + rate * rem >= restart {
                ((restart - b) / rate, Some(true))
            } else {
                (rem, None)
            };
            let dt = dt.clamp(0.0, rem);
            ledger.harvested_wh += h_rate * dt;
            if up {
                ledger.consumed_wh += draw * dt;
            } else {
                ledger.unserved_wh += draw * dt;
            }
            b += rate * dt;
            if b > cap {
                ledger.spilled_wh += b - cap;
                b = cap;
            }
            t += dt;
            match event {
                Some(false) => {
                    b = 0.0;
                    up = false;
                    outages.push(OutageEvent { start_h: t, end_h: None });
                }
                Some(true) => {
                    b = restart;
                    up = true;
                    if let Some(o) = outages.last_mut() {
                        o.end_h = Some(t);
                    }
                }
                None => t = t1,
            }
            if event.is_none() {
                break;
            }
        }
        if b > cap {
            ledger.spilled_wh += b - cap;
            b = cap;
        }
        samples.push(SocSample { t_h: t1, battery_wh: b, soc: b / cap, up });
    }
    ledger.final_wh = b;
    Ok(SocRun { samples, outages, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizing_arithmetic() {
        assert_eq!(storage_requirement(0.1, 72.0, 0.8).unwrap(), 9.0);
        assert!((storage_requirement(0.1, 24.0, 1.0).unwrap() - 2.4).abs() < 1e-12);
        assert_eq!(storage_requirement(0.1, 144.0, 0.8).unwrap(), 2.0 * storage_requirement(0.1, 72.0, 0.8).unwrap());
        assert!(storage_requirement(0.1, 72.0, 0.0).is_err());
        let h = HarvesterSpec::default();
        assert_eq!(daily_harvest(&h), 15.0);
        assert_eq!(daily_harvest(&HarvesterSpec { peak_sun_hours_per_day: 0.0, ..h }), 0.0);
        assert_eq!(daily_harvest(&HarvesterSpec { panel_w: 10.0, ..h }), 30.0);
    }

    #[test]
    fn power_budget() {
        let p = PowerProfile::default();
        assert_eq!(total_power(&p), 107.0);
        assert_eq!(total_power(&PowerProfile { inference_duty: 0.0, ..p }), 21.0);
        assert_eq!(total_power(&PowerProfile { inference_duty: 1.0, ..p }), 365.0);
    }

    #[test]
    fn radio_energy_examples() {
        let r = RadioPower::default();
        assert!((radio_energy(0.02573, RadioMode::Tx, &r) - 0.056606).abs() < 1e-9);
        assert_eq!(radio_energy(0.0, RadioMode::Tx, &r), 0.0);
        // 1.1 % listening at 40 mW
        assert!((0.011 * r.rx_w * 1e3 - 0.44).abs() < 1e-12);
    }

    #[test]
    fn balancing() {
        assert_eq!(balance_step(&[2.40, 2.40, 2.40, 2.40]), [false; 4]);
        assert_eq!(balance_step(&[2.50, 2.40, 2.40, 2.39]), [true, false, false, false]);
        assert_eq!(balance_step(&[2.45, 2.40, 2.40, 2.40]), [false; 4]);
        assert_eq!(balance_step(&[2.50, 2.495, 2.40, 2.38]), [true, true, false, false]);
        let balanced = [2.4; 4];
        assert_eq!(balance_step(&balanced), balance_step(&balanced));
    }

    #[test]
    fn panel_window_integral() {
        let t = HarvestTrace::Constant(3.0);
        assert!((t.panel_energy_wh(5.0, 0.0, 24.0) - 15.0).abs() < 1e-12);
        assert!((t.panel_energy_wh(5.0, 0.0, 12.0) - 7.5).abs() < 1e-12);
        assert!((t.panel_energy_wh(5.0, 0.0, 72.0) - 45.0).abs() < 1e-12);
        let d = HarvestTrace::Daily(vec![2.0, 4.0]);
        assert!((d.panel_energy_wh(1.0, 0.0, 96.0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn dark_outage_times() {
        let dark = HarvestTrace::Constant(0.0);
        let p = SocParams { horizon_days: 10.0, ..Default::default() };
        let run = simulate_soc(&EnergyState::full(12.0).unwrap(), 0.1, &HarvesterSpec::default(), &dark, &p).unwrap();
        assert!((run.outages[0].start_h - 120.0).abs() < 1e-9);
        let p = SocParams { load_efficiency: 0.8, ..p };
        let run = simulate_soc(&EnergyState::full(9.0).unwrap(), 0.1, &HarvesterSpec::default(), &dark, &p).unwrap();
        assert!((run.outages[0].start_h - 72.0).abs() < 1e-9);
        assert!(run.outages[0].end_h.is_none());
    }

    #[test]
    fn surplus_never_outages() {
        let h = HarvesterSpec::default();
        let p = SocParams { step_h: 0.25, horizon_days: 5.0, ..Default::default() };
        let run = simulate_soc(&EnergyState::new(12.0, 1.0).unwrap(), 0.0, &h, &HarvestTrace::Constant(3.0), &p).unwrap();
        assert!(run.outages.is_empty());
        for w in run.samples.windows(2) {
            assert!(w[1].battery_wh >= w[0].battery_wh);
        }
        assert!(run.ledger.spilled_wh > 0.0);
        assert!(run.ledger.residual().abs() < 1e-9 * run.ledger.harvested_wh);
    }

    #[test]
    fn recovers_after_outage() {
        let h = HarvesterSpec::default();
        let trace = HarvestTrace::Daily(vec![0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 3.0, 3.0]);
        let p = SocParams { step_h: 0.5, horizon_days: 8.0, ..Default::default() };
        let run = simulate_soc(&EnergyState::full(9.0).unwrap(), 0.107, &h, &trace, &p).unwrap();
        assert_eq!(run.outages.len(), 1);
        let o = run.outages[0];
        assert!((o.start_h - 9.0 / 0.107).abs() < 1e-9);
        assert!(o.end_h.unwrap() > 5.0 * 24.0);
        assert!(run.samples.iter().all(|s| (0.0..=9.0).contains(&s.battery_wh)));
        let l = run.ledger;
        assert!(l.residual().abs() < 1e-9 * (l.initial_wh + l.harvested_wh));
        assert!(l.unserved_wh > 0.0);
    }
}
