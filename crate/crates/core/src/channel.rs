//! Urban propagation and reception model.
//!
//! Received power is log-distance path loss with per-link log-normal
//! shadowing, a static frequency-selective gain per (link, frequency) and a
//! Rician block gain redrawn every 10 s interval. The noise floor is the power
//! sum of the thermal floor and any external interferer active in-band.
//! Reception is an SNR-threshold sigmoid anchored on the spreading factor's
//! demodulation floor.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{self, RadioConfig, BAND_HIGH_HZ, BAND_LOW_HZ};
use crate::rng::{self, stream};

/// Length of one link-metric interval.
pub const INTERVAL_S: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance {distance_m} m is below the reference distance {d0_m} m")]
    BelowReferenceDistance { distance_m: f64, d0_m: f64 },
    #[error("path-loss exponent {0} outside [1.6, 6.5]")]
    InvalidExponent(f64),
    #[error("shadowing sigma must be non-negative, got {0}")]
    InvalidShadowing(f64),
    #[error("interferer {index}: {reason}")]
    InvalidInterferer { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossModel {
    pub pl0_db: f64,
    #[serde(default = "default_d0")]
    pub d0_m: f64,
    pub exponent: f64,
    #[serde(default)]
    pub shadowing_sigma_db: f64,
}

fn default_d0() -> f64 {
    1.0
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self { pl0_db: 40.0, d0_m: 1.0, exponent: 3.5, shadowing_sigma_db: 4.0 }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(1.6..=6.5).contains(&self.exponent) {
            return Err(ChannelError::InvalidExponent(self.exponent));
        }
        if self.shadowing_sigma_db < 0.0 || self.shadowing_sigma_db.is_nan() {
            return Err(ChannelError::InvalidShadowing(self.shadowing_sigma_db));
        }
        Ok(())
    }

    /// Median loss pl0 + 10 n log10(d / d0); shadowing is added per link by [`Channel`].
    pub fn path_loss(&self, distance_m: f64) -> Result<f64, ChannelError> {
        if distance_m < self.d0_m {
            return Err(ChannelError::BelowReferenceDistance { distance_m, d0_m: self.d0_m });
        }
        Ok(self.pl0_db + 10.0 * self.exponent * (distance_m / self.d0_m).log10())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingParams {
    /// Std-dev of the static per-(link, frequency) gain.
    pub static_sigma_db: f64,
    /// Rician K-factor of the per-interval block gain; `None` means Rayleigh.
    pub k_factor_db: Option<f64>,
    /// Disable both components.
    pub enabled: bool,
}

impl Default for FadingParams {
    fn default() -> Self {
        Self { static_sigma_db: 4.0, k_factor_db: Some(6.0), enabled: true }
    }
}

impl FadingParams {
    pub fn off() -> Self {
        Self { static_sigma_db: 0.0, k_factor_db: None, enabled: false }
    }

    /// Non-line-of-sight default.
    pub fn nlos() -> Self {
        Self { k_factor_db: Some(0.0), ..Self::default() }
    }
}

/// Rician block gain in dB with unit mean power.
pub fn rician_gain_db(k_factor_db: Option<f64>, n1: f64, n2: f64) -> f64 {
    let k = k_factor_db.map_or(0.0, |db| 10f64.powf(db / 10.0));
    let los = (k / (k + 1.0)).sqrt();
    let s = (1.0 / (2.0 * (k + 1.0))).sqrt();
    let re = los + s * n1;
    let im = s * n2;
    10.0 * (re * re + im * im).max(1e-12).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfererKind {
    NarrowbandFixed,
    Wideband,
    Hopping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererSpec {
    pub kind: InterfererKind,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Received interference power at the victim.
    pub power_dbm: f64,
    /// Long-run fraction of time the interferer is on.
    #[serde(default = "default_on_fraction")]
    pub on_fraction: f64,
    /// Mean length of an on burst.
    #[serde(default = "default_burst")]
    pub mean_burst_s: f64,
    /// Occupied width of a hopping interferer at any instant.
    #[serde(default = "default_hop_width")]
    pub hop_width_hz: f64,
    #[serde(default = "default_hop_dwell")]
    pub hop_dwell_s: f64,
    /// Nodes that hear this interferer; empty means all.
    #[serde(default)]
    pub affected_nodes: Vec<u32>,
}

fn default_on_fraction() -> f64 {
    1.0
}
fn default_burst() -> f64 {
    60.0
}
fn default_hop_width() -> f64 {
    125_000.0
}
fn default_hop_dwell() -> f64 {
    0.4
}

impl InterfererSpec {
    /// An always-on narrowband emitter centred on `center_hz`.
    pub fn narrowband(center_hz: f64, width_hz: f64, power_dbm: f64) -> Self {
        Self {
            kind: InterfererKind::NarrowbandFixed,
            band_low_hz: center_hz - width_hz / 2.0,
            band_high_hz: center_hz + width_hz / 2.0,
            power_dbm,
            on_fraction: 1.0,
            mean_burst_s: default_burst(),
            hop_width_hz: default_hop_width(),
            hop_dwell_s: default_hop_dwell(),
            affected_nodes: Vec::new(),
        }
    }

    pub fn validate(&self, index: usize) -> Result<(), ChannelError> {
        let err = |reason: String| Err(ChannelError::InvalidInterferer { index, reason });
        if self.band_low_hz < BAND_LOW_HZ || self.band_high_hz > BAND_HIGH_HZ || self.band_low_hz >= self.band_high_hz {
            return err(format!("band [{}, {}] not within 902-928 MHz", self.band_low_hz, self.band_high_hz));
        }
        if self.power_dbm < -130.0 {
            return err(format!("power {} dBm below -130 dBm", self.power_dbm));
        }
        if !(0.0..=1.0).contains(&self.on_fraction) {
            return err(format!("on_fraction {} outside [0, 1]", self.on_fraction));
        }
        if self.mean_burst_s <= 0.0 {
            return err("mean_burst_s must be positive".into());
        }
        if self.kind == InterfererKind::Hopping && (self.hop_width_hz <= 0.0 || self.hop_dwell_s <= 0.0) {
            return err("hopping interferer needs positive hop width and dwell".into());
        }
        Ok(())
    }
}

/// An interferer with its on/off timeline drawn for the run horizon.
#[derive(Debug, Clone)]
pub struct Interferer {
    spec: InterfererSpec,
    key: u64,
    /// Sorted, disjoint on-periods; `None` when always on.
    on_periods: Option<Vec<(f64, f64)>>,
}

impl Interferer {
    pub fn new(spec: InterfererSpec, index: usize, seed: u64, horizon_s: f64) -> Self {
        let key = rng::hash_keys(seed, &[stream::INTERFERER, index as u64]);
        let on_periods = if spec.on_fraction >= 1.0 {
            None
        } else if spec.on_fraction <= 0.0 {
            Some(Vec::new())
        } else {
            let mut r = rng::keyed(key, &[0]);
            let on = Exp::new(1.0 / spec.mean_burst_s).expect("positive rate");
            let mean_off = spec.mean_burst_s * (1.0 - spec.on_fraction) / spec.on_fraction;
            let off = Exp::new(1.0 / mean_off).expect("positive rate");
            let mut periods = Vec::new();
            let mut t = 0.0;
            let mut is_on = r.random::<f64>() < spec.on_fraction;
            while t <= horizon_s {
                let hold = if is_on { on.sample(&mut r) } else { off.sample(&mut r) };
                if is_on {
                    periods.push((t, t + hold));
                }
                t += hold;
                is_on = !is_on;
            }
            Some(periods)
        };
        Self { spec, key, on_periods }
    }

    pub fn spec(&self) -> &InterfererSpec {
        &self.spec
    }

    pub fn is_active(&self, t: f64) -> bool {
        match &self.on_periods {
            None => true,
            Some(p) => {
                let i = p.partition_point(|&(start, _)| start <= t);
                i > 0 && t < p[i - 1].1
            }
        }
    }

    pub fn affects(&self, node: u32) -> bool {
        self.spec.affected_nodes.is_empty() || self.spec.affected_nodes.contains(&node)
    }

    /// Band occupied at time `t`, if transmitting.
    pub fn occupied_band(&self, t: f64) -> Option<(f64, f64)> {
        if !self.is_active(t) {
            return None;
        }
        match self.spec.kind {
            InterfererKind::NarrowbandFixed | InterfererKind::Wideband => {
                Some((self.spec.band_low_hz, self.spec.band_high_hz))
            }
            InterfererKind::Hopping => {
                let slots = ((self.spec.band_high_hz - self.spec.band_low_hz) / self.spec.hop_width_hz).floor().max(1.0) as u64;
                let dwell = (t / self.spec.hop_dwell_s).floor() as u64;
                let slot = rng::hash_keys(self.key, &[1, dwell]) % slots;
                let lo = self.spec.band_low_hz + slot as f64 * self.spec.hop_width_hz;
                Some((lo, lo + self.spec.hop_width_hz))
            }
        }
    }

    /// Power this interferer adds to a receiver tuned to `freq_hz` at time `t`.
    pub fn in_band_power_dbm(&self, freq_hz: f64, bandwidth_hz: f64, t: f64) -> Option<f64> {
        let (lo, hi) = self.occupied_band(t)?;
        let rx_lo = freq_hz - bandwidth_hz / 2.0;
        let rx_hi = freq_hz + bandwidth_hz / 2.0;
        (lo < rx_hi && hi > rx_lo).then_some(self.spec.power_dbm)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Noise floor seen by `node` tuned to `freq_hz` at time `t`: thermal floor
/// power-summed with every active in-band interferer.
pub fn noise_floor(
    freq_hz: f64,
    t: f64,
    cfg: &RadioConfig,
    noise_figure_db: f64,
    interferers: &[Interferer],
    node: u32,
) -> f64 {
    let bw = cfg.bandwidth_hz();
    let mut total = dbm_to_mw(phy::thermal_noise_dbm(bw, noise_figure_db));
    for i in interferers.iter().filter(|i| i.affects(node)) {
        if let Some(p) = i.in_band_power_dbm(freq_hz, bw, t) {
            total += dbm_to_mw(p);
        }
    }
    mw_to_dbm(total)
}

/// Default sigmoid width of the reception curve.
pub const DEFAULT_RECEPTION_WIDTH_DB: f64 = 1.0;

/// Probability that a frame at `snr_db` is demodulated.
pub fn reception_probability(snr_db: f64, cfg: &RadioConfig, width_db: f64) -> f64 {
    let margin = snr_db - cfg.spreading_factor().snr_limit_db();
    1.0 / (1.0 + (-margin / width_db).exp())
}

pub fn packet_success<R: Rng + ?Sized>(snr_db: f64, cfg: &RadioConfig, width_db: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < reception_probability(snr_db, cfg, width_db)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    #[serde(default)]
    pub path_loss: PathLossModel,
    #[serde(default)]
    pub fading: FadingParams,
    #[serde(default = "default_nf")]
    pub noise_figure_db: f64,
    /// Sum of transmit and receive antenna gains.
    #[serde(default)]
    pub antenna_gains_db: f64,
    #[serde(default = "default_width")]
    pub reception_width_db: f64,
    /// Hard cutoff beyond which two nodes share no link (obstructions).
    #[serde(default)]
    pub max_range_m: Option<f64>,
    /// Std-dev of passive noise readings around the true floor.
    #[serde(default = "default_meas_sigma")]
    pub noise_measurement_sigma_db: f64,
    #[serde(default)]
    pub interferers: Vec<InterfererSpec>,
}

fn default_nf() -> f64 {
    phy::DEFAULT_NOISE_FIGURE_DB
}
fn default_width() -> f64 {
    DEFAULT_RECEPTION_WIDTH_DB
}
fn default_meas_sigma() -> f64 {
    0.5
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            path_loss: PathLossModel::default(),
            fading: FadingParams::default(),
            noise_figure_db: default_nf(),
            antenna_gains_db: 0.0,
            reception_width_db: default_width(),
            max_range_m: None,
            noise_measurement_sigma_db: default_meas_sigma(),
            interferers: Vec::new(),
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        self.path_loss.validate()?;
        for (i, spec) in self.interferers.iter().enumerate() {
            spec.validate(i)?;
        }
        Ok(())
    }
}

/// One coherent observation of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    pub rssi_dbm: f64,
    pub snr_db: f64,
    pub noise_dbm: f64,
}

#[derive(Debug, Clone, Copy)]
struct PairState {
    distance_m: f64,
    loss_db: f64,
    linked: bool,
}

/// The propagation environment of one scenario; immutable once built.
#[derive(Debug, Clone)]
pub struct Channel {
    params: ChannelParams,
    seed: u64,
    interferers: Vec<Interferer>,
    pairs: BTreeMap<(u32, u32), PairState>,
}

fn pair_key(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Channel {
    /// Builds the channel for nodes at `positions` (id, x, y in metres).
    pub fn new(params: ChannelParams, positions: &[(u32, f64, f64)], seed: u64, horizon_s: f64) -> Result<Self, ChannelError> {
        params.validate()?;
        let interferers = params
            .interferers
            .iter()
            .enumerate()
            .map(|(i, s)| Interferer::new(s.clone(), i, seed, horizon_s))
            .collect();
        let mut pairs = BTreeMap::new();
        for (i, &(a, ax, ay)) in positions.iter().enumerate() {
            for &(b, bx, by) in &positions[i + 1..] {
                let distance_m = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt().max(params.path_loss.d0_m);
                let key = pair_key(a, b);
                let shadow = params.path_loss.shadowing_sigma_db
                    * rng::standard_normal(seed, &[stream::SHADOWING, u64::from(key.0), u64::from(key.1)]);
                let loss_db = params.path_loss.path_loss(distance_m)? + shadow;
                let linked = params.max_range_m.is_none_or(|r| distance_m <= r);
                pairs.insert(key, PairState { distance_m, loss_db, linked });
            }
        }
        Ok(Self { params, seed, interferers, pairs })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn interferers(&self) -> &[Interferer] {
        &self.interferers
    }

    pub fn distance(&self, a: u32, b: u32) -> Option<f64> {
        self.pairs.get(&pair_key(a, b)).map(|p| p.distance_m)
    }

    /// Path loss including the link's shadowing draw; `None` when no physical link exists.
    pub fn link_loss_db(&self, a: u32, b: u32) -> Option<f64> {
        self.pairs.get(&pair_key(a, b)).filter(|p| p.linked).map(|p| p.loss_db)
    }

    pub fn static_fading_db(&self, a: u32, b: u32, freq_hz: u64) -> f64 {
        if !self.params.fading.enabled {
            return 0.0;
        }
        let (x, y) = pair_key(a, b);
        self.params.fading.static_sigma_db
            * rng::standard_normal(self.seed, &[stream::STATIC_FADING, u64::from(x), u64::from(y), freq_hz])
    }

    pub fn block_fading_db(&self, a: u32, b: u32, freq_hz: u64, interval: u64) -> f64 {
        if !self.params.fading.enabled {
            return 0.0;
        }
        let (x, y) = pair_key(a, b);
        let keys = [stream::BLOCK_FADING, u64::from(x), u64::from(y), freq_hz, interval];
        let n1 = rng::standard_normal(self.seed, &keys);
        let n2 = rng::standard_normal(self.seed ^ 0x5555_5555_5555_5555, &keys);
        rician_gain_db(self.params.fading.k_factor_db, n1, n2)
    }

    pub fn noise_floor(&self, node: u32, freq_hz: u64, t: f64, cfg: &RadioConfig) -> f64 {
        noise_floor(freq_hz as f64, t, cfg, self.params.noise_figure_db, &self.interferers, node)
    }

    /// Received power of `tx` at `rx` on `freq_hz` at time `t`.
    pub fn rssi(&self, tx: u32, rx: u32, freq_hz: u64, t: f64, cfg: &RadioConfig) -> Option<f64> {
        let loss = self.link_loss_db(tx, rx)?;
        let interval = (t / INTERVAL_S).floor() as u64;
        Some(
            cfg.tx_power_dbm() + self.params.antenna_gains_db - loss
                + self.static_fading_db(tx, rx, freq_hz)
                + self.block_fading_db(tx, rx, freq_hz, interval),
        )
    }

    /// A coherent (rssi, snr, noise) triple; `snr == rssi - noise` exactly.
    pub fn sample_link(&self, tx: u32, rx: u32, freq_hz: u64, t: f64, cfg: &RadioConfig) -> Option<LinkSample> {
        let rssi_dbm = self.rssi(tx, rx, freq_hz, t, cfg)?;
        let noise_dbm = self.noise_floor(rx, freq_hz, t, cfg);
        Some(LinkSample { rssi_dbm, snr_db: rssi_dbm - noise_dbm, noise_dbm })
    }

    /// Passive noise reading with measurement jitter keyed on `(node, draw)`.
    pub fn measure_noise(&self, node: u32, freq_hz: u64, t: f64, cfg: &RadioConfig, draw: u64) -> f64 {
        let jitter = self.params.noise_measurement_sigma_db
            * rng::standard_normal(self.seed, &[stream::NOISE_MEASUREMENT, u64::from(node), draw]);
        self.noise_floor(node, freq_hz, t, cfg) + jitter
    }

    /// Resolves reception of one frame with a keyed uniform draw.
    pub fn receive(&self, sample: &LinkSample, cfg: &RadioConfig, rx: u32, draw: u64) -> bool {
        let u = rng::uniform(self.seed, &[stream::RECEPTION, u64::from(rx), draw]);
        u < reception_probability(sample.snr_db, cfg, self.params.reception_width_db)
    }

    /// Nodes with a physical link to `node`.
    pub fn neighbors_in_range(&self, node: u32) -> Vec<u32> {
        self.pairs
            .iter()
            .filter(|(_, p)| p.linked)
            .filter_map(|(&(a, b), _)| {
                if a == node {
                    Some(b)
                } else if b == node {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_shadow(pl0: f64, n: f64) -> PathLossModel {
        PathLossModel { pl0_db: pl0, d0_m: 1.0, exponent: n, shadowing_sigma_db: 0.0 }
    }

    #[test]
    fn path_loss_examples() {
        assert_abs_diff_eq!(no_shadow(40.0, 2.0).path_loss(1.0).unwrap(), 40.0);
        assert_abs_diff_eq!(no_shadow(40.0, 2.7).path_loss(500.0).unwrap(), 112.873, epsilon = 1e-3);
        let m = no_shadow(40.0, 2.0);
        assert_abs_diff_eq!(m.path_loss(100.0).unwrap() - m.path_loss(10.0).unwrap(), 20.0, epsilon = 1e-12);
        assert!(matches!(m.path_loss(0.5), Err(ChannelError::BelowReferenceDistance { .. })));
    }

    #[test]
    fn path_loss_validation() {
        assert!(no_shadow(40.0, 1.5).validate().is_err());
        assert!(no_shadow(40.0, 6.6).validate().is_err());
        let mut m = no_shadow(40.0, 3.0);
        m.shadowing_sigma_db = -1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn noise_floor_examples() {
        let cfg = RadioConfig::deployed();
        let f = 915_000_000.0;
        let clean = noise_floor(f, 0.0, &cfg, 6.0, &[], 1);
        assert_abs_diff_eq!(clean, -111.0, epsilon = 0.02);
        let inband = Interferer::new(InterfererSpec::narrowband(f, 50e3, -95.0), 0, 1, 100.0);
        let with = noise_floor(f, 0.0, &cfg, 6.0, std::slice::from_ref(&inband), 1);
        let oracle = 10.0 * (10f64.powf(-9.5) + 10f64.powf(clean / 10.0)).log10();
        assert_abs_diff_eq!(with, oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(with, -94.9, epsilon = 0.05);
        let outband = Interferer::new(InterfererSpec::narrowband(f + 2e6, 50e3, -95.0), 0, 1, 100.0);
        assert_abs_diff_eq!(noise_floor(f, 0.0, &cfg, 6.0, &[outband], 1), clean, epsilon = 1e-12);
    }

    #[test]
    fn clean_floor_brackets_quiet_regime() {
        for bw in [phy::Bandwidth::Khz125, phy::Bandwidth::Khz250, phy::Bandwidth::Khz500] {
            let cfg = RadioConfig::deployed().with_bandwidth(bw);
            let n = noise_floor(915e6, 0.0, &cfg, phy::DEFAULT_NOISE_FIGURE_DB, &[], 0);
            assert!((-126.0..=-110.0).contains(&n), "{n}");
        }
    }

    #[test]
    fn interferer_affects_filter() {
        let mut spec = InterfererSpec::narrowband(915e6, 50e3, -95.0);
        spec.affected_nodes = vec![3];
        let i = Interferer::new(spec, 0, 1, 10.0);
        let cfg = RadioConfig::deployed();
        assert!(noise_floor(915e6, 1.0, &cfg, 6.0, std::slice::from_ref(&i), 3) > -100.0);
        assert!(noise_floor(915e6, 1.0, &cfg, 6.0, std::slice::from_ref(&i), 4) < -110.0);
    }

    #[test]
    fn duty_cycled_interferer_on_fraction() {
        let mut spec = InterfererSpec::narrowband(915e6, 50e3, -95.0);
        spec.on_fraction = 0.3;
        spec.mean_burst_s = 5.0;
        let i = Interferer::new(spec, 0, 9, 200_000.0);
        let n = 100_000;
        let on = (0..n).filter(|k| i.is_active(*k as f64 * 1.7)).count();
        let frac = on as f64 / n as f64;
        assert!((frac - 0.3).abs() < 0.03, "{frac}");
    }

    #[test]
    fn hopping_interferer_stays_in_band() {
        let spec = InterfererSpec {
            kind: InterfererKind::Hopping,
            band_low_hz: 910e6,
            band_high_hz: 912e6,
            power_dbm: -90.0,
            on_fraction: 1.0,
            mean_burst_s: 1.0,
            hop_width_hz: 250e3,
            hop_dwell_s: 0.4,
            affected_nodes: vec![],
        };
        let i = Interferer::new(spec, 0, 3, 100.0);
        let mut seen = std::collections::BTreeSet::new();
        for k in 0..500 {
            let (lo, hi) = i.occupied_band(k as f64 * 0.4).unwrap();
            assert!(lo >= 910e6 && hi <= 912e6);
            seen.insert(lo as u64);
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn reception_sigmoid() {
        let cfg = RadioConfig::deployed();
        let limit = cfg.spreading_factor().snr_limit_db();
        assert_abs_diff_eq!(reception_probability(limit, &cfg, 1.0), 0.5);
        assert!(reception_probability(limit + 5.0, &cfg, 1.0) >= 0.99);
        assert!(reception_probability(limit - 5.0, &cfg, 1.0) <= 0.01);
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let hi = (0..10_000).filter(|_| packet_success(limit + 10.0, &cfg, 1.0, &mut r)).count();
        assert!(hi as f64 / 1e4 >= 0.995);
        let lo = (0..10_000).filter(|_| packet_success(limit - 10.0, &cfg, 1.0, &mut r)).count();
        assert!(lo as f64 / 1e4 <= 0.005);
    }

    fn two_node(fading: FadingParams, shadow: f64) -> Channel {
        let params = ChannelParams {
            path_loss: PathLossModel { pl0_db: 40.0, d0_m: 1.0, exponent: 3.0, shadowing_sigma_db: shadow },
            fading,
            ..ChannelParams::default()
        };
        Channel::new(params, &[(1, 0.0, 0.0), (2, 300.0, 0.0)], 77, 1000.0).unwrap()
    }

    #[test]
    fn sample_link_degenerate_and_deterministic() {
        let cfg = RadioConfig::deployed();
        let ch = two_node(FadingParams::off(), 0.0);
        let s = ch.sample_link(1, 2, 915_000_000, 3.0, &cfg).unwrap();
        let budget = 27.0 - (40.0 + 30.0 * 300f64.log10());
        assert_abs_diff_eq!(s.rssi_dbm, budget, epsilon = 1e-9);
        assert_eq!(s.snr_db, s.rssi_dbm - s.noise_dbm);

        let faded = two_node(FadingParams::default(), 4.0);
        let a = faded.sample_link(1, 2, 915_000_000, 33.0, &cfg).unwrap();
        let b = faded.sample_link(1, 2, 915_000_000, 33.0, &cfg).unwrap();
        assert_eq!(a, b);
        // reciprocity
        assert_eq!(faded.rssi(2, 1, 915_000_000, 33.0, &cfg), faded.rssi(1, 2, 915_000_000, 33.0, &cfg));
    }

    #[test]
    fn frequency_selective_prr_differs() {
        let cfg = RadioConfig::deployed();
        // Place the link near the edge so static gains matter.
        let params = ChannelParams {
            path_loss: PathLossModel { pl0_db: 40.0, d0_m: 1.0, exponent: 3.5, shadowing_sigma_db: 0.0 },
            ..ChannelParams::default()
        };
        let ch = Channel::new(params, &[(1, 0.0, 0.0), (2, 1000.0, 0.0)], 5, 1e5).unwrap();
        let plan = crate::phy::ChannelPlan::ten_channel();
        let mut prrs = Vec::new();
        for &f in &plan.frequencies_hz {
            let mut ok = 0;
            for k in 0..2000u64 {
                let t = k as f64 * 5.0;
                let s = ch.sample_link(1, 2, f, t, &cfg).unwrap();
                if ch.receive(&s, &cfg, 2, f ^ k) {
                    ok += 1;
                }
            }
            prrs.push(ok as f64 / 2000.0);
        }
        let max = prrs.iter().cloned().fold(f64::MIN, f64::max);
        let min = prrs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min > 0.05, "{prrs:?}");
    }

    #[test]
    fn strong_clean_link_delivers() {
        let cfg = RadioConfig::deployed();
        let ch = two_node(FadingParams::off(), 0.0);
        let s = ch.sample_link(1, 2, 915_000_000, 0.0, &cfg).unwrap();
        assert!(s.snr_db - cfg.spreading_factor().snr_limit_db() >= 5.0);
        let ok = (0..10_000u64).filter(|&k| ch.receive(&s, &cfg, 2, k)).count();
        assert!(ok as f64 / 1e4 > 0.99);
    }

    #[test]
    fn rician_mean_power_is_unity() {
        let n = 40_000;
        let mean: f64 = (0..n)
            .map(|i| {
                let g = rician_gain_db(Some(6.0), rng::standard_normal(1, &[i]), rng::standard_normal(2, &[i]));
                10f64.powf(g / 10.0)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn max_range_cuts_links() {
        let params = ChannelParams { max_range_m: Some(150.0), ..ChannelParams::default() };
        let ch = Channel::new(params, &[(1, 0.0, 0.0), (2, 100.0, 0.0), (3, 200.0, 0.0)], 1, 10.0).unwrap();
        assert_eq!(ch.neighbors_in_range(2), vec![1, 3]);
        assert_eq!(ch.neighbors_in_range(1), vec![2]);
        assert!(ch.link_loss_db(1, 3).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adding_interferer_never_lowers_noise(
                powers in proptest::collection::vec(-130.0f64..-60.0, 0..5),
                extra in -130.0f64..-60.0,
            ) {
                let cfg = RadioConfig::deployed();
                let mk = |ps: &[f64]| -> Vec<Interferer> {
                    ps.iter().enumerate().map(|(i, &p)| Interferer::new(InterfererSpec::narrowband(915e6, 100e3, p), i, 1, 10.0)).collect()
                };
                let base = noise_floor(915e6, 1.0, &cfg, 6.0, &mk(&powers), 0);
                let mut more = powers.clone();
                more.push(extra);
                let with = noise_floor(915e6, 1.0, &cfg, 6.0, &mk(&more), 0);
                prop_assert!(with >= base);
                let mut rev = powers.clone();
                rev.reverse();
                let swapped = noise_floor(915e6, 1.0, &cfg, 6.0, &mk(&rev), 0);
                prop_assert!((swapped - base).abs() < 1e-9);
            }
        }
    }
}
