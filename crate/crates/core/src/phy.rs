//! LoRa physical-layer arithmetic for the US 902-928 MHz band.
//!
//! Covers the raw link rate, packet time-on-air, receiver sensitivity, link
//! budget closure and the FCC 15.247 checks that drive the choice between a
//! single wide channel and frequency hopping.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower edge of the 902-928 MHz ISM band.
pub const BAND_LOW_HZ: f64 = 902.0e6;
/// Upper edge of the 902-928 MHz ISM band.
pub const BAND_HIGH_HZ: f64 = 928.0e6;
/// Regulatory conducted power limit.
pub const FCC_MAX_TX_DBM: f64 = 30.0;
/// Maximum output of the radio front end used on the nodes.
pub const HARDWARE_MAX_TX_DBM: f64 = 27.0;
/// Thermal noise density at room temperature, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;
/// Noise figure that reproduces the -121 dBm SF8/500 kHz sensitivity.
pub const DEFAULT_NOISE_FIGURE_DB: f64 = 6.0;
/// Largest LoRa payload.
pub const MAX_PAYLOAD_BYTES: usize = 255;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("bandwidth {0} Hz is not one of 125000, 250000, 500000")]
    InvalidBandwidth(u32),
    #[error("spreading factor {0} outside 7..=12")]
    InvalidSpreadingFactor(u8),
    #[error("coding rate 4/{0} is not one of 4/5, 4/6, 4/7, 4/8")]
    InvalidCodingRate(u8),
    #[error("center frequency {0} Hz outside the 902-928 MHz band")]
    FrequencyOutOfBand(f64),
    #[error("tx power {0} dBm exceeds the 30 dBm limit")]
    TxPowerTooHigh(f64),
    #[error("preamble of {0} symbols is shorter than 6")]
    PreambleTooShort(u16),
    #[error("payload of {0} bytes exceeds the 255-byte frame limit")]
    PayloadTooLarge(usize),
    #[error("channel plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Bandwidth {
    Khz125,
    Khz250,
    Khz500,
}

impl Bandwidth {
    pub fn hz(self) -> u32 {
        match self {
            Bandwidth::Khz125 => 125_000,
            Bandwidth::Khz250 => 250_000,
            Bandwidth::Khz500 => 500_000,
        }
    }
}

impl TryFrom<u32> for Bandwidth {
    type Error = PhyError;

    fn try_from(hz: u32) -> Result<Self, Self::Error> {
        match hz {
            125_000 => Ok(Bandwidth::Khz125),
            250_000 => Ok(Bandwidth::Khz250),
            500_000 => Ok(Bandwidth::Khz500),
            other => Err(PhyError::InvalidBandwidth(other)),
        }
    }
}

impl From<Bandwidth> for u32 {
    fn from(bw: Bandwidth) -> u32 {
        bw.hz()
    }
}

/// LoRa spreading factor, 7 through 12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SpreadingFactor(u8);

impl SpreadingFactor {
    pub fn new(sf: u8) -> Result<Self, PhyError> {
        if (7..=12).contains(&sf) {
            Ok(Self(sf))
        } else {
            Err(PhyError::InvalidSpreadingFactor(sf))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Demodulation SNR floor in dB (Semtech datasheet values).
    pub fn snr_limit_db(self) -> f64 {
        -7.5 - 2.5 * f64::from(self.0 - 7)
    }
}

impl TryFrom<u8> for SpreadingFactor {
    type Error = PhyError;

    fn try_from(sf: u8) -> Result<Self, Self::Error> {
        Self::new(sf)
    }
}

impl From<SpreadingFactor> for u8 {
    fn from(sf: SpreadingFactor) -> u8 {
        sf.0
    }
}

/// Forward error correction rate 4/(4+n).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CodingRate {
    Cr4_5,
    Cr4_6,
    Cr4_7,
    Cr4_8,
}

impl CodingRate {
    /// Denominator of the 4/x ratio.
    pub fn denominator(self) -> u8 {
        match self {
            CodingRate::Cr4_5 => 5,
            CodingRate::Cr4_6 => 6,
            CodingRate::Cr4_7 => 7,
            CodingRate::Cr4_8 => 8,
        }
    }

    pub fn ratio(self) -> f64 {
        4.0 / f64::from(self.denominator())
    }

    /// Parses `4/5` style strings or a bare denominator.
    pub fn parse(s: &str) -> Result<Self, PhyError> {
        let den = s.trim().strip_prefix("4/").unwrap_or(s.trim());
        let den: u8 = den.parse().map_err(|_| PhyError::InvalidCodingRate(0))?;
        Self::try_from(den)
    }
}

impl TryFrom<u8> for CodingRate {
    type Error = PhyError;

    fn try_from(den: u8) -> Result<Self, Self::Error> {
        match den {
            5 => Ok(CodingRate::Cr4_5),
            6 => Ok(CodingRate::Cr4_6),
            7 => Ok(CodingRate::Cr4_7),
            8 => Ok(CodingRate::Cr4_8),
            other => Err(PhyError::InvalidCodingRate(other)),
        }
    }
}

impl From<CodingRate> for u8 {
    fn from(cr: CodingRate) -> u8 {
        cr.denominator()
    }
}

impl fmt::Display for CodingRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "4/{}", self.denominator())
    }
}

/// One LoRa PHY operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRadioConfig", into = "RawRadioConfig")]
pub struct RadioConfig {
    center_freq_hz: f64,
    bandwidth: Bandwidth,
    spreading_factor: SpreadingFactor,
    coding_rate: CodingRate,
    tx_power_dbm: f64,
    preamble_symbols: u16,
    explicit_header: bool,
    crc_on: bool,
}

impl RadioConfig {
    pub fn new(
        center_freq_hz: f64,
        bandwidth: Bandwidth,
        spreading_factor: SpreadingFactor,
        coding_rate: CodingRate,
        tx_power_dbm: f64,
    ) -> Result<Self, PhyError> {
        let cfg = Self {
            center_freq_hz,
            bandwidth,
            spreading_factor,
            coding_rate,
            tx_power_dbm,
            preamble_symbols: 8,
            explicit_header: true,
            crc_on: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 500 kHz, SF8, 4/5 at 27 dBm: the deployed configuration.
    pub fn deployed() -> Self {
        Self {
            center_freq_hz: 915.0e6,
            bandwidth: Bandwidth::Khz500,
            spreading_factor: SpreadingFactor(8),
            coding_rate: CodingRate::Cr4_5,
            tx_power_dbm: HARDWARE_MAX_TX_DBM,
            preamble_symbols: 8,
            explicit_header: true,
            crc_on: true,
        }
    }

    fn validate(&self) -> Result<(), PhyError> {
        if !(BAND_LOW_HZ..=BAND_HIGH_HZ).contains(&self.center_freq_hz) {
            return Err(PhyError::FrequencyOutOfBand(self.center_freq_hz));
        }
        if self.tx_power_dbm > FCC_MAX_TX_DBM || self.tx_power_dbm.is_nan() {
            return Err(PhyError::TxPowerTooHigh(self.tx_power_dbm));
        }
        if self.preamble_symbols < 6 {
            return Err(PhyError::PreambleTooShort(self.preamble_symbols));
        }
        Ok(())
    }

    pub fn with_preamble(mut self, symbols: u16) -> Result<Self, PhyError> {
        self.preamble_symbols = symbols;
        self.validate()?;
        Ok(self)
    }

    pub fn with_header(mut self, explicit: bool, crc_on: bool) -> Self {
        self.explicit_header = explicit;
        self.crc_on = crc_on;
        self
    }

    pub fn with_frequency(mut self, hz: f64) -> Result<Self, PhyError> {
        self.center_freq_hz = hz;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bandwidth(mut self, bw: Bandwidth) -> Self {
        self.bandwidth = bw;
        self
    }

    pub fn with_tx_power(mut self, dbm: f64) -> Result<Self, PhyError> {
        self.tx_power_dbm = dbm;
        self.validate()?;
        Ok(self)
    }

    pub fn center_freq_hz(&self) -> f64 {
        self.center_freq_hz
    }
    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }
    pub fn bandwidth_hz(&self) -> f64 {
        f64::from(self.bandwidth.hz())
    }
    pub fn spreading_factor(&self) -> SpreadingFactor {
        self.spreading_factor
    }
    pub fn coding_rate(&self) -> CodingRate {
        self.coding_rate
    }
    pub fn tx_power_dbm(&self) -> f64 {
        self.tx_power_dbm
    }
    pub fn preamble_symbols(&self) -> u16 {
        self.preamble_symbols
    }
    pub fn explicit_header(&self) -> bool {
        self.explicit_header
    }
    pub fn crc_on(&self) -> bool {
        self.crc_on
    }

    /// Symbol duration 2^SF / BW in seconds.
    pub fn symbol_time_s(&self) -> f64 {
        f64::from(1u32 << self.spreading_factor.0) / self.bandwidth_hz()
    }

    /// Low-data-rate optimization, on only for SF11/SF12 at 125 kHz.
    pub fn low_data_rate_optimize(&self) -> bool {
        self.bandwidth == Bandwidth::Khz125 && self.spreading_factor.0 >= 11
    }

    /// Time spent on the preamble, which a receiver must overlap to lock on.
    pub fn preamble_time_s(&self) -> f64 {
        (f64::from(self.preamble_symbols) + 4.25) * self.symbol_time_s()
    }
}

#[derive(Serialize, Deserialize)]
struct RawRadioConfig {
    center_freq_hz: f64,
    bandwidth_hz: u32,
    spreading_factor: u8,
    coding_rate: u8,
    tx_power_dbm: f64,
    #[serde(default = "default_preamble")]
    preamble_symbols: u16,
    #[serde(default = "default_true")]
    explicit_header: bool,
    #[serde(default = "default_true")]
    crc_on: bool,
}

fn default_preamble() -> u16 {
    8
}
fn default_true() -> bool {
    true
}

impl TryFrom<RawRadioConfig> for RadioConfig {
    type Error = PhyError;

    fn try_from(raw: RawRadioConfig) -> Result<Self, Self::Error> {
        let cfg = RadioConfig {
            center_freq_hz: raw.center_freq_hz,
            bandwidth: Bandwidth::try_from(raw.bandwidth_hz)?,
            spreading_factor: SpreadingFactor::new(raw.spreading_factor)?,
            coding_rate: CodingRate::try_from(raw.coding_rate)?,
            tx_power_dbm: raw.tx_power_dbm,
            preamble_symbols: raw.preamble_symbols,
            explicit_header: raw.explicit_header,
            crc_on: raw.crc_on,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<RadioConfig> for RawRadioConfig {
    fn from(cfg: RadioConfig) -> Self {
        RawRadioConfig {
            center_freq_hz: cfg.center_freq_hz,
            bandwidth_hz: cfg.bandwidth.hz(),
            spreading_factor: cfg.spreading_factor.0,
            coding_rate: cfg.coding_rate.denominator(),
            tx_power_dbm: cfg.tx_power_dbm,
            preamble_symbols: cfg.preamble_symbols,
            explicit_header: cfg.explicit_header,
            crc_on: cfg.crc_on,
        }
    }
}

/// Raw link rate SF * BW / 2^SF * CR in bits per second.
pub fn data_rate(cfg: &RadioConfig) -> f64 {
    let sf = f64::from(cfg.spreading_factor.0);
    sf * cfg.bandwidth_hz() / f64::from(1u32 << cfg.spreading_factor.0) * cfg.coding_rate.ratio()
}

/// Number of payload symbols (header included) following the 8 mandatory ones.
fn payload_symbols(cfg: &RadioConfig, payload_bytes: usize) -> f64 {
    let sf = f64::from(cfg.spreading_factor.0);
    let crc = if cfg.crc_on { 16.0 } else { 0.0 };
    let implicit = if cfg.explicit_header { 0.0 } else { 20.0 };
    let de = if cfg.low_data_rate_optimize() { 2.0 } else { 0.0 };
    let numerator = 8.0 * payload_bytes as f64 - 4.0 * sf + 28.0 + crc - implicit;
    let blocks = (numerator / (4.0 * (sf - de))).ceil().max(0.0);
    blocks * f64::from(cfg.coding_rate.denominator())
}

/// Time on air of one frame carrying `payload_bytes`, in seconds.
pub fn airtime(cfg: &RadioConfig, payload_bytes: usize) -> Result<f64, PhyError> {
    if payload_bytes > MAX_PAYLOAD_BYTES {
        return Err(PhyError::PayloadTooLarge(payload_bytes));
    }
    let symbols = f64::from(cfg.preamble_symbols) + 4.25 + 8.0 + payload_symbols(cfg, payload_bytes);
    Ok(symbols * cfg.symbol_time_s())
}

/// Thermal noise floor of the receiver bandwidth, dBm.
pub fn thermal_noise_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

/// Receiver sensitivity -174 + 10 log10(BW) + NF + SNR floor, dBm.
pub fn sensitivity(cfg: &RadioConfig, noise_figure_db: f64) -> f64 {
    thermal_noise_dbm(cfg.bandwidth_hz(), noise_figure_db) + cfg.spreading_factor.snr_limit_db()
}

/// Link margin in dB; non-negative means the budget closes.
pub fn link_margin(tx_power_dbm: f64, antenna_gains_db: f64, path_loss_db: f64, sens_dbm: f64) -> f64 {
    tx_power_dbm + antenna_gains_db - path_loss_db - sens_dbm
}

/// Ordered set of usable center frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub frequencies_hz: Vec<u64>,
    pub channel_width_hz: u64,
    pub discovery_freq_hz: u64,
}

impl ChannelPlan {
    pub fn new(frequencies_hz: Vec<u64>, channel_width_hz: u64, discovery_freq_hz: u64) -> Result<Self, PhyError> {
        let plan = Self { frequencies_hz, channel_width_hz, discovery_freq_hz };
        plan.validate()?;
        Ok(plan)
    }

    /// `count` adjacent channels of `width` starting at the bottom of the band.
    /// The lowest channel doubles as the discovery frequency.
    pub fn contiguous(count: usize, width_hz: u64) -> Result<Self, PhyError> {
        let first = BAND_LOW_HZ as u64 + width_hz / 2;
        let freqs: Vec<u64> = (0..count as u64).map(|i| first + i * width_hz).collect();
        let discovery = *freqs.first().ok_or_else(|| PhyError::InvalidPlan("empty plan".into()))?;
        Self::new(freqs, width_hz, discovery)
    }

    /// The full band at 500 kHz spacing: 52 channels.
    pub fn full_band() -> Self {
        Self::contiguous(52, 500_000).expect("52 x 500 kHz fits the band")
    }

    /// The 10-channel campaign plan.
    pub fn ten_channel() -> Self {
        Self::contiguous(10, 500_000).expect("10 x 500 kHz fits the band")
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        if self.frequencies_hz.is_empty() {
            return Err(PhyError::InvalidPlan("no frequencies".into()));
        }
        for &f in &self.frequencies_hz {
            let half = self.channel_width_hz as f64 / 2.0;
            if (f as f64 - half) < BAND_LOW_HZ - 1e-6 || (f as f64 + half) > BAND_HIGH_HZ + 1e-6 {
                return Err(PhyError::FrequencyOutOfBand(f as f64));
            }
        }
        let mut sorted = self.frequencies_hz.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.frequencies_hz.len() {
            return Err(PhyError::InvalidPlan("duplicate frequency".into()));
        }
        if !self.frequencies_hz.contains(&self.discovery_freq_hz) {
            return Err(PhyError::InvalidPlan(format!(
                "discovery frequency {} not in plan",
                self.discovery_freq_hz
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    pub fn contains(&self, freq_hz: u64) -> bool {
        self.frequencies_hz.contains(&freq_hz)
    }
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self::full_band()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    SingleFrequency,
    Hopping,
}

/// Per-frequency dwell limits for hopping operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellLimit {
    pub max_dwell_s: f64,
    pub window_s: f64,
}

impl Default for DwellLimit {
    fn default() -> Self {
        Self { max_dwell_s: 0.4, window_s: 20.0 }
    }
}

/// Cumulative on-air time on one frequency within one rolling window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwellEntry {
    pub freq_hz: u64,
    pub on_air_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FccRule {
    BandwidthTooNarrow,
    TxPowerTooHigh,
    TooFewChannels,
    DwellExceeded { freq_hz: u64 },
    FrequencyOutOfBand { freq_hz: u64 },
}

impl FccRule {
    pub fn id(&self) -> &'static str {
        match self {
            FccRule::BandwidthTooNarrow => "bandwidth-too-narrow",
            FccRule::TxPowerTooHigh => "tx-power-too-high",
            FccRule::TooFewChannels => "too-few-channels",
            FccRule::DwellExceeded { .. } => "dwell-exceeded",
            FccRule::FrequencyOutOfBand { .. } => "frequency-out-of-band",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FccViolation {
    pub rule: FccRule,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FccVerdict {
    pub violations: Vec<FccViolation>,
}

impl FccVerdict {
    pub fn compliant(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, id: &str) -> bool {
        self.violations.iter().any(|v| v.rule.id() == id)
    }
}

/// Minimum channel count for hopping operation.
pub const MIN_HOPPING_CHANNELS: usize = 25;
/// Minimum bandwidth for single-frequency (digital modulation) operation.
pub const MIN_SINGLE_FREQ_BW_HZ: u32 = 500_000;

pub fn fcc_check(
    cfg: &RadioConfig,
    plan: &ChannelPlan,
    mode: AccessMode,
    dwell_schedule: &[DwellEntry],
    limit: DwellLimit,
) -> FccVerdict {
    let mut violations = Vec::new();
    if cfg.tx_power_dbm > FCC_MAX_TX_DBM {
        violations.push(FccViolation {
            rule: FccRule::TxPowerTooHigh,
            reason: format!("{} dBm exceeds {} dBm", cfg.tx_power_dbm, FCC_MAX_TX_DBM),
        });
    }
    match mode {
        AccessMode::SingleFrequency => {
            if cfg.bandwidth.hz() < MIN_SINGLE_FREQ_BW_HZ {
                violations.push(FccViolation {
                    rule: FccRule::BandwidthTooNarrow,
                    reason: format!(
                        "{} Hz is below the {} Hz minimum for single-frequency use",
                        cfg.bandwidth.hz(),
                        MIN_SINGLE_FREQ_BW_HZ
                    ),
                });
            }
        }
        AccessMode::Hopping => {
            if plan.len() < MIN_HOPPING_CHANNELS {
                violations.push(FccViolation {
                    rule: FccRule::TooFewChannels,
                    reason: format!("{} channels, hopping needs at least {}", plan.len(), MIN_HOPPING_CHANNELS),
                });
            }
            for entry in dwell_schedule {
                if !plan.contains(entry.freq_hz) {
                    violations.push(FccViolation {
                        rule: FccRule::FrequencyOutOfBand { freq_hz: entry.freq_hz },
                        reason: format!("{} Hz is not in the channel plan", entry.freq_hz),
                    });
                }
                if entry.on_air_s > limit.max_dwell_s {
                    violations.push(FccViolation {
                        rule: FccRule::DwellExceeded { freq_hz: entry.freq_hz },
                        reason: format!(
                            "{:.3} s on air at {} Hz exceeds {} s per {} s",
                            entry.on_air_s, entry.freq_hz, limit.max_dwell_s, limit.window_s
                        ),
                    });
                }
            }
        }
    }
    FccVerdict { violations }
}
