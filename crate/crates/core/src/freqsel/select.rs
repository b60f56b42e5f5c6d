//! Composite link scoring and the offline, online and low-power selectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{min_max, scale, LinkId, LinkIntervalMetrics};
use super::FreqselError;
use crate::netstack::NodeId;

/// How the normalized noise enters the composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTerm {
    /// `1 - noise`, so quieter frequencies score higher.
    #[default]
    Inverted,
    Raw,
}

/// How per-(link, interval) composites fold into one frequency score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkWeighting {
    /// Mean over each link's intervals, summed over links.
    #[default]
    PerLink,
    /// One mean over all (link, interval) pairs.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "node")]
pub enum Scope {
    #[default]
    NetworkWide,
    /// Links whose receiver is this node.
    Incoming(NodeId),
}

impl Scope {
    pub fn contains(&self, link: LinkId) -> bool {
        match self {
            Scope::NetworkWide => true,
            Scope::Incoming(n) => link.dst == *n,
        }
    }
}

macro_rules! text_enum {
    ($t:ty, $($s:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = FreqselError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(FreqselError::UnknownOption(other.to_string())),
                }
            }
        }
    };
}

text_enum!(NoiseTerm, "inverted" => NoiseTerm::Inverted, "raw" => NoiseTerm::Raw);
text_enum!(LinkWeighting, "per_link" => LinkWeighting::PerLink, "per-link" => LinkWeighting::PerLink, "flat" => LinkWeighting::Flat);

impl FromStr for Scope {
    type Err = FreqselError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "network" | "network_wide" | "global" => Ok(Scope::NetworkWide),
            _ => match s.strip_prefix("node:") {
                Some(n) => n.parse().map(Scope::Incoming).map_err(|_| FreqselError::UnknownOption(s.to_string())),
                None => Err(FreqselError::UnknownOption(s.to_string())),
            },
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::NetworkWide => write!(f, "network"),
            Scope::Incoming(n) => write!(f, "node:{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub noise_term: NoiseTerm,
    pub link_weighting: LinkWeighting,
    /// Only the most recent `n` intervals are considered when set.
    pub n_intervals: Option<u32>,
}

/// Per-metric min/max and imputation means over a measurement population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormContext {
    pub noise: (f64, f64),
    pub snr: (f64, f64),
    pub rssi: (f64, f64),
    /// Population means of the normalized terms, used for absent fields.
    pub mean_noise: f64,
    pub mean_snr: f64,
    pub mean_rssi: f64,
    pub mean_prr: f64,
}

fn present_mean(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        0.5
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

impl NormContext {
    pub fn from_population<'a>(pop: impl IntoIterator<Item = &'a LinkIntervalMetrics>) -> Self {
        let pop: Vec<&LinkIntervalMetrics> = pop.into_iter().collect();
        let col = |f: fn(&LinkIntervalMetrics) -> Option<f64>| -> Vec<f64> { pop.iter().filter_map(|m| f(m)).collect() };
        let noise = col(|m| m.noise_p95_dbm);
        let snr = col(|m| m.snr_p5_db);
        let rssi = col(|m| m.rssi_p5_dbm);
        let prr = col(|m| m.prr());
        let nr = min_max(noise.iter().copied());
        let sr = min_max(snr.iter().copied());
        let rr = min_max(rssi.iter().copied());
        let norm = |v: &[f64], r: (f64, f64)| v.iter().map(|&x| scale(x, r.0, r.1)).collect::<Vec<_>>();
        Self {
            noise: nr,
            snr: sr,
            rssi: rr,
            mean_noise: present_mean(&norm(&noise, nr)),
            mean_snr: present_mean(&norm(&snr, sr)),
            mean_rssi: present_mean(&norm(&rssi, rr)),
            mean_prr: present_mean(&prr),
        }
    }

    /// Normalized (noise, snr, rssi, prr) with absent fields imputed.
    pub fn features(&self, m: &LinkIntervalMetrics) -> [f64; 4] {
        [
            m.noise_p95_dbm.map_or(self.mean_noise, |v| scale(v, self.noise.0, self.noise.1)),
            m.snr_p5_db.map_or(self.mean_snr, |v| scale(v, self.snr.0, self.snr.1)),
            m.rssi_p5_dbm.map_or(self.mean_rssi, |v| scale(v, self.rssi.0, self.rssi.1)),
            m.prr().unwrap_or(self.mean_prr),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyScore {
    pub freq_hz: u64,
    pub composite: f64,
    /// Noise (after inversion if enabled), snr, rssi and prr terms.
    pub components: [f64; 4],
}

pub fn score_composite(m: &LinkIntervalMetrics, ctx: &NormContext, noise_term: NoiseTerm) -> FrequencyScore {
    let [n, s, r, p] = ctx.features(m);
    let n = match noise_term {
        NoiseTerm::Inverted => 1.0 - n,
        NoiseTerm::Raw => n,
    };
    FrequencyScore { freq_hz: m.freq_hz, composite: n + s + r + p, components: [n, s, r, p] }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedFrequency {
    pub freq_hz: u64,
    pub score: f64,
    pub links: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub freq_hz: u64,
    /// Best first; equal scores ordered by ascending frequency.
    pub ranking: Vec<RankedFrequency>,
    /// Candidates with no usable data.
    pub excluded: Vec<u64>,
}

fn rank(scores: BTreeMap<u64, (f64, usize, usize)>, excluded: Vec<u64>) -> Result<Selection, FreqselError> {
    let mut ranking: Vec<RankedFrequency> = scores
        .into_iter()
        .map(|(freq_hz, (score, links, records))| RankedFrequency { freq_hz, score, links, records })
        .collect();
    // stable sort keeps ascending frequency among equal scores
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score));
    let freq_hz = ranking.first().ok_or(FreqselError::NoData)?.freq_hz;
    Ok(Selection { freq_hz, ranking, excluded })
}

fn windowed(records: &[LinkIntervalMetrics], n_intervals: Option<u32>) -> impl Iterator<Item = &LinkIntervalMetrics> {
    let last = records.iter().map(|m| m.interval).max().unwrap_or(0);
    let first = n_intervals.map_or(0, |n| (last + 1).saturating_sub(n));
    records.iter().filter(move |m| m.interval >= first)
}

fn is_active(m: &LinkIntervalMetrics) -> bool {
    m.tx > 0 && !m.link_id.is_scan()
}

/// Ranks frequencies by mean long-term PRR over links.
pub fn offline_select(records: &[LinkIntervalMetrics], candidates: &[u64]) -> Result<Selection, FreqselError> {
    let mut per: BTreeMap<u64, BTreeMap<LinkId, (u64, u64)>> = BTreeMap::new();
    for m in records.iter().filter(|m| is_active(m)) {
        let e = per.entry(m.freq_hz).or_default().entry(m.link_id).or_default();
        e.0 += u64::from(m.rx);
        e.1 += u64::from(m.tx);
    }
    let cands: BTreeSet<u64> = if candidates.is_empty() {
        records.iter().map(|m| m.freq_hz).collect()
    } else {
        candidates.iter().copied().collect()
    };
    let mut scores = BTreeMap::new();
    let mut excluded = Vec::new();
    for f in cands {
        match per.get(&f) {
            Some(links) if !links.is_empty() => {
                let mean = links.values().map(|&(rx, tx)| rx as f64 / tx as f64).sum::<f64>() / links.len() as f64;
                let n = links.len();
                scores.insert(f, (mean, n, n));
            }
            _ => {
                tracing::warn!(freq_hz = f, "no PRR observations; frequency excluded");
                excluded.push(f);
            }
        }
    }
    rank(scores, excluded)
}

/// Ranks frequencies by summed per-link mean composite score. Normalization
/// runs over the active records in scope.
pub fn online_select(records: &[LinkIntervalMetrics], scope: Scope, opts: &ScoreOptions) -> Result<Selection, FreqselError> {
    let pop: Vec<&LinkIntervalMetrics> =
        windowed(records, opts.n_intervals).filter(|m| is_active(m) && scope.contains(m.link_id)).collect();
    let ctx = NormContext::from_population(pop.iter().copied());
    let mut per: BTreeMap<u64, BTreeMap<LinkId, Vec<f64>>> = BTreeMap::new();
    for m in &pop {
        let c = score_composite(m, &ctx, opts.noise_term).composite;
        per.entry(m.freq_hz).or_default().entry(m.link_id).or_default().push(c);
    }
    if per.is_empty() {
        return Err(FreqselError::EmptyScope(scope.to_string()));
    }
    let scores = per
        .into_iter()
        .map(|(f, links)| {
            let n_rec: usize = links.values().map(Vec::len).sum();
            let score = match opts.link_weighting {
                LinkWeighting::PerLink => links.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).sum(),
                LinkWeighting::Flat => links.values().flatten().sum::<f64>() / n_rec as f64,
            };
            (f, (score, links.len(), n_rec))
        })
        .collect();
    rank(scores, Vec::new())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowpowerSelection {
    /// Stage-1 survivors with their normalized mean p95 noise, quietest first.
    pub shortlist: Vec<(u64, f64)>,
    pub selection: Selection,
}

/// Per-frequency mean p95 noise, normalized across frequencies, quietest first.
pub fn rank_by_noise(records: &[LinkIntervalMetrics], scope: Scope, n_intervals: Option<u32>) -> Vec<(u64, f64)> {
    let mut per: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for m in windowed(records, n_intervals).filter(|m| scope.contains(m.link_id)) {
        if let Some(n) = m.noise_p95_dbm {
            let e = per.entry(m.freq_hz).or_default();
            e.0 += n;
            e.1 += 1;
        }
    }
    let freqs: Vec<u64> = per.keys().copied().collect();
    let means: Vec<f64> = per.values().map(|&(s, c)| s / c as f64).collect();
    let (lo, hi) = min_max(means.iter().copied());
    let mut out: Vec<(u64, f64)> = freqs.into_iter().zip(means.iter().map(|&m| scale(m, lo, hi))).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// Noise-only downselection to `k` frequencies, then online selection
/// among them.
pub fn lowpower_select(
    records: &[LinkIntervalMetrics],
    k: usize,
    scope: Scope,
    opts: &ScoreOptions,
) -> Result<LowpowerSelection, FreqselError> {
    if k == 0 {
        return Err(FreqselError::InvalidK);
    }
    let mut shortlist = rank_by_noise(records, scope, opts.n_intervals);
    if shortlist.is_empty() {
        return Err(FreqselError::NoData);
    }
    shortlist.truncate(k);
    let keep: BTreeSet<u64> = shortlist.iter().map(|&(f, _)| f).collect();
    let restricted: Vec<LinkIntervalMetrics> = records.iter().filter(|m| keep.contains(&m.freq_hz)).cloned().collect();
    let selection = online_select(&restricted, scope, opts)?;
    Ok(LowpowerSelection { shortlist, selection })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(src: u32, dst: u32, f: u64, i: u32, n: f64, s: f64, r: f64, tx: u32, rx: u32) -> LinkIntervalMetrics {
        LinkIntervalMetrics {
            link_id: LinkId::new(src, dst),
            freq_hz: f,
            interval: i,
            noise_p95_dbm: Some(n),
            snr_p5_db: Some(s),
            rssi_p5_dbm: Some(r),
            tx,
            rx,
        }
    }

    #[test]
    fn extremes_score_four_and_zero() {
        let best = rec(1, 2, 1, 0, -125.0, 10.0, -90.0, 10, 10);
        let worst = rec(1, 2, 2, 0, -95.0, -10.0, -120.0, 10, 0);
        let ctx = NormContext::from_population([&best, &worst]);
        assert_eq!(score_composite(&best, &ctx, NoiseTerm::Inverted).composite, 4.0);
        assert_eq!(score_composite(&worst, &ctx, NoiseTerm::Inverted).composite, 0.0);
        assert_eq!(score_composite(&best, &ctx, NoiseTerm::Inverted).components, [1.0, 1.0, 1.0, 1.0]);
        let sel = online_select(&[best, worst], Scope::NetworkWide, &ScoreOptions::default()).unwrap();
        assert_eq!(sel.freq_hz, 1);
        assert_eq!(sel.ranking[0].score, 4.0);
    }

    #[test]
    fn absent_terms_take_population_mean() {
        let a = rec(1, 2, 1, 0, -120.0, 0.0, -100.0, 10, 5);
        let b = rec(1, 2, 1, 1, -100.0, 10.0, -90.0, 10, 10);
        let mut c = rec(1, 2, 1, 2, -110.0, 5.0, -95.0, 10, 0);
        c.snr_p5_db = None;
        c.rssi_p5_dbm = None;
        let ctx = NormContext::from_population([&a, &b, &c]);
        let f = ctx.features(&c);
        assert_eq!(f[1], 0.5);
        assert_eq!(f[2], 0.5);
        assert!((ctx.mean_prr - 0.5).abs() < 1e-12);
    }

    #[test]
    fn offline_examples() {
        let mut recs = vec![rec(1, 2, 912, 0, -120.0, 5.0, -100.0, 100, 98), rec(1, 2, 913, 0, -120.0, 5.0, -100.0, 100, 95)];
        assert_eq!(offline_select(&recs, &[]).unwrap().freq_hz, 912);
        recs[1].rx = 98;
        assert_eq!(offline_select(&recs, &[]).unwrap().freq_hz, 912);
        let sel = offline_select(&recs[1..], &[912, 913]).unwrap();
        assert_eq!(sel.freq_hz, 913);
        assert_eq!(sel.excluded, vec![912]);
    }

    #[test]
    fn lowpower_k1_picks_quietest() {
        let recs = vec![
            rec(1, 2, 1, 0, -100.0, 20.0, -80.0, 10, 10),
            rec(1, 2, 2, 0, -120.0, -5.0, -110.0, 10, 2),
            rec(1, 2, 3, 0, -110.0, 5.0, -100.0, 10, 6),
        ];
        let lp = lowpower_select(&recs, 1, Scope::NetworkWide, &ScoreOptions::default()).unwrap();
        assert_eq!(lp.selection.freq_hz, 2);
        assert_eq!(online_select(&recs, Scope::NetworkWide, &ScoreOptions::default()).unwrap().freq_hz, 1);
        assert!(matches!(lowpower_select(&recs, 0, Scope::NetworkWide, &ScoreOptions::default()), Err(FreqselError::InvalidK)));
        let all = lowpower_select(&recs, 10, Scope::NetworkWide, &ScoreOptions::default()).unwrap();
        assert_eq!(all.shortlist.len(), 3);
    }

    #[test]
    fn empty_scope_is_error() {
        let recs = vec![rec(1, 2, 1, 0, -100.0, 20.0, -80.0, 10, 10)];
        assert!(matches!(online_select(&recs, Scope::Incoming(9), &ScoreOptions::default()), Err(FreqselError::EmptyScope(_))));
        assert_eq!(online_select(&recs, Scope::Incoming(2), &ScoreOptions::default()).unwrap().freq_hz, 1);
    }

    #[test]
    fn scope_parse() {
        assert_eq!("network".parse::<Scope>().unwrap(), Scope::NetworkWide);
        assert_eq!("node:7".parse::<Scope>().unwrap(), Scope::Incoming(7));
        assert!("node:x".parse::<Scope>().is_err());
    }
}
