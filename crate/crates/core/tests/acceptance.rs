//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lorasim::channel::InterfererSpec;
use lorasim::energy::{daily_harvest, storage_requirement, total_power, HarvesterSpec, PowerProfile};
use lorasim::freqsel::{
    cluster_links, lowpower_select, online_select, LinkId, LinkIntervalMetrics, RegimeLabel, ScoreOptions, Scope,
};
use lorasim::harness::{export, load_scenario, run, Method, ScenarioSpec};
use lorasim::mlmodel::sea::{fit_linear_student, pca_fit, sea_objective};
use lorasim::mlmodel::{footprint_table, static_size_bytes, ConvStackSpec, Quant};
use lorasim::netstack::RoundNetwork;
use lorasim::phy::{self, Bandwidth, ChannelPlan, CodingRate, RadioConfig, SpreadingFactor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

// ---- 1 -------------------------------------------------------------------

fn data_rate_table() -> Outcome {
    let t0 = Instant::now();
    // (bandwidth Hz, SF, CR denominator, printed kbps)
    let rows = [(250_000, 8, 6, 5.208), (500_000, 7, 5, 21.875), (500_000, 8, 5, 12.5)];
    let mut out = Vec::new();
    for (bw, sf, cr, kbps) in rows {
        let cfg = RadioConfig::new(
            915e6,
            Bandwidth::try_from(bw).unwrap(),
            SpreadingFactor::new(sf).unwrap(),
            CodingRate::try_from(cr).unwrap(),
            14.0,
        )
        .unwrap();
        let bps = phy::data_rate(&cfg);
        if (bps - kbps * 1000.0).abs() > 1.0 {
            return Err(format!("({bw}, SF{sf}, 4/{cr}) gives {bps} bps, printed {kbps} kbps"));
        }
        out.push(format!("{bps:.1}"));
    }
    let dt = t0.elapsed();
    check(dt < Duration::from_secs(1), format!("{} bps in {dt:?}", out.join(", ")), format!("took {dt:?}"))
}

// ---- 2 -------------------------------------------------------------------

fn sensitivity_anchor() -> Outcome {
    let s = phy::sensitivity(&RadioConfig::deployed(), 6.0);
    check((s + 121.0).abs() <= 0.1, format!("{s:.2} dBm"), format!("{s} dBm is not -121.0 +- 0.1"))
}

// ---- 3 -------------------------------------------------------------------

fn footprint_tables() -> Outcome {
    let t0 = Instant::now();
    let printed: [(&str, ConvStackSpec, Quant, [u64; 5]); 3] = [
        ("L3 f32", ConvStackSpec::l3(), Quant::F32, [12736, 6336, 3136, 1536, 47488]),
        ("L3 i8", ConvStackSpec::l3(), Quant::I8, [3184, 1584, 784, 384, 11872]),
        ("SONYC-L3 i8", ConvStackSpec::sonyc_l3(), Quant::I8, [102, 52, 26, 14, 388]),
    ];
    let mut matched = 0;
    for (name, spec, q, want) in printed {
        let got: Vec<u64> = footprint_table(&spec, q).unwrap().iter().map(|r| r.kib).collect();
        if got != want {
            return Err(format!("{name}: {got:?} vs printed {want:?}"));
        }
        matched += got.len();
    }
    let mb = static_size_bytes(&ConvStackSpec::sonyc_l3(), 1).unwrap() as f64 / 1e6;
    let dt = t0.elapsed();
    check(
        (1.15..=1.19).contains(&mb) && dt < Duration::from_secs(1),
        format!("{matched}/15 cells exact, static {mb:.3} MB, {dt:?}"),
        format!("static size {mb} MB or runtime {dt:?} out of bounds"),
    )
}

// ---- 4 -------------------------------------------------------------------

fn harvester_arithmetic() -> Outcome {
    let storage = storage_requirement(0.1, 72.0, 0.8).unwrap();
    let harvest = daily_harvest(&HarvesterSpec { panel_w: 5.0, peak_sun_hours_per_day: 3.0, ..Default::default() });
    check(
        storage == 9.0 && harvest == 15.0,
        format!("storage {storage} Wh, daily harvest {harvest} Wh"),
        format!("storage {storage} Wh, daily harvest {harvest} Wh"),
    )
}

// ---- 5 -------------------------------------------------------------------

fn power_budget() -> Outcome {
    let p = total_power(&PowerProfile::default());
    check(p == 107.0, format!("{p} mW"), format!("{p} mW"))
}

// ---- 6 -------------------------------------------------------------------

fn idle_duty_cycle() -> Outcome {
    let mut spec = ScenarioSpec::line(1, 3600.0, 1, 300.0);
    spec.traffic.enabled = false;
    let r = run(&spec).map_err(|e| e.to_string())?;
    let d = r.mean_duty_cycle().unwrap();
    check((0.010..=0.012).contains(&d), format!("measured {d:.5}"), format!("measured {d}"))
}

// ---- 7 -------------------------------------------------------------------

/// Straight evaluation of the definition: min-max normalize each metric over
/// the active records, impute absent fields with the normalized population
/// mean, add (1 - noise) + snr + rssi + prr, average per link per frequency,
/// sum over links, take the best frequency (lowest on ties).
fn brute_force(records: &[LinkIntervalMetrics]) -> (u64, BTreeMap<u64, f64>) {
    let active: Vec<&LinkIntervalMetrics> = records.iter().filter(|m| m.tx > 0).collect();
    let get = |m: &LinkIntervalMetrics, k: usize| -> Option<f64> {
        match k {
            0 => m.noise_p95_dbm,
            1 => m.snr_p5_db,
            2 => m.rssi_p5_dbm,
            _ => Some(f64::from(m.rx) / f64::from(m.tx)),
        }
    };
    let mut lo = [f64::MAX; 4];
    let mut hi = [f64::MIN; 4];
    for m in &active {
        for k in 0..3 {
            if let Some(v) = get(m, k) {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
    }
    let norm = |k: usize, v: f64| if k == 3 { v } else if hi[k] > lo[k] { (v - lo[k]) / (hi[k] - lo[k]) } else { 0.5 };
    let mut mean = [0.5; 4];
    for (k, slot) in mean.iter_mut().enumerate() {
        let vals: Vec<f64> = active.iter().filter_map(|m| get(m, k)).map(|v| norm(k, v)).collect();
        if !vals.is_empty() {
            *slot = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    let mut sums: BTreeMap<u64, BTreeMap<LinkId, (f64, f64)>> = BTreeMap::new();
    for m in &active {
        let t: Vec<f64> = (0..4).map(|k| get(m, k).map_or(mean[k], |v| norm(k, v))).collect();
        let c = (1.0 - t[0]) + t[1] + t[2] + t[3];
        let e = sums.entry(m.freq_hz).or_default().entry(m.link_id).or_insert((0.0, 0.0));
        e.0 += c;
        e.1 += 1.0;
    }
    let scores: BTreeMap<u64, f64> = sums.iter().map(|(&f, links)| (f, links.values().map(|(s, n)| s / n).sum())).collect();
    let mut best = (0, f64::MIN);
    for (&f, &s) in &scores {
        if s > best.1 {
            best = (f, s);
        }
    }
    (best.0, scores)
}

fn fixture(rng: &mut ChaCha8Rng) -> Vec<LinkIntervalMetrics> {
    let n_links = rng.random_range(1..=5u32);
    let n_int = rng.random_range(1..=20u32);
    let n_freq = rng.random_range(2..=10u64);
    let mut out = Vec::new();
    for l in 0..n_links {
        for f in 0..n_freq {
            for i in 0..n_int {
                let tx = rng.random_range(0..=10u32);
                let rx = rng.random_range(0..=tx);
                out.push(LinkIntervalMetrics {
                    link_id: LinkId::new(l + 2, 1 + l % 2),
                    freq_hz: 902_750_000 + f * 500_000,
                    interval: i,
                    noise_p95_dbm: Some(rng.random_range(-127.0..-90.0)),
                    snr_p5_db: (rx > 0).then(|| rng.random_range(-15.0..12.0)),
                    rssi_p5_dbm: (rx > 0).then(|| rng.random_range(-125.0..-80.0)),
                    tx,
                    rx,
                });
            }
        }
    }
    out
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E1EC7);
    let opts = ScoreOptions::default();
    let (mut agree, mut lp_agree) = (0, 0);
    for case in 0..50 {
        let recs = fixture(&mut rng);
        let (want, scores) = brute_force(&recs);
        let sel = online_select(&recs, Scope::NetworkWide, &opts).map_err(|e| format!("case {case}: {e}"))?;
        let scores_match = sel.ranking.iter().all(|r| (r.score - scores[&r.freq_hz]).abs() <= 1e-9);
        if sel.freq_hz == want && scores_match && sel.ranking.len() == scores.len() {
            agree += 1;
        }
        let n_freq = recs.iter().map(|m| m.freq_hz).collect::<std::collections::BTreeSet<_>>().len();
        let lp = lowpower_select(&recs, n_freq, Scope::NetworkWide, &opts).map_err(|e| format!("case {case}: {e}"))?;
        if lp.selection == sel {
            lp_agree += 1;
        }
    }
    check(
        agree == 50 && lp_agree == 50,
        format!("online = brute force on {agree}/50, lowpower(k=|F|) = online on {lp_agree}/50"),
        format!("online = brute force on {agree}/50, lowpower(k=|F|) = online on {lp_agree}/50"),
    )
}

// ---- 8 -------------------------------------------------------------------

fn interfered_line(seed: u64, method: Method) -> (ScenarioSpec, u64) {
    let mut spec = ScenarioSpec::line(seed, 3600.0, 7, 450.0);
    spec.plan = ChannelPlan::ten_channel();
    let bad = spec.initial_rx_freq();
    let w = spec.plan.channel_width_hz as f64;
    spec.channel.interferers.push(InterfererSpec::narrowband(bad as f64, w, -95.0));
    // keep the line a line: only adjacent nodes hear each other
    spec.channel.max_range_m = Some(600.0);
    spec.freqsel.method = method;
    (spec, bad)
}

fn interference_avoidance() -> Outcome {
    let t0 = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for method in [Method::Online, Method::Lowpower] {
        let (mut avoided, mut delivered, mut finished) = (0, 0.0, 0.0);
        let mut worst: f64 = 1.0;
        for seed in 0..20 {
            let (spec, bad) = interfered_line(1000 + seed, method);
            let r = run(&spec).map_err(|e| e.to_string())?;
            let Some(sel) = r.selections.last() else { continue };
            if sel.freq_hz != bad {
                avoided += 1;
            }
            let after = sel.t_s + spec.freqsel.flood_margin_s;
            let done: Vec<_> = r
                .packets
                .iter()
                .filter(|p| p.created_s >= after && p.outcome != lorasim::harness::Outcome::InFlight)
                .collect();
            let ok_n = done.iter().filter(|p| p.outcome == lorasim::harness::Outcome::Delivered).count() as f64;
            delivered += ok_n;
            finished += done.len() as f64;
            if !done.is_empty() {
                worst = worst.min(ok_n / done.len() as f64);
            }
        }
        let ratio = delivered / finished.max(1.0);
        ok &= avoided >= 19 && ratio >= 0.95;
        lines.push(format!("{method:?}: avoided {avoided}/20, delivery after adaptation {ratio:.3} (worst run {worst:.3})"));
    }
    let dt = t0.elapsed();
    ok &= dt < Duration::from_secs(120);
    let msg = format!("{}; {dt:.1?}", lines.join("; "));
    check(ok, msg.clone(), msg)
}

// ---- 9 -------------------------------------------------------------------

fn self_stabilization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57AB1E);
    let mut ok = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut net = RoundNetwork::random_connected(10, 0.2, &mut rng);
        net.corrupt(&mut rng);
        net.distributed_reset(net.base);
        let bound = 4 * net.diameter();
        if let Some(rounds) = net.run_until_stable(bound) {
            ok += 1;
            worst = worst.max(rounds as f64 / bound as f64);
        }
    }
    check(
        ok == 100,
        format!("100/100 restored, slowest used {:.0}% of the 4*diameter budget", worst * 100.0),
        format!("{ok}/100 restored"),
    )
}

// ---- 10 ------------------------------------------------------------------

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn export_digest(spec: &ScenarioSpec) -> Result<Vec<(String, String)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = run(spec).map_err(|e| e.to_string())?;
    let mut files = export(&report, dir.path()).map_err(|e| e.to_string())?;
    files.sort();
    files
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| e.to_string())?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), hex::encode(Sha256::digest(bytes))))
        })
        .collect()
}

fn determinism() -> Outcome {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err("no scenarios found".into());
    }
    for p in &paths {
        let spec = load_scenario(p).map_err(|e| format!("{}: {e}", p.display()))?;
        let (a, b) = (export_digest(&spec)?, export_digest(&spec)?);
        if a != b {
            return Err(format!("{} differs between runs", p.display()));
        }
    }
    Ok(format!("{} scenarios, byte-identical exports", paths.len()))
}

// ---- 11 ------------------------------------------------------------------

fn student_fit_numerics() -> Outcome {
    let mut g = ChaCha8Rng::seed_from_u64(0x5EA);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut g));
    let f: DMatrix<f64> = gauss(200, 12);
    let w0: DMatrix<f64> = gauss(12, 6);
    let t = &f * &w0;
    let student = fit_linear_student(&f, &t).map_err(|e| e.to_string())?;
    let rel = student.residual / t.norm_squared();

    // central differences of ||F W - T||^2 at the solution
    let obj = |w: &DMatrix<f64>| sea_objective(&(&f * w), &t).unwrap();
    let h = 1e-6;
    let mut grad = DMatrix::zeros(12, 6);
    for i in 0..12 {
        for j in 0..6 {
            let mut up = student.weights.clone();
            let mut dn = student.weights.clone();
            up[(i, j)] += h;
            dn[(i, j)] -= h;
            grad[(i, j)] = (obj(&up) - obj(&dn)) / (2.0 * h);
        }
    }
    let scale = 2.0 * (f.transpose() * &t).norm();
    let gnorm = grad.norm();

    let teacher: DMatrix<f64> = gauss(150, 16);
    let pca = pca_fit(&teacher, 6).map_err(|e| e.to_string())?;
    let ortho = (pca.axes.transpose() * &pca.axes - DMatrix::<f64>::identity(6, 6)).abs().max();

    let msg = format!("relative residual {rel:.2e}, gradient {gnorm:.2e} vs scale {scale:.2e}, orthonormality {ortho:.2e}");
    check(rel <= 1e-9 && gnorm <= 1e-5 * scale && ortho <= 1e-9, msg.clone(), msg)
}

// ---- 12 ------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum Regime {
    Clean,
    Interference,
    Fading,
    Weak,
}

fn regime_corpus(seed: u64) -> (Vec<LinkIntervalMetrics>, Vec<Regime>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs = Vec::new();
    let mut truth = Vec::new();
    let draw = |rng: &mut ChaCha8Rng, mean: f64, sd: f64| Normal::new(mean, sd).unwrap().sample(rng);
    // (regime, noise, snr, rssi, prr range)
    let regimes = [
        (Regime::Clean, -125.0, 9.0, -102.0, (0.92, 1.0)),
        (Regime::Interference, -95.0, -11.0, -104.0, (0.0, 0.3)),
        (Regime::Fading, -125.0, 7.0, -104.0, (0.15, 0.5)),
        (Regime::Weak, -124.0, -4.0, -117.0, (0.5, 0.85)),
    ];
    for (r, (regime, noise, snr, rssi, prr)) in regimes.into_iter().enumerate() {
        for i in 0..150u32 {
            let tx = 20;
            let rx = (rng.random_range(prr.0..prr.1) * f64::from(tx)).round() as u32;
            recs.push(LinkIntervalMetrics {
                link_id: LinkId::new(10 + r as u32, 1 + i % 3),
                freq_hz: 902_750_000 + u64::from(i % 10) * 500_000,
                interval: i,
                noise_p95_dbm: Some(draw(&mut rng, noise, 1.5)),
                snr_p5_db: (rx > 0).then(|| draw(&mut rng, snr, 1.5)),
                rssi_p5_dbm: (rx > 0).then(|| draw(&mut rng, rssi, 2.0)),
                tx,
                rx: rx.min(tx),
            });
            truth.push(regime);
        }
    }
    (recs, truth)
}

fn clustering_regimes() -> Outcome {
    let (recs, truth) = regime_corpus(12);
    let (idx, clustering) = cluster_links(&recs, 8, 10, 0xC1).map_err(|e| e.to_string())?;
    let frac = |regime: Regime, label: RegimeLabel| {
        let pts: Vec<usize> = (0..idx.len()).filter(|&p| truth[idx[p]] == regime).collect();
        pts.iter().filter(|&&p| clustering.point_label(p) == label).count() as f64 / pts.len() as f64
    };
    let (fi, ff) = (frac(Regime::Interference, RegimeLabel::Interference), frac(Regime::Fading, RegimeLabel::Fading));
    let msg = format!("interference points labeled interference {:.1}%, deep-fade points labeled fading {:.1}%", fi * 100.0, ff * 100.0);
    check(fi >= 0.9 && ff >= 0.9, msg.clone(), msg)
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("PHY data-rate table", data_rate_table),
        ("sensitivity anchor", sensitivity_anchor),
        ("footprint tables", footprint_tables),
        ("harvester arithmetic", harvester_arithmetic),
        ("power budget", power_budget),
        ("MAC duty cycle", idle_duty_cycle),
        ("selection oracle equivalence", selection_oracle),
        ("interference avoidance", interference_avoidance),
        ("self-stabilization", self_stabilization),
        ("determinism", determinism),
        ("student fit numerics", student_fit_numerics),
        ("clustering regimes", clustering_regimes),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL {:>2} {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
