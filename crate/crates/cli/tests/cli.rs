use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lorasim"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn ok(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fail(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(!out.status.success(), "{args:?} should fail");
    out
}

fn run_two_node(dir: &Path) -> String {
    ok(&["run", scenario("two_node.toml").to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", "3"])
}

#[test]
fn phy_datarate_bare_and_csv() {
    assert_eq!(ok(&["phy", "datarate"]).trim(), "12500");
    let csv = ok(&["phy", "datarate", "--bw", "125000", "--sf", "7", "--cr", "4/5", "--csv"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bw_hz,sf,cr,power_dbm,payload_bytes,nf_db,data_rate_bps");
    assert!(lines[1].ends_with(",5468.75"), "{}", lines[1]);
}

#[test]
fn phy_sensitivity_and_fcc() {
    let s: f64 = ok(&["phy", "sensitivity", "--nf", "6"]).trim().parse().unwrap();
    assert!((s + 121.0).abs() < 0.1, "{s}");
    assert_eq!(ok(&["phy", "fcc"]).trim(), "compliant");
    assert!(ok(&["phy", "fcc", "--bw", "125000"]).starts_with("bandwidth-too-narrow"));
    let hop = ok(&["phy", "fcc", "--mode", "hopping", "--channels", "10", "--csv"]);
    assert!(hop.contains("too-few-channels"), "{hop}");
}

#[test]
fn bad_radio_parameters_exit_nonzero_with_json() {
    let out = fail(&["phy", "datarate", "--sf", "13"]);
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "phy");
}

#[test]
fn missing_scenario_is_a_structured_error() {
    let out = fail(&["run", "/does/not/exist.toml"]);
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "scenario");
    assert!(err["message"].as_str().unwrap().contains("exist.toml"));
}

#[test]
fn run_exports_and_freqsel_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_two_node(dir.path());
    assert!(summary.starts_with("seed,packets,delivered"));
    for f in ["link_metrics.csv", "nodes.csv", "packets.csv", "gateway.jsonl", "scenario.resolved.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let resolved = std::fs::read_to_string(dir.path().join("scenario.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 3"));

    // a two-node run never campaigns, so feed freqsel a hand-made table
    let metrics = dir.path().join("m.csv");
    std::fs::write(
        &metrics,
        "link_id,freq_hz,interval,noise_p95_dbm,snr_p5_db,rssi_p5_dbm,tx,rx\n\
         2-1,902250000,0,-110,10,-95,10,10\n\
         2-1,902750000,0,-90,-5,-95,10,3\n",
    )
    .unwrap();
    let table = ok(&["freqsel", metrics.to_str().unwrap()]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "rank,freq_hz,score,links,records,shortlist_noise_norm,chosen");
    assert!(lines[1].starts_with("1,902250000,") && lines[1].ends_with("true"), "{table}");
    let lp = ok(&["freqsel", metrics.to_str().unwrap(), "--method", "lowpower", "--k", "1"]);
    assert_eq!(lp.lines().count(), 2, "{lp}");
    let off = ok(&["freqsel", metrics.to_str().unwrap(), "--method", "offline"]);
    assert!(off.contains("902250000"));
    assert_eq!(fail(&["freqsel", metrics.to_str().unwrap(), "--method", "lowpower", "--k", "0"]).status.code(), Some(1));
}

#[test]
fn runs_with_same_seed_match() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_two_node(a.path());
    run_two_node(b.path());
    for f in ["packets.csv", "gateway.jsonl", "nodes.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn cluster_labels_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let mut text = String::from("link_id,freq_hz,interval,noise_p95_dbm,snr_p5_db,rssi_p5_dbm,tx,rx\n");
    for i in 0..8 {
        text += &format!("2-1,902250000,{i},-110,{},-90,10,10\n", 10 + i % 3);
        text += &format!("3-1,902750000,{i},-85,-8,-90,10,{}\n", i % 3);
    }
    std::fs::write(&metrics, text).unwrap();
    let out = ok(&["cluster", metrics.to_str().unwrap(), "--k", "2"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "row,link_id,freq_hz,interval,noise,snr,rssi,prr,cluster,label");
    assert_eq!(lines.len(), 17);
    let labels = ["good", "interference", "fading", "poor"];
    assert!(lines[1..].iter().all(|l| labels.contains(&l.rsplit(',').next().unwrap())), "{out}");
}

#[test]
fn energy_sizing_and_simulation() {
    let sizing = ok(&["energy", "--sizing"]);
    assert!(sizing.contains("storage_requirement,9,Wh"), "{sizing}");
    assert!(sizing.contains("daily_harvest,15,Wh"), "{sizing}");

    let dir = tempfile::tempdir().unwrap();
    let harvest = dir.path().join("h.csv");
    std::fs::write(&harvest, "day,peak_sun_hours\n0,3\n1,0\n2,4.5\n").unwrap();
    let soc = ok(&["energy", "--simulate", harvest.to_str().unwrap()]);
    let lines: Vec<&str> = soc.lines().collect();
    assert_eq!(lines[0], "t_h,battery_wh,soc,up");
    assert!(lines.len() >= 73, "{}", lines.len());
    assert!(fail(&["energy"]).status.code() != Some(0));
}

#[test]
fn footprint_tables() {
    let t = ok(&["footprint", "--model", "l3", "--quant", "f32"]);
    assert_eq!(t.lines().next().unwrap(), "layers,height,width,channels,kib");
    assert_eq!(t.lines().count(), 6);

    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("net.toml");
    std::fs::write(
        &spec,
        "name = \"tiny\"\ninput_hw = [32, 32]\nblock_filters = [8, 16, 32, 64]\npool_rounding = \"floor\"\n",
    )
    .unwrap();
    let custom = ok(&["footprint", "--model", spec.to_str().unwrap(), "--quant", "i8"]);
    assert!(custom.lines().last().unwrap().starts_with("total,"), "{custom}");
    fail(&["footprint", "--model", "/no/such/model.toml"]);
}

#[test]
fn sea_demo_synthetic_and_csv() {
    let out = ok(&["sea-demo", "--dims", "2,4", "--samples", "60", "--input-dim", "6", "--embedding-dim", "8", "--latent", "3"]);
    assert_eq!(out.lines().count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let (f, t) = (dir.path().join("f.csv"), dir.path().join("t.csv"));
    let mut fs = String::from("a,b\n");
    let mut ts = String::from("x,y,z\n");
    for i in 0..20 {
        let (a, b) = (i as f64 * 0.1, ((i * 7) % 5) as f64);
        fs += &format!("{a},{b}\n");
        ts += &format!("{},{},{}\n", a + b, a - b, 2.0 * a);
    }
    std::fs::write(&f, fs).unwrap();
    std::fs::write(&t, ts).unwrap();
    let out = ok(&["sea-demo", "--features", f.to_str().unwrap(), "--teacher", t.to_str().unwrap(), "--dims", "1,2"]);
    assert_eq!(out.lines().next().unwrap(), "d,objective,teacher_space_error,explained_fraction");
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn udp_sink_receives_gateway_records() {
    let sock = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.set_read_timeout(Some(std::time::Duration::from_secs(5))).unwrap();
    let target = sock.local_addr().unwrap().to_string();
    let dir = tempfile::tempdir().unwrap();
    ok(&["run", scenario("two_node.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--udp", &target]);
    let mut buf = [0u8; 2048];
    let n = sock.recv(&mut buf).unwrap();
    let first: serde_json::Value = serde_json::from_slice(&buf[..n]).unwrap();
    let file = std::fs::read_to_string(dir.path().join("gateway.jsonl")).unwrap();
    let expected: serde_json::Value = serde_json::from_str(file.lines().next().unwrap()).unwrap();
    assert_eq!(first, expected);
}
