use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mpprl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpprl"))
        .args(args)
        .env("MPPRL_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mpprl(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tuples(path: &Path) -> HashSet<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn gen_link_eval_round_trip_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--records", "1000", "--corrupted", "0.2", "--seed", "5", "--out-dir", s(&data)]);
    for f in ["party1.csv", "party2.csv", "party3.csv", "truth.csv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(data.join("party1.csv")).unwrap().starts_with("rid,given_name,surname,suburb,postcode\n"));

    let mut f1 = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        ok(&["link", "--data-dir", s(&data), "--seed", "5", "--out-dir", s(&out)]);
        let q = ok(&["eval", "--matches", s(&out.join("matches.csv")), "--truth", s(&data.join("truth.csv")), "--out-dir", s(&out)]);
        let q: serde_json::Value = serde_json::from_str(&q).unwrap();
        f1.push(q["f1"].as_f64().unwrap());
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["evaluation"]["f1"].as_f64().unwrap(), f1[f1.len() - 1]);
        assert!(fs::read_to_string(out.join("report.txt")).unwrap().lines().any(|l| l.starts_with("candidates_total=")));
    }
    assert_eq!(f1[0], f1[1]);
    assert!(f1[0] > 0.8, "{f1:?}");
    assert_eq!(fs::read(tmp.path().join("a/matches.csv")).unwrap(), fs::read(tmp.path().join("b/matches.csv")).unwrap());
}

#[test]
fn lai_and_mpam_agree_on_exact_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--records", "400", "--corrupted", "0", "--out-dir", s(&data)]);
    let truth: HashSet<String> = fs::read_to_string(data.join("truth.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split_once(',').unwrap().1.to_string())
        .collect();
    assert_eq!(truth.len(), 200);
    for mode in ["mpam", "lai"] {
        let out = tmp.path().join(mode);
        ok(&["link", "--mode", mode, "--data-dir", s(&data), "--out-dir", s(&out)]);
        let found = tuples(&out.join("matches.csv"));
        assert!(truth.is_subset(&found), "{mode} missed {} duplicates", truth.difference(&found).count());
    }
}

#[test]
fn link_without_truth_writes_pseudonyms() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--records", "60", "--out-dir", s(&data)]);
    fs::remove_file(data.join("truth.csv")).unwrap();
    let out = tmp.path().join("out");
    let kv = ok(&["link", "--data-dir", s(&data), "--format", "kv", "--out-dir", s(&out)]);
    assert!(kv.lines().any(|l| l == "mode=mpam"));
    assert!(!kv.contains("evaluation.f1"));
    let rows = fs::read_to_string(out.join("matches.csv")).unwrap();
    let first = rows.lines().nth(1).expect("some matches");
    assert_eq!(first.split(',').next().unwrap().len(), 32);
}

#[test]
fn filtered_mode_reports_reduction_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--records", "300", "--out-dir", s(&data)]);
    let out = ok(&["link", "--mode", "mpam-f", "--seg-threshold", "0.7", "--data-dir", s(&data), "--out-dir", s(&tmp.path().join("o"))]);
    let r: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["mode"], "mpam-f");
    assert_eq!(r["segment_threshold"], 0.7);
    let rr = r["evaluation"]["rr_f"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rr));
}

#[test]
fn attack_writes_risk_and_sensitivity() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen", "--records", "200", "--out-dir", s(&data)]);
    let out = tmp.path().join("atk");
    let doc: serde_json::Value = serde_json::from_str(&ok(&["attack", "--data-dir", s(&data), "--out-dir", s(&out)])).unwrap();
    let mean = doc["dr_mean"].as_f64().unwrap();
    let mark = doc["dr_marketer"].as_f64().unwrap();
    assert!(0.0 <= mark && mark <= mean && mean <= 1.0);
    assert_eq!(doc["per_position"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(out.join("sensitivity_p1.csv")).unwrap();
    assert!(csv.starts_with("position,dist,freq,sensitivity\n"));
}

#[test]
fn bench_emits_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&[
        "bench", "--sizes", "60,90", "--bench-parties", "3,4", "--modes", "mpam,mpam-f,lai", "--out-dir", s(tmp.path()),
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("mode,parties,records,"));
    assert_eq!(lines.len(), 1 + 3 * 2 * 2);
    let cells: HashSet<(String, String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].into(), f[1].into(), f[2].into())
        })
        .collect();
    assert_eq!(cells.len(), 12);
    assert_eq!(fs::read_to_string(tmp.path().join("bench.csv")).unwrap(), out);
}

#[test]
fn errors_exit_nonzero_without_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = mpprl(&["link", "--data-dir", s(&tmp.path().join("missing")), "--out-dir", s(&out)]);
    assert!(!r.status.success());
    assert!(!out.join("report.json").exists());

    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "[bloom]\nbit_len = ten\n").unwrap();
    let r = mpprl(&["gen", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 2"));

    let r = mpprl(&["link", "--mode", "fastest", "--data-dir", s(tmp.path()), "--out-dir", s(&out)]);
    assert!(!r.status.success());

    let r = mpprl(&["link", "--threshold", "1.5", "--data-dir", s(tmp.path()), "--out-dir", s(&out)]);
    assert!(!r.status.success());
}

#[test]
fn config_file_drives_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(
        &cfg,
        "[protocol]\nparties = 4\nseed = 9\n\n[gen]\nrecords_per_party = 80\ncorrupted = 0\n\n[bloom]\nbit_len = 200\nnum_hashes = 10\n",
    )
    .unwrap();
    let data = tmp.path().join("d");
    let gen = ok(&["gen", "--config", s(&cfg), "--out-dir", s(&data)]);
    assert!(gen.contains("parties=4"));
    let r: serde_json::Value =
        serde_json::from_str(&ok(&["link", "--config", s(&cfg), "--data-dir", s(&data), "--out-dir", s(&tmp.path().join("o"))])).unwrap();
    assert_eq!(r["parties"], 4);
    assert_eq!(r["bit_len"], 200);
    assert_eq!(r["num_hashes"], 10);
    assert!(r["messages"].as_u64().unwrap() >= 12);
}
