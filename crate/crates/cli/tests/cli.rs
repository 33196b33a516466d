use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ecgkey(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgkey"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run ecgkey")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn noiseless_keygen_matches_and_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecgkey(dir.path(), &["simulate", "--model", "bit-flip", "--p", "0", "--blocks", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    for f in ["report.json", "transcript.json", "bob_observation.json", "key_alice.hex", "key_bob.hex"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(
        fs::read(out.join("key_alice.hex")).unwrap(),
        fs::read(out.join("key_bob.hex")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["post_reconciliation_pct"], 0.0);
    assert_eq!(report["pre_reconciliation_pct"], 0.0);
    assert_eq!(report["key_bits"], 180);
}

#[test]
fn independent_bits_mismatch_and_trip_the_failure_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecgkey(dir.path(), &["simulate", "--model", "bit-flip", "--p", "0.5", "--blocks", "5"]);
    assert_eq!(code(&o), 2);
    let o = ecgkey(
        dir.path(),
        &["simulate", "--model", "bit-flip", "--p", "0.5", "--blocks", "5", "--max-failure-rate", "0.1"],
    );
    assert_eq!(code(&o), 4);
}

#[test]
fn configuration_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ecgkey(dir.path(), &["keygen", "--n", "161"])), 3);
    assert_eq!(code(&ecgkey(dir.path(), &["keygen", "--no-such-flag"])), 3);
    assert_eq!(code(&ecgkey(dir.path(), &["simulate", "--model", "gaussian", "--rho", "1.0"])), 3);
    assert_eq!(code(&ecgkey(dir.path(), &["simulate", "--model", "bit-flip"])), 3);
    assert_eq!(code(&ecgkey(dir.path(), &["keygen", "--config", "missing.json"])), 3);
    fs::write(dir.path().join("bad.json"), r#"{"b": 4, "typo": 1}"#).unwrap();
    assert_eq!(code(&ecgkey(dir.path(), &["keygen", "--config", "bad.json"])), 3);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"source": {"kind": "bit_flip", "p": 0.0, "blocks": 4}, "M": 150}"#,
    )
    .unwrap();
    let o = ecgkey(dir.path(), &["keygen", "--config", "run.json", "--m", "148"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/transcript.json")).unwrap()).unwrap();
    assert_eq!(t["code"]["syndrome_bits"], 148);
    assert_eq!(t["syndromes"].as_array().unwrap().len(), 4);
}

#[test]
fn sweep_writes_one_row_per_pair_and_m() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("ecg.json"),
        r#"{"source": {"kind": "ecg", "blocks": 2, "leads": 3}}"#,
    )
    .unwrap();
    let o = ecgkey(dir.path(), &["sweep", "--config", "ecg.json", "--m-values", "142,150"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("out/sweep.csv")).unwrap();
    let headers = rd.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let pairs: Vec<(String, String, String)> = rows
        .iter()
        .map(|r| (r[col("alice")].to_owned(), r[col("bob")].to_owned(), r[col("m")].to_owned()))
        .collect();
    assert_eq!(pairs[0], ("L1".into(), "L2".into(), "142".into()));
    assert_eq!(pairs[1], ("L1".into(), "L2".into(), "150".into()));
    assert_eq!(pairs[5], ("L2".into(), "L3".into(), "150".into()));
    for r in &rows {
        let m: f64 = r[col("m")].parse().unwrap();
        let mean_ipi: f64 = r[col("mean_ipi_s")].parse().unwrap();
        let rate: f64 = r[col("key_rate_bps")].parse().unwrap();
        assert!((rate - (160.0 - m) / 160.0 * 4.0 / mean_ipi).abs() < 1e-9);
    }
}

#[test]
fn designed_quantizer_can_be_reloaded() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecgkey(dir.path(), &["quantize-design", "--output", "q.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ecgkey(dir.path(), &["keygen", "--quantizer", "load:q.json", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ecgkey(dir.path(), &["keygen", "--out", "b"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(dir.path().join("a/key_alice.hex")).unwrap(),
        fs::read(dir.path().join("b/key_alice.hex")).unwrap()
    );
}

#[test]
fn keygen_from_ipi_files() {
    let dir = tempfile::tempdir().unwrap();
    let (mut a, mut b) = (String::new(), String::new());
    for i in 0..400 {
        let v = 800.0 + 60.0 * ((i as f64) * 0.37).sin() + 25.0 * ((i as f64) * 1.9).cos();
        a.push_str(&format!("{:.1}\n", v));
        b.push_str(&format!("{:.1}\n", v + if i % 7 == 0 { 3.0 } else { 0.0 }));
    }
    fs::write(dir.path().join("a.csv"), a).unwrap();
    fs::write(dir.path().join("b.csv"), b).unwrap();
    let o = ecgkey(dir.path(), &["keygen", "--alice-ipis", "a.csv", "--bob-ipis", "b.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tampered_transcript_is_detected_on_replay() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecgkey(dir.path(), &["simulate", "--model", "gaussian", "--rho", "0.97", "--blocks", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let replay = |extra: &[&str]| {
        let mut args = vec![
            "replay",
            "--transcript",
            "out/transcript.json",
            "--observation",
            "out/bob_observation.json",
        ];
        args.extend_from_slice(extra);
        ecgkey(dir.path(), &args)
    };
    assert_eq!(code(&replay(&["--bob-key", "out/key_bob.hex"])), 0);
    // Bob's key compared against Alice's file still matches when the keys agree.
    assert_eq!(code(&replay(&["--bob-key", "out/key_alice.hex"])), 0);
    fs::write(dir.path().join("other.hex"), "18:00000\n").unwrap();
    assert_eq!(code(&replay(&["--bob-key", "other.hex"])), 2);
}
