use std::path::{Path, PathBuf};
use std::process::Command;

use num_complex::Complex64;
use qbarrier_cli::{bundled_corpus, load_config, AnyCertificate, Job, Suite};
use qbarrier_core::templates::{BarrierTemplate, Certificate, Flavor, Monomial};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qbarrier"))
}

fn corpus(name: &str) -> PathBuf {
    bundled_corpus().join(format!("{name}.cfg"))
}

fn have_z3() -> bool {
    let ok = Command::new("z3").arg("-version").output().is_ok();
    if !ok {
        eprintln!("z3 not found; skipping solver-backed test");
    }
    ok
}

fn z_cert(b: f64, gamma: f64) -> AnyCertificate {
    let t = BarrierTemplate::new(8, vec![Monomial::constant(), Monomial::prob(0)]).unwrap();
    AnyCertificate::Polynomial(
        Certificate::new(
            t,
            vec![vec![Complex64::new(b, 0.0), Complex64::new(-9.99934, 0.0)]],
            Flavor::FiniteHorizon {
                horizon: 6,
                gamma,
                lambda: 5.0,
                delta: 0.0,
            },
        )
        .unwrap(),
    )
}

fn write_cert(dir: &Path, name: &str, c: &AnyCertificate) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(c).unwrap()).unwrap();
    p
}

#[test]
fn corpus_covers_every_row_and_builds() {
    let mut per_suite = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(bundled_corpus()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(
            path.file_stem().unwrap().to_str().unwrap(),
            cfg.name,
            "file name matches job name"
        );
        match cfg.build().unwrap() {
            Job::Circuit { problem, synth } => {
                assert_eq!(problem.dim(), 1 << cfg.qubits());
                assert!(synth.samples.total() > 0);
            }
            Job::Grover { samples, .. } => assert!(samples > 0),
        }
        *per_suite.entry(cfg.suite.unwrap().name()).or_insert(0) += 1;
    }
    assert_eq!(per_suite["infinite"], 22);
    assert_eq!(per_suite["finite"], 11);
    assert_eq!(per_suite["grover"], 4);
    let infinite = qbarrier_cli::bench::suite_jobs(&bundled_corpus(), Suite::Infinite).unwrap();
    assert!(infinite
        .iter()
        .any(|(_, c)| c.name.starts_with("grover") && c.expected.as_deref() == Some("unsolved")));
}

#[test]
fn malformed_region_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(corpus("zgate3_finite"))
        .unwrap()
        .replace("prob(0) >= 0.9", "prob(0) >> 0.9");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("configuration error"), "{err}");
    assert!(err.contains("bad.cfg"), "{err}");
}

#[test]
fn unknown_key_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(corpus("zgate3_finite"))
        .unwrap()
        .replace("degree = 2", "degre = 2");
    let cfg = dir.path().join("typo.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = bin()
        .args(["synth", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("degre"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn synth_zgate_writes_a_solved_report() {
    if !have_z3() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth", "--config"])
        .arg(corpus("zgate3_finite"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["status"], "solved");
    let conds = report["conditions"].as_array().unwrap();
    assert_eq!(conds.len(), 5);
    assert!(conds.iter().all(|c| c["verdict"] == "verified"));
    assert!(dir.path().join("smt").join("init.smt2").exists());
    assert_eq!(report["config"]["name"], "zgate3_finite");
    assert!(String::from_utf8_lossy(&out.stdout).contains("solved"));

    // The report's certificate verifies on its own.
    let v = bin()
        .args(["verify", "--config"])
        .arg(corpus("zgate3_finite"))
        .arg("--certificate")
        .arg(dir.path().join("report.json"))
        .arg("--out")
        .arg(dir.path().join("v"))
        .output()
        .unwrap();
    assert_eq!(v.status.code(), Some(0));
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !k.ends_with("seconds"));
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn reports_are_reproducible_modulo_timing() {
    if !have_z3() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| -> Value {
        let d = dir.path().join(sub);
        let s = bin()
            .args(["synth", "--seed", "7", "--config"])
            .arg(corpus("hadamard1_finite_t1"))
            .arg("--out")
            .arg(&d)
            .status()
            .unwrap();
        assert_eq!(s.code(), Some(0));
        let mut v: Value =
            serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
        strip_timing(&mut v);
        v
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn verify_accepts_the_z_certificate_and_rejects_tampering() {
    if !have_z3() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let run = |cert: &Path, sub: &str| {
        bin()
            .args(["verify", "--config"])
            .arg(corpus("zgate3_finite"))
            .arg("--certificate")
            .arg(cert)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap()
    };
    let good = write_cert(dir.path(), "good.json", &z_cert(12.99994, 4.00054));
    let out = run(&good, "good");
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );

    // Constant lowered by 10: at |001⟩, B = 2.99994 < λ = 5.
    let bad = write_cert(dir.path(), "bad.json", &z_cert(2.99994, 4.00054));
    let out = run(&bad, "bad");
    assert_eq!(out.status.code(), Some(1));
    let rep: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("bad").join("verify.json")).unwrap(),
    )
    .unwrap();
    let unsafe_row = rep["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["condition"] == "unsafe")
        .unwrap()
        .clone();
    assert_eq!(unsafe_row["verdict"], "refuted");
}

#[test]
fn verify_rejects_a_wrong_dimension_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let t = BarrierTemplate::new(2, vec![Monomial::constant(), Monomial::prob(0)]).unwrap();
    let c = AnyCertificate::Polynomial(
        Certificate::new(
            t,
            vec![vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]],
            Flavor::Invariant,
        )
        .unwrap(),
    );
    let p = write_cert(dir.path(), "small.json", &c);
    let out = bin()
        .args(["verify", "--solver-cmd", "z3 {file}", "--config"])
        .arg(corpus("zgate3_finite"))
        .arg("--certificate")
        .arg(&p)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(out.status.code().unwrap() > 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

fn sample(dir: &Path, name: &str, count: &str) -> std::process::Output {
    bin()
        .args(["sample", "--region", "global", "--count", count, "--config"])
        .arg(corpus("zgate3_finite"))
        .arg("--out")
        .arg(dir.join(name))
        .output()
        .unwrap()
}

#[test]
fn sample_writes_normalized_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sample(dir.path(), "a.csv", "10").status.code(), Some(0));
    assert_eq!(sample(dir.path(), "b.csv", "10").status.code(), Some(0));
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(
        a,
        std::fs::read_to_string(dir.path().join("b.csv")).unwrap()
    );
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with("region,re0,im0"));
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], "global");
        let norm: f64 = cells[1..]
            .iter()
            .map(|x| x.parse::<f64>().unwrap().powi(2))
            .sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }
    let zero = sample(dir.path(), "c.csv", "0");
    assert!(zero.status.code().unwrap() > 2);
}

#[test]
fn bench_single_repetition_has_zero_spread() {
    if !have_z3() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    std::fs::create_dir(&corpus_dir).unwrap();
    std::fs::copy(corpus("grover5_m8"), corpus_dir.join("grover5_m8.cfg")).unwrap();
    let out = bin()
        .args([
            "bench",
            "--suite",
            "grover",
            "--repetitions",
            "1",
            "--corpus",
        ])
        .arg(&corpus_dir)
        .arg("--out")
        .arg(dir.path().join("b"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("grover5_m8"));
    assert!(table.contains("solved"));
    assert!(table.contains("± 0.000"));
    let csv = std::fs::read_to_string(dir.path().join("b").join("bench_grover.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}
