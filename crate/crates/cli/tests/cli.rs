use std::path::{Path, PathBuf};
use std::process::Command;

use ipslab_cli::output::read_csv;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ipslab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ipslab")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let (code, _, err) = ipslab(&args);
    (code, err)
}

#[test]
fn shipped_configs_have_expected_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, expected) in [
        ("glauber_heat_bath", 0),
        ("glauber_metropolis", 0),
        ("cyclic_clock", 0),
        ("exclusion", 0),
        ("flip", 0),
        ("inline", 0),
        ("contact", 1),
    ] {
        let cfg = configs().join(format!("{name}.toml"));
        let (code, err) = run(&cfg, &tmp.path().join(name), &[]);
        assert_eq!(code, expected, "{name}: {err}");
    }
    let err = run(&configs().join("contact.toml"), &tmp.path().join("c2"), &[]).1;
    assert!(err.contains("FAIL conditions: no trap states"));
    assert!(err.contains("witness: rule 0 context 121 target 1"));
}

#[test]
fn glauber_decay_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    assert_eq!(run(&configs().join("glauber_heat_bath.toml"), &out, &[]).0, 0);
    let (header, rows) = read_csv(&out.join("decay.csv")).unwrap();
    assert_eq!(&header[..2], &["t", "h"]);
    assert_eq!(header.last().unwrap(), "violation");
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.last().unwrap() == "false"));
    let h: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    assert!(h[49] < 1e-6);
    let text = std::fs::read_to_string(out.join("decay.csv")).unwrap();
    assert!(text.starts_with("# ipslab "));
    assert!(text.contains("# seed 1\n"));
}

#[test]
fn clock_condition_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    assert_eq!(run(&configs().join("cyclic_clock.toml"), &out, &[]).0, 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("conditions.json")).unwrap()).unwrap();
    let r = &v["result"];
    assert_eq!(r["no_traps"], true);
    assert_eq!(r["reversible"], false);
    assert_eq!(r["irreducible"], true);
    assert_eq!(r["gibbs_stationary"], true);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("flip.toml")).unwrap();
    std::fs::write(&bad, text.replace("rate = 1.0", "rate = 1.0\nbeta = 2.0")).unwrap();
    let (code, err) = run(&bad, &tmp.path().join("o"), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("model.beta"), "{err}");

    std::fs::write(&bad, "suites = [\"decay\"\n").unwrap();
    let (code, err) = run(&bad, &tmp.path().join("o"), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("line 1"), "{err}");

    let (code, _) = run(&tmp.path().join("missing.toml"), &tmp.path().join("o"), &[]);
    assert_eq!(code, 2);

    std::fs::write(&bad, text.replace("sides = [7]", "sides = [30]")).unwrap();
    assert_eq!(run(&bad, &tmp.path().join("o"), &[]).0, 2);
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("glauber_metropolis.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(run(&cfg, &a, &["--seed", "11"]).0, 0);
    assert_eq!(run(&cfg, &b, &["--seed", "11", "--parallel-suites", "--threads", "2"]).0, 0);
    assert_eq!(run(&cfg, &c, &["--seed", "12"]).0, 0);
    for name in ["decay.csv", "jensen.csv", "gtilde.csv", "attractor.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
        assert_ne!(x, std::fs::read(c.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn emit_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    assert_eq!(run(&configs().join("glauber_heat_bath.toml"), &out, &[]).0, 0);
    let (code, stdout, _) = ipslab(&["emit-plots", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 3);
    let (h, rows) = read_csv(&out.join("plots/decay.csv")).unwrap();
    assert_eq!(h, ["t", "h", "g"]);
    assert_eq!(rows.len(), 50);
    let (h, rows) = read_csv(&out.join("plots/jensen.csv")).unwrap();
    assert_eq!(h, ["n", "normalized_f"]);
    assert_eq!(rows.len(), 2);

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let (code, _, err) = ipslab(&["emit-plots", empty.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains(empty.to_str().unwrap()));
}

#[test]
fn verify_all_prints_a_table() {
    let (code, stdout, _) = ipslab(&["verify-all", "--scale", "small"]);
    assert_eq!(code, 0, "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("criterion")).count(), 12);
    assert!(!stdout.contains("FAIL"));
}
