use std::path::Path;
use std::process::{Command, Output};

fn peers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peers")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn staged_commands_write_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let common = ["--nvol", "3", "--noise", "0.5", "--scenario", "drift,hz_per_min=5", "--equalization", "epi", "-o", p(&out)];
    for stage in ["simulate", "correct", "reconstruct", "analyze"] {
        let mut args = vec![stage];
        args.extend(common);
        let o = peers(&args);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["config.toml", "manifest.json", "raw/shots.bin", "raw/truth.csv", "corrected/equalization.csv", "recon/volumes.hdr", "analysis/report.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\": true"));
}

#[test]
fn compare_tabulates_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(peers(&["all", "--nvol", "3", "-o", p(&a)]).status.success());
    assert!(peers(&["all", "--nvol", "3", "--servo", "on", "--nav-filter", "median", "--nav-timing", "relative", "-o", p(&b)]).status.success());
    let csv = dir.path().join("cmp.csv");
    let o = peers(&["compare", p(&a), p(&b), "-o", p(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("servo=on"));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "name = \"cfgrun\"\nseed = 4\n[timing]\nnvol = 3\n[scenario]\nkind = \"static\"\n").unwrap();
    let out = dir.path().join("o");
    let o = peers(&["all", "-c", p(&cfg), "--seed", "9", "-o", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("cfgrun"));
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 9"));
}

#[test]
fn bad_configuration_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "noise_std = -1.0\n").unwrap();
    assert_eq!(peers(&["simulate", "-c", p(&cfg), "-o", p(dir.path())]).status.code(), Some(2));
    assert_eq!(peers(&["simulate", "--scenario", "wobble", "-o", p(dir.path())]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_stage_code_and_mark_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    assert_eq!(peers(&["correct", "--nvol", "3", "-o", p(&out)]).status.code(), Some(4));
    assert_eq!(peers(&["analyze", "--nvol", "3", "-o", p(&out)]).status.code(), Some(5));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"complete\": false") && manifest.contains("\"error\": \""));
}
