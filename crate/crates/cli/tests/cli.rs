use std::path::Path;
use std::process::Command;

fn evoscope(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_evoscope"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn run_then_analyze_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "repetitions = 2\noutput_dir = \"runs\"\n[task]\nfamily = \"tsp\"\nsize = 8\n[operator]\nkind = \"scripted-2opt\"\n[evolution]\ngenerations = 5\n",
    )
    .unwrap();
    let out = evoscope(&["run", "run.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    assert!(dir.path().join("runs/manifest.json").is_file());

    let out = evoscope(&["analyze", "runs/*.jsonl", "--out", "analysis"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["runs.csv", "generations.csv", "novelty.csv", "descriptors.csv"] {
        assert!(dir.path().join("analysis").join(f).is_file(), "{f}");
    }

    let out = evoscope(&["mds", "runs/*.jsonl", "--out", "mds", "--cap-per-bucket", "10"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn errors_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[task]\nfamily = \"chess\"\n").unwrap();
    let out = evoscope(&["run", "bad.toml", "--out", "x"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert!(!dir.path().join("x").exists());

    let out = evoscope(&["analyze", "nothing/*.jsonl", "--out", "a"], dir.path());
    assert!(!out.status.success());
    let out = evoscope(&["stats", "--out", "s"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn mds_matrix_mode() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), ",a,b,c\na,0,3,4\nb,3,0,5\nc,4,5,0\n").unwrap();
    let out = evoscope(&["mds", "--matrix", "d.csv", "--out", "m"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("stress"));
}
