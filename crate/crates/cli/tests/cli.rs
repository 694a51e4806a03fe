use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
[env]
structure = 1-1
starts = b1, b1

[comm]
schedule = complete

[net]
m = 8
d = 8

[learner]
t_c = 3
k = 6
metrics_every = 2
snapshot_every = 3
seeds = 1, 2
";

fn nmarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmarl"))
        .args(args)
        .env_remove("NMARL_OUT")
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn zero_iterations_write_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "zero.cfg", &TINY.replace("k = 6", "k = 0"));
    let out_dir = dir.path().join("out");
    let out = nmarl(&["run", s(&cfg), "--out", s(&out_dir), "-q"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("zero-seed1.csv")).unwrap();
    assert_eq!(
        csv,
        "# metrics-csv v1\nrun_id,seed,k,j_exact,grad_norm_exact,grad_mapping_norm,grad_mapping_source,critic_mse,disagreement_final,wallclock_s\n"
    );
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = nmarl(&["run", s(&cfg), "--out", s(d), "--seed", "3", "-q"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for f in [
        "tiny-seed3.csv",
        "tiny-seed3-policy.csv",
        "tiny-summary.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    // --seed replaced the config's list
    assert!(!a.join("tiny-seed1.csv").exists());
    let rows = fs::read_to_string(a.join("tiny-seed3.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2 + 4);
}

#[test]
fn jobs_do_not_change_results() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(nmarl(&["run", s(&cfg), "--out", s(&a), "-q"])
        .status
        .success());
    assert!(nmarl(&[
        "run",
        s(&cfg),
        "--out",
        s(&b),
        "--jobs",
        "2",
        "--threads",
        "1",
        "-q"
    ])
    .status
    .success());
    for f in ["tiny-seed1.csv", "tiny-seed2.csv", "tiny-summary.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "bad.cfg", &TINY.replace("k = 6", "k = six"));
    for verb in ["run", "validate", "compare"] {
        let out = nmarl(&[verb, s(&cfg)]);
        assert_eq!(out.status.code(), Some(2), "{verb}");
        let err = stderr(&out);
        assert!(
            err.contains("bad.cfg:14:") && err.contains("[learner] k"),
            "{err}"
        );
    }
    let out = nmarl(&["run", s(&dir.path().join("missing.cfg"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_ablation_values_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY);
    let out_dir = dir.path().join("out");
    let out = nmarl(&[
        "ablate",
        s(&cfg),
        "--axis",
        "batch",
        "--values",
        "",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = nmarl(&[
        "ablate",
        s(&cfg),
        "--axis",
        "batch",
        "--values",
        "0",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = nmarl(&[
        "ablate",
        s(&cfg),
        "--axis",
        "isolation",
        "--values",
        "3",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2), "agent 3 does not exist");
}

#[test]
fn compare_above_oracle_limit_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/network-3-2-1.cfg");
    let out = nmarl(&["compare", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("oracle limit"));
}

#[test]
fn numeric_failure_exits_3_and_marks_partial() {
    let dir = TempDir::new().unwrap();
    let text = TINY.replace(
        "starts = b1, b1",
        "starts = b1, b1\nr_cost = 1e308\nr_collision = 1e308",
    );
    let cfg = write_cfg(dir.path(), "inf.cfg", &text);
    let out_dir = dir.path().join("out");
    let out = nmarl(&["run", s(&cfg), "--out", s(&out_dir), "-q"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("k=0"), "{}", stderr(&out));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("inf-metadata.json")).unwrap())
            .unwrap();
    assert_eq!(meta["completed"].as_array().unwrap().len(), 0);
    assert_eq!(meta["partial"].as_array().unwrap().len(), 2);
}

#[test]
fn metadata_recreates_the_run() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY);
    let first = dir.path().join("first");
    assert!(
        nmarl(&["run", s(&cfg), "--out", s(&first), "--seed", "4", "-q"])
            .status
            .success()
    );
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("tiny-metadata.json")).unwrap())
            .unwrap();
    assert_eq!(meta["format"], "run-metadata v1");
    assert_eq!(meta["seeds"], serde_json::json!([4]));
    let resolved = meta["resolved_config"].as_str().unwrap();
    // every defaulted key is echoed
    for key in [
        "gamma",
        "radius",
        "batch",
        "eta_a",
        "critic_rate",
        "sampler",
        "wallclock",
    ] {
        assert!(resolved.contains(&format!("\n{key} = ")), "{key}");
    }
    let again = write_cfg(dir.path(), "again.cfg", resolved);
    let second = dir.path().join("second");
    let out = nmarl(&["run", s(&again), "--out", s(&second), "-q"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(first.join("tiny-seed4.csv")).unwrap(),
        fs::read(second.join("tiny-seed4.csv")).unwrap()
    );
}

#[test]
fn compare_writes_gap_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY);
    let out_dir = dir.path().join("out");
    let out = nmarl(&["compare", s(&cfg), "--out", s(&out_dir), "-q"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let gap: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("tiny-gap.json")).unwrap()).unwrap();
    assert!(gap["relative_gap"].as_f64().unwrap() >= 0.0);
    assert!(gap["forward_gap"]["b1"].as_f64().unwrap() <= 1.0);
    let paired = fs::read_to_string(out_dir.join("tiny-paired.csv")).unwrap();
    assert!(
        paired.starts_with("# paired-csv v1\nrun_id,seed,k,j_distributed,j_centralized,j_gap\n")
    );
    assert_eq!(paired.lines().count(), 2 + 2 * 4);

    let only = dir.path().join("only");
    let out = nmarl(&[
        "compare",
        s(&cfg),
        "--centralized-only",
        "--out",
        s(&only),
        "-q",
    ]);
    assert!(out.status.success());
    assert!(!only.join("tiny-seed1.csv").exists());
    assert!(only.join("tiny-seed1-centralized.csv").exists());
}

#[test]
fn isolation_ablation_flags_disconnection() {
    let dir = TempDir::new().unwrap();
    let text = TINY
        .replace("starts = b1, b1", "starts = b1, b1, b1")
        .replace("k = 6", "k = 2")
        .replace("seeds = 1, 2", "seeds = 1");
    let cfg = write_cfg(dir.path(), "three.cfg", &text);
    let out_dir = dir.path().join("out");
    let out = nmarl(&[
        "ablate",
        s(&cfg),
        "--axis",
        "isolation",
        "--values",
        "none,2",
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("schedule validation failed"));
    let table = fs::read_to_string(out_dir.join("three-ablation-isolation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "# ablation-csv v1");
    assert!(
        lines[2].starts_with("three-iso-none,isolation,none,1,true,,"),
        "{}",
        lines[2]
    );
    assert!(
        lines[3].starts_with("three-iso-2,isolation,2,1,false,2,"),
        "{}",
        lines[3]
    );
}

#[test]
fn validate_prints_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "tiny.cfg", TINY);
    let out = nmarl(&["validate", s(&cfg)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["num_states"], 4);
    assert_eq!(report["schedule"]["passed"], true);
    assert_eq!(report["sampler"], "exact");
}

#[test]
fn output_dir_falls_back_to_env_var() {
    let dir = TempDir::new().unwrap();
    let cfg = write_cfg(dir.path(), "zero.cfg", &TINY.replace("k = 6", "k = 0"));
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_nmarl"))
        .args(["run", s(&cfg), "-q"])
        .env("NMARL_OUT", &target)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(target.join("zero-seed1.csv").exists());
}
