//! End-to-end tests of the `moesim` binary: exit codes, error reporting,
//! output plumbing, and override handling. Heavy scenarios use a shrunken
//! cluster config so each invocation stays in the millisecond range.

use std::path::Path;
use std::process::{Command, Output};

const EXE: &str = env!("CARGO_BIN_EXE_moesim");

fn run(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        "n_nodes = 4\n\
         gpus_per_node = 2\n\
         micro_batch_size = 8\n\
         hidden_size = 16\n\
         intermediate_size = 32\n\
         num_layers = 3\n\
         node_list = 1, 2, 4\n\
         chunk_list = 1, 2, 4\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn shipped_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn verify_passes_and_exits_zero() {
    let out = run(&["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let passes = text.lines().filter(|l| l.starts_with("PASS ")).count();
    let fails = text.lines().filter(|l| l.starts_with("FAIL ")).count();
    assert_eq!(passes, 13, "{text}");
    assert_eq!(fails, 0, "{text}");
    assert!(text.contains("verify: 13/13 checks passed (seed 42)"), "{text}");
}

#[test]
fn verify_fault_injection_trips_targeted_checks() {
    let out = run(&["verify", "--inject-tie-break-fault"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL router_tie_break"), "{text}");
    assert!(text.contains("FAIL dispatch_equivalence"), "{text}");
    // counters do not depend on which expert wins a tie
    assert!(text.contains("PASS routing_flop_counters"), "{text}");
}

#[test]
fn verify_is_seed_stable() {
    let baseline: Vec<String> = stdout(&run(&["verify", "--seed", "0"]))
        .lines()
        .map(|l| l.split_whitespace().take(2).collect::<Vec<_>>().join(" "))
        .collect();
    for seed in ["1", "7", "9"] {
        let got: Vec<String> = stdout(&run(&["verify", "--seed", seed]))
            .lines()
            .map(|l| l.split_whitespace().take(2).collect::<Vec<_>>().join(" "))
            .collect();
        assert_eq!(got[..got.len() - 1], baseline[..baseline.len() - 1], "seed {seed}");
    }
}

#[test]
fn missing_config_exits_two() {
    let out = run(&["scaling", "--config", "/nonexistent/path.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));
}

#[test]
fn unknown_key_and_malformed_line_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = dir.path().join("bad_key.cfg");
    std::fs::write(&bad_key, "n_node = 4\n").unwrap();
    let out = run(&["breakdown", "--config", bad_key.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n_node"), "{}", stderr(&out));

    let no_eq = dir.path().join("no_eq.cfg");
    std::fs::write(&no_eq, "n_nodes 4\n").unwrap();
    let out = run(&["breakdown", "--config", no_eq.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn invalid_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    for bad in ["node_list=4,2,1", "inter_bw=0", "capacity_factor=-1", "chunk_list=0"] {
        let out = run(&["pipeline", "--config", &cfg, "--set", bad]);
        assert_eq!(out.status.code(), Some(2), "{bad} should be rejected");
        assert!(stderr(&out).starts_with("error:"), "{bad}: {}", stderr(&out));
    }
    let out = run(&["pipeline", "--config", &cfg, "--set", "no_equals_sign"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn set_override_changes_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let base = stdout(&run(&["breakdown", "--config", &cfg]));
    let tweaked = stdout(&run(&["breakdown", "--config", &cfg, "--set", "seed=7"]));
    let hash = |csv: &str| csv.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string();
    assert_ne!(hash(&base), hash(&tweaked));
    assert_eq!(hash(&base).len(), 16);
    assert!(hash(&base).chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn out_flag_writes_file_and_keeps_stdout_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let target = dir.path().join("pipeline.csv");
    let out = run(&["pipeline", "--config", &cfg, "--out", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).is_empty());
    let written = std::fs::read_to_string(&target).unwrap();
    assert!(written.starts_with("mode,chunks,all2all_ops,time_s,config_hash\n"));
    assert!(written.lines().count() > 1);
}

#[test]
fn scaling_kind_selects_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let weak = stdout(&run(&["scaling", "--config", &cfg, "--kind", "weak"]));
    let strong = stdout(&run(&["scaling", "--config", &cfg, "--kind", "strong"]));
    let both = stdout(&run(&["scaling", "--config", &cfg]));
    assert!(weak.lines().skip(1).all(|l| l.starts_with("weak,")));
    assert!(strong.lines().skip(1).all(|l| l.starts_with("strong,")));
    // one header, then every weak row followed by every strong row
    assert_eq!(both.lines().filter(|l| l.starts_with("scenario,")).count(), 1);
    let both_rows: Vec<&str> = both.lines().skip(1).collect();
    let expected: Vec<&str> = weak.lines().skip(1).chain(strong.lines().skip(1)).collect();
    assert_eq!(both_rows, expected);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    for sub in ["scaling", "breakdown", "pipeline"] {
        let a = run(&[sub, "--config", &cfg]);
        let b = run(&[sub, "--config", &cfg]);
        assert_eq!(a.stdout, b.stdout, "{sub} output drifted between runs");
    }
}

#[test]
fn modelsize_labels_rows_by_config_stem() {
    let cfg = shipped_config("model_3_7b.cfg");
    let out = run(&["modelsize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("model_3_7b,"), "{row}");
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let cols: Vec<&str> = row.split(',').collect();
    let ratio: f64 =
        cols[header.iter().position(|h| *h == "bi_over_single").unwrap()].parse().unwrap();
    assert!(ratio > 1.0, "expected hierarchical speedup, got {ratio}");
}

#[test]
fn shipped_calibration_config_round_trips() {
    let cfg = shipped_config("calibration.cfg");
    let out = run(&["breakdown", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    // one hash across every row: the whole CSV traces to one config
    let hashes: std::collections::HashSet<&str> =
        text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(hashes.len(), 1);
}
