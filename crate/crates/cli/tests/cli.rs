use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hjbopt::grid::ValueField;
use hjbopt::trajectory::Trajectory;
use hjbopt_cli::config::{Experiment, ExperimentConfig};
use hjbopt_cli::manifest::{sha256_hex, RunManifest};
use tempfile::TempDir;

const RICCATI: &str = r#"
lambda = 0.1

[objective]
name = "riccati_dist"
params = { c = 1.0, set = { kind = "points", points = [[0.0]] } }

[domain]
lower = [-2.0]
upper = [2.0]
nodes = [401]

[trajectory]
x0 = [1.0]
T = 3.0
dt = 1e-3
policy = { kind = "optimal" }
"#;

fn hjbopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjbopt")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    let out = hjbopt(args);
    assert!(
        out.status.success(),
        "hjbopt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit code plus the diagnostic, which must be exactly one line.
fn failure(args: &[&str]) -> (i32, String) {
    let out = hjbopt(args);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "diagnostic is not one line: {stderr:?}");
    (out.status.code().unwrap(), stderr)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn riccati_pipeline_matches_closed_forms() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "riccati.toml", RICCATI);
    let out = tmp.path().join("out");
    for cmd in ["solve", "trajectory", "rates"] {
        run(&[cmd, "--config", s(&cfg), "--out", s(&out)]);
    }
    run(&["riccati-check", "--config", s(&cfg), "--out", s(&out), "--value", s(&out.join("value.hjbv"))]);

    let check: serde_json::Value = serde_json::from_slice(&fs::read(out.join("riccati_check.json")).unwrap()).unwrap();
    assert!(check["relative_error"].as_f64().unwrap() <= 0.02);

    let traj = Trajectory::read_csv(fs::File::open(out.join("trajectory.csv")).map(std::io::BufReader::new).unwrap()).unwrap();
    let rho = 0.9512492197250393f64;
    let end = traj.states.last().unwrap()[0];
    assert!((end - (-3.0 * rho).exp()).abs() <= 5e-3, "y(3) = {end}");

    let rates: serde_json::Value = serde_json::from_slice(&fs::read(out.join("rates.json")).unwrap()).unwrap();
    assert_eq!(rates["pass"], true);
    for section in ["variational", "pathwise", "sandwich"] {
        assert_eq!(rates[section]["status"], "checked", "{section}");
        assert_eq!(rates[section]["report"]["bound_violations"], 0, "{section}");
    }
    assert_eq!(rates["a3"], "PASSED");
    let dat = fs::read_to_string(out.join("rates.dat")).unwrap();
    assert!(dat.starts_with("# t u_tilde u_tilde_bound dist2 dist2_bound"));
    assert_eq!(dat.lines().count(), traj.len() + 1);
    assert!(fs::read_to_string(out.join("rates.gp")).unwrap().contains("'rates.dat'"));
}

#[test]
fn manifest_lists_every_emitted_file_with_checksums() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "riccati.toml", RICCATI);
    let out = tmp.path().join("out");
    for cmd in ["solve", "trajectory", "rates"] {
        run(&[cmd, "--config", s(&cfg), "--out", s(&out)]);
    }
    let manifest: RunManifest = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_hash, sha256_hex(RICCATI.as_bytes()));
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    for stage in ["solve", "trajectory", "rates"] {
        assert!(manifest.wall_seconds.contains_key(stage), "{stage}");
    }
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let listed: Vec<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    assert_eq!(listed, on_disk);
    for f in &manifest.files {
        let bytes = fs::read(out.join(&f.path)).unwrap();
        assert_eq!(f.bytes, bytes.len() as u64);
        assert_eq!(f.sha256, sha256_hex(&bytes));
    }
}

#[test]
fn identical_configs_give_byte_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let quasi = RICCATI
        .replace("T = 3.0", "T = 6.0")
        .replace(r#"policy = { kind = "optimal" }"#, r#"policy = { kind = "quasi", eta = 0.2, eps0 = 1e-3, seed = 11 }"#);
    let cfg = write_config(tmp.path(), "quasi.toml", &quasi);
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for out in &dirs {
        for cmd in ["solve", "trajectory", "rates"] {
            run(&[cmd, "--config", s(&cfg), "--out", s(out)]);
        }
    }
    for file in ["value.hjbv", "solve_log.csv", "trajectory.csv", "rates.dat", "assumptions.json"] {
        let a = fs::read(dirs[0].join(file)).unwrap();
        let b = fs::read(dirs[1].join(file)).unwrap();
        if file == "solve_log.csv" {
            // the log records wall-clock seconds; compare the sweep columns only
            let cols = |bytes: &[u8]| -> Vec<String> {
                String::from_utf8_lossy(bytes).lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
            };
            assert_eq!(cols(&a), cols(&b));
        } else {
            assert_eq!(sha256_hex(&a), sha256_hex(&b), "{file}");
        }
    }
    // a different seed changes the perturbation phase and so the path
    let c = tmp.path().join("c");
    run(&["solve", "--config", s(&cfg), "--out", s(&c)]);
    run(&["trajectory", "--config", s(&cfg), "--out", s(&c), "--seed", "12"]);
    assert_ne!(fs::read(c.join("trajectory.csv")).unwrap(), fs::read(dirs[0].join("trajectory.csv")).unwrap());
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("syntax.toml", "lambda = = 0.1".to_string()),
        ("unknown_key.toml", format!("{RICCATI}\nspeed = 3\n")),
        ("negative_lambda.toml", RICCATI.replace("lambda = 0.1", "lambda = -0.1")),
        ("bad_objective.toml", RICCATI.replace("riccati_dist", "no_such_objective")),
        ("dims.toml", RICCATI.replace("nodes = [401]", "nodes = [401, 401]")),
        ("delta_order.toml", RICCATI.replace(
            r#"policy = { kind = "optimal" }"#,
            r#"policy = { kind = "sampled", delta_min = 0.6, delta_max = 0.5, sigma = 0.1, seed = 1 }"#,
        )),
        ("missing_seed.toml", RICCATI.replace(r#"policy = { kind = "optimal" }"#, r#"policy = { kind = "quasi", eta = 0.2, eps0 = 1e-3 }"#)),
    ];
    for (name, text) in cases {
        let cfg = write_config(tmp.path(), name, &text);
        for cmd in ["solve", "trajectory"] {
            let (code, msg) = failure(&[cmd, "--config", s(&cfg), "--out", s(&out)]);
            assert_eq!(code, 2, "{name}: {msg}");
            assert!(msg.starts_with("error[config] exit=2: "), "{name}: {msg}");
        }
        assert!(!out.exists(), "{name} created the output directory");
    }
    let (code, msg) = failure(&["solve", "--out", s(&out)]);
    assert_eq!(code, 2, "{msg}");
    let (code, msg) = failure(&["solve", "--no-such-flag"]);
    assert_eq!(code, 2, "{msg}");
    assert!(msg.starts_with("error[usage] exit=2: "), "{msg}");
    assert!(!out.exists());
}

#[test]
fn input_mismatches_exit_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "riccati.toml", RICCATI);
    let out = tmp.path().join("out");
    run(&["solve", "--config", s(&cfg), "--out", s(&out)]);

    let outside = write_config(tmp.path(), "outside.toml", &RICCATI.replace("x0 = [1.0]", "x0 = [2.5]"));
    let (code, msg) = failure(&["trajectory", "--config", s(&outside), "--out", s(&out)]);
    assert_eq!((code, msg.starts_with("error[outside-box]")), (3, true), "{msg}");

    let other_lambda = write_config(tmp.path(), "lambda.toml", &RICCATI.replace("lambda = 0.1", "lambda = 0.05"));
    let (code, msg) = failure(&["trajectory", "--config", s(&other_lambda), "--out", s(&out)]);
    assert_eq!((code, msg.starts_with("error[value-mismatch]")), (3, true), "{msg}");

    let other_nodes = write_config(tmp.path(), "nodes.toml", &RICCATI.replace("nodes = [401]", "nodes = [201]"));
    let (code, msg) = failure(&["rates", "--config", s(&other_nodes), "--out", s(&out)]);
    assert_eq!((code, msg.starts_with("error[value-mismatch]")), (3, true), "{msg}");

    let junk = tmp.path().join("junk.hjbv");
    fs::write(&junk, b"not a value file").unwrap();
    let (code, msg) = failure(&["trajectory", "--config", s(&cfg), "--out", s(&out), "--value", s(&junk)]);
    assert_eq!((code, msg.starts_with("error[malformed-input]")), (3, true), "{msg}");

    let (code, msg) = failure(&["rates", "--config", s(&cfg), "--out", s(&tmp.path().join("empty"))]);
    assert_eq!((code, msg.starts_with("error[missing-input]")), (3, true), "{msg}");
}

#[test]
fn truncated_trajectory_is_an_insufficient_decay_window() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", &RICCATI.replace("T = 3.0", "T = 0.005"));
    let out = tmp.path().join("out");
    run(&["solve", "--config", s(&cfg), "--out", s(&out)]);
    run(&["trajectory", "--config", s(&cfg), "--out", s(&out)]);
    let (code, msg) = failure(&["rates", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 6, "{msg}");
    assert!(msg.starts_with("error[insufficient-decay-window] exit=6: "), "{msg}");
}

#[test]
fn flat_objective_records_failed_gap_condition_and_exits_0() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
lambda = 0.1
[objective]
name = "constant"
params = { value = 1.0 }
[domain]
lower = [-1.0]
upper = [1.0]
nodes = [101]
[trajectory]
x0 = [0.5]
T = 2.0
dt = 1e-3
"#;
    let cfg = write_config(tmp.path(), "flat.toml", text);
    let out = tmp.path().join("out");
    for cmd in ["solve", "trajectory", "rates"] {
        run(&[cmd, "--config", s(&cfg), "--out", s(&out)]);
    }
    let rates: serde_json::Value = serde_json::from_slice(&fs::read(out.join("rates.json")).unwrap()).unwrap();
    assert_eq!(rates["a3"], "FAILED");
    assert_eq!(rates["pass"], false);
    assert_eq!(rates["variational"]["cause"], "flat-field");
}

#[test]
fn unwritable_output_exits_4() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let out = blocker.join("out");
    let (code, msg) = failure(&["suite", "--quick", "--out", s(&out)]);
    assert_eq!(code, 4, "{msg}");
    assert!(msg.starts_with("error[unwritable-output] exit=4: "), "{msg}");

    let cfg = write_config(tmp.path(), "riccati.toml", RICCATI);
    let (code, msg) = failure(&["solve", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 4, "{msg}");
}

#[test]
fn quick_suite_fails_only_on_the_flow_tolerance() {
    // at half resolution the first-order flow error is about 9e-3, above the 5e-3 limit
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("suite");
    let (code, msg) = failure(&["suite", "--quick", "--out", s(&out)]);
    assert_eq!(code, 1, "{msg}");
    assert!(msg.starts_with("error[check-failed] exit=1: 1 suite rows failed: riccati_flow/sup_error"), "{msg}");
    let csv = fs::read_to_string(out.join("suite.csv")).unwrap();
    assert!(csv.starts_with("case,check,predicted,measured,pass\n"));
    assert!(csv.lines().count() > 50);
    let failed: Vec<&str> = csv.lines().filter(|l| l.ends_with(",false")).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].starts_with("riccati_flow,sup_error,"));
}

#[test]
fn config_api_resolves_defaults_and_quick_halving() {
    let config = ExperimentConfig::parse(RICCATI).unwrap();
    let exp = Experiment::from_config(config.clone(), "h".into(), false).unwrap();
    assert_eq!(exp.grid.nodes(), &[401]);
    assert_eq!(exp.solver.full_search_every, 1);
    assert!(exp.solver.m_bound > (6.0f64 * exp.objective.sup_norm()).sqrt());
    let quick = Experiment::from_config(config, "h".into(), true).unwrap();
    assert_eq!(quick.grid.nodes(), &[201]);
    assert_eq!(exp.output_dir(None), PathBuf::from(hjbopt_cli::DEFAULT_OUT));
}

#[test]
fn value_files_round_trip_through_the_cli() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "riccati.toml", &RICCATI.replace("nodes = [401]", "nodes = [101]"));
    let out = tmp.path().join("out");
    run(&["solve", "--config", s(&cfg), "--out", s(&out)]);
    let bytes = fs::read(out.join("value.hjbv")).unwrap();
    let vf = ValueField::from_bytes(&bytes).unwrap();
    assert_eq!(vf.grid.nodes(), &[101]);
    assert_eq!(vf.lambda, 0.1);
    assert_eq!(vf.to_bytes(), bytes);
}
