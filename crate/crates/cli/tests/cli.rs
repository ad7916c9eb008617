use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FOUR_STATE: &str = r#"n_states = 4
transition = [[0.52, 0.12, 0.18, 0.18], [0.17, 0.57, 0.17, 0.09], [0.03, 0.06, 0.72, 0.19], [0.16, 0.10, 0.18, 0.56]]
p_e = 0.5
c = 0.5
r_max = 2
"#;

fn aoii(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoii"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_model(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn path(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_str().unwrap().to_string()
}

#[test]
fn solve_writes_policy_trace_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.toml", FOUR_STATE);
    let out = path(dir.path(), "multi");
    let run = aoii(&["solve", "--model", &model, "--rate", "0.1", "--out", &out]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );

    let table = fs::read_to_string(dir.path().join("multi/thresholds.txt")).unwrap();
    assert!(table.contains("—"));
    assert_eq!(table.matches("r = 0").count(), 2);
    let trace = fs::read_to_string(dir.path().join("multi/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("# aoii-trace v1: iteration,parameter,gain,rate,lower,upper")
    );
    assert_eq!(
        lines.next(),
        Some("iteration,parameter,gain,rate,lower,upper")
    );
    assert!(lines.count() >= 3);
    let policy = fs::read_to_string(dir.path().join("multi/policy.json")).unwrap();
    assert!(policy.contains(r#""class": "mixture""#));

    // closed-form evaluation of the written policy meets the target
    let ev = aoii(&[
        "evaluate",
        "--model",
        &model,
        "--policy",
        &path(dir.path(), "multi/policy.json"),
        "--rate",
        "0.1",
        "--out",
        &out,
    ]);
    assert!(ev.status.success());
    let csv = fs::read_to_string(dir.path().join("multi/evaluation.csv")).unwrap();
    let mixture = csv.lines().find(|l| l.starts_with("mixture,")).unwrap();
    let rate: f64 = mixture.split(',').nth(4).unwrap().parse().unwrap();
    assert!((rate - 0.1).abs() < 1e-9);
    assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 5 + 3 * 4);
}

#[test]
fn single_family_reports_two_adjacent_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.toml", FOUR_STATE);
    let run = aoii(&[
        "solve",
        "--model",
        &model,
        "--rate",
        "0.1",
        "--family",
        "single",
        "--out",
        &path(dir.path(), "s"),
    ]);
    assert!(run.status.success());
    let table = String::from_utf8(run.stdout).unwrap();
    let n: Vec<u32> = table
        .lines()
        .filter_map(|l| l.trim().strip_prefix("single threshold: "))
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(n.len(), 2);
    assert_eq!(n[1], n[0] + 1);
}

#[test]
fn malformed_matrix_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "bad.toml", &FOUR_STATE.replace("0.57", "0.47"));
    let run = aoii(&[
        "solve",
        "--model",
        &model,
        "--rate",
        "0.1",
        "--out",
        &path(dir.path(), "o"),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("row 2 sums to 0.9"));

    let missing = aoii(&[
        "solve",
        "--model",
        &path(dir.path(), "nope.toml"),
        "--rate",
        "0.1",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_rate = aoii(&[
        "solve",
        "--model",
        &path(dir.path(), "bad.toml"),
        "--rate",
        "abc",
    ]);
    assert_eq!(bad_rate.status.code(), Some(2));
}

#[test]
fn defaults_are_printed_and_accepted_back() {
    let dir = tempfile::tempdir().unwrap();
    let run = aoii(&["--print-defaults"]);
    assert!(run.status.success());
    let text = String::from_utf8(run.stdout).unwrap();
    for key in [
        "rvi_tol",
        "lambda_tol",
        "delta_cap",
        "horizon",
        "burn_in_fraction",
        "grid",
    ] {
        assert!(text.contains(key), "{key} missing from defaults");
    }
    let cfg = write_model(dir.path(), "cfg.toml", &text);
    let model = write_model(dir.path(), "m.toml", FOUR_STATE);
    let run = aoii(&[
        "solve",
        "--config",
        &cfg,
        "--model",
        &model,
        "--rate",
        "0.2",
        "--out",
        &path(dir.path(), "o"),
    ]);
    assert!(run.status.success());
    let bogus = write_model(dir.path(), "bogus.toml", "[solver]\nunknown = 1\n");
    let run = aoii(&[
        "solve", "--config", &bogus, "--model", &model, "--rate", "0.2",
    ]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn sweep_outputs_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.toml", FOUR_STATE);
    let args = |out: &str| {
        vec![
            "sweep".to_string(),
            "--model".into(),
            model.clone(),
            "--grid".into(),
            "0.1,0.2,0.4".into(),
            "--out".into(),
            path(dir.path(), out),
            "--config".into(),
            write_model(dir.path(), "short.toml", "[simulation]\nhorizon = 100000\n"),
        ]
    };
    for out in ["a", "b"] {
        let a: Vec<String> = args(out);
        let run = aoii(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(
            run.status.success(),
            "{}",
            String::from_utf8_lossy(&run.stderr)
        );
    }
    let csv = fs::read_to_string(dir.path().join("a/curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# aoii-curve v1: "));
    assert_eq!(
        lines.next(),
        Some("family,R,aoii_closed_form,aoii_simulated,aoii_se,rate_closed_form")
    );
    assert_eq!(lines.count(), 4 * 3);

    let svg = fs::read_to_string(dir.path().join("a/curve.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    for fam in ["multi", "single", "periodic", "optimal-oracle"] {
        assert!(svg.contains(&format!("<title>{fam}</title></polyline>")));
    }
    assert_eq!(
        fs::read(dir.path().join("a/curve.svg")).unwrap(),
        fs::read(dir.path().join("b/curve.svg")).unwrap()
    );
    assert_eq!(
        csv,
        fs::read_to_string(dir.path().join("b/curve.csv")).unwrap()
    );
}

#[test]
fn validate_passes_on_the_reference_model_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.toml", FOUR_STATE);
    let a = aoii(&[
        "validate",
        "--model",
        &model,
        "--seed",
        "5",
        "--out",
        &path(dir.path(), "a"),
    ]);
    let b = aoii(&[
        "validate",
        "--model",
        &model,
        "--seed",
        "5",
        "--out",
        &path(dir.path(), "b"),
    ]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let report = fs::read_to_string(dir.path().join("a/validate.json")).unwrap();
    assert_eq!(
        report,
        fs::read_to_string(dir.path().join("b/validate.json")).unwrap()
    );
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["passed"], true);
    assert!(json["checks"].as_array().unwrap().len() >= 20);
}

#[test]
fn validate_flags_a_corrupted_matrix_at_stochasticity() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "bad.toml", &FOUR_STATE.replace("0.57", "0.47"));
    let run = aoii(&[
        "validate",
        "--model",
        &model,
        "--out",
        &path(dir.path(), "v"),
    ]);
    assert_eq!(run.status.code(), Some(1));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v/validate.json")).unwrap())
            .unwrap();
    assert_eq!(json["passed"], false);
    let first_failure = json["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["passed"] == false)
        .unwrap();
    assert_eq!(first_failure["name"], "source-stochastic");
}

#[test]
fn simulate_exports_replications_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "m.toml", FOUR_STATE);
    let policy = write_model(
        dir.path(),
        "p.json",
        r#"{"class": "single", "threshold": 4}"#,
    );
    let out = path(dir.path(), "o");
    let args = [
        "simulate",
        "--model",
        &model,
        "--policy",
        &policy,
        "--horizon",
        "200000",
        "--replications",
        "3",
    ];
    let run = aoii(
        &[
            &args[..],
            &["--trajectory", "50", "--seed", "9", "--out", &out],
        ]
        .concat(),
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stats = fs::read_to_string(dir.path().join("o/simulation.csv")).unwrap();
    assert_eq!(stats.lines().count(), 2 + 3 + 1);
    assert!(stats.lines().last().unwrap().starts_with("all,"));
    let traj = fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2 + 50);
    assert_eq!(traj.lines().nth(2), Some("0,0,0,0,0,0,0"));
}

#[test]
fn generated_sources_are_seeded() {
    let a = aoii(&["gen-source", "--n-states", "5", "--seed", "11"]);
    let b = aoii(&["gen-source", "--n-states", "5", "--seed", "11"]);
    let c = aoii(&["gen-source", "--n-states", "5", "--seed", "12"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert!(String::from_utf8(a.stdout)
        .unwrap()
        .starts_with("n_states = 5"));
    assert_eq!(
        aoii(&["gen-source", "--n-states", "1"]).status.code(),
        Some(2)
    );
}
