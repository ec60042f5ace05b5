use std::path::Path;
use std::process::{Command, Output};

fn kickctl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kickctl"))
        .args(args)
        .current_dir(dir)
        .env_remove("KICKCTL_THREADS")
        .output()
        .expect("kickctl runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn kicked_writes_analytic_and_exact_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(
        dir.path(),
        &[
            "kicked", "--flat", "201", "20", "0.02", "--dt", "0.2", "--n", "25", "-o", "out",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,analytic,exact");
    assert_eq!(lines.len(), 27);
    assert!(!csv.contains('\r'));
    let last: Vec<f64> = lines[26].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[0] - 10.0).abs() < 1e-12);
    assert!((last[1] - last[2]).abs() < 0.05);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap())
            .unwrap();
    assert_eq!(json["config"]["dt"], 0.2);
    assert_eq!(json["config"]["flat"]["n_modes"], 201);
    assert!(stdout(&o).contains("out.csv"));
}

#[test]
fn csv_goes_to_stdout_without_output_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(
        dir.path(),
        &[
            "spontaneous",
            "--flat",
            "5",
            "2",
            "0.01",
            "--dt",
            "0.5",
            "--n",
            "2",
        ],
    );
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("t,analytic,exact\n"));
    assert_eq!(out.lines().count(), 4);
}

#[test]
fn validate_reports_each_identity() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(dir.path(), &["validate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for name in [
        "cancellation",
        "free-decay reduction",
        "kicked reduction",
        "dd equivalence",
        "zeno coincidence",
    ] {
        assert!(
            out.lines()
                .any(|l| l.starts_with("PASS") && l.contains(name)),
            "{name}\n{out}"
        );
    }
}

#[test]
fn resonance_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(
        dir.path(),
        &[
            "kicked",
            "--flat",
            "1",
            "2",
            "0.1",
            "--band-center",
            "1",
            "--dt",
            "3.14159265",
            "--n",
            "5",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("resonance at mode 0"), "{err}");
    assert!(
        err.contains("pi/|omega_s - omega_k| = 3.14159265358979"),
        "{err}"
    );
    assert!(
        err.contains(
            "reproduce: kickctl kicked --flat 1 2 0.1 --band-center 1 --dt 3.14159265 --n 5"
        ),
        "{err}"
    );
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"model": {"omega_s": 0.0, "modes": [[1.0, 0.02, 0.0], [-2.0, 0.01, 0.0]]}, "dt": 0.5, "n": 3}"#,
    )
    .unwrap();
    let o = kickctl(
        dir.path(),
        &["zeno", "--config", "run.json", "--dt", "0.1", "-o", "z"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("z.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["dt"], 0.1);
    assert_eq!(json["config"]["n"], 3);
    assert_eq!(json["config"]["model"]["modes"][0][0], -2.0);
    let csv = std::fs::read_to_string(dir.path().join("z.csv")).unwrap();
    assert!(csv.starts_with("t,linearized,product,exact\n"));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"dtt": 0.1}"#).unwrap();
    let o = kickctl(dir.path(), &["kicked", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"));
}

#[test]
fn missing_model_names_the_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(dir.path(), &["kicked", "--dt", "0.1", "--n", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--flat"));
}

#[test]
fn sweep_dt_shows_suppression_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep",
        "--flat",
        "201",
        "20",
        "0.02",
        "--t-total",
        "1.6",
        "--axis",
        "dt",
        "--values",
        "0.05,0.1,0.2,0.4,0.8",
        "-o",
        "s",
    ];
    let o = kickctl(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read(dir.path().join("s.csv")).unwrap();
    let csv = String::from_utf8(first.clone()).unwrap();
    assert!(csv.starts_with("axis_value,t,p_s,method,error\n"));
    let mut finals = Vec::new();
    for dt in [0.05, 0.1, 0.2, 0.4, 0.8] {
        let row = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|c| c[0].parse::<f64>().unwrap() == dt && c[3] == "analytic")
            .max_by(|a, b| {
                a[1].parse::<f64>()
                    .unwrap()
                    .total_cmp(&b[1].parse().unwrap())
            })
            .unwrap();
        assert!((row[1].parse::<f64>().unwrap() - 1.6).abs() < 1e-12);
        finals.push(row[2].parse::<f64>().unwrap());
    }
    assert!(finals.windows(2).all(|w| w[0] > w[1]), "{finals:?}");
    kickctl(dir.path(), &args);
    assert_eq!(first, std::fs::read(dir.path().join("s.csv")).unwrap());
}

#[test]
fn sweep_records_resonant_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(
        dir.path(),
        &[
            "sweep",
            "--flat",
            "1",
            "2",
            "0.1",
            "--band-center",
            "1",
            "--n",
            "2",
            "--axis",
            "dt",
            "--values",
            "0.5,3.141592653589793,1",
            "-o",
            "r",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(
        csv.lines()
            .filter(|l| l.ends_with(",,,kicked,resonance"))
            .count(),
        1
    );
}

#[test]
fn empty_sweep_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sweep.json"), r#"{"flat": {"n_modes": 3, "bandwidth": 1.0, "coupling": 0.01}, "dt": 0.1, "n": 2, "axis": "dt", "values": []}"#).unwrap();
    let o = kickctl(dir.path(), &["sweep", "--config", "sweep.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("must not be empty"));
}

#[test]
fn ensemble_sidecar_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(
        dir.path(),
        &[
            "ensemble",
            "--flat",
            "41",
            "8",
            "0.02",
            "--dt",
            "0.2",
            "--n",
            "5",
            "--realizations",
            "200",
            "--seed",
            "3",
            "-o",
            "e",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(csv.starts_with("t,mean_p_s,stderr\n"));
    let json = std::fs::read_to_string(dir.path().join("e.json")).unwrap();
    let pos: Vec<usize> = [
        "\"analytic_mean\"",
        "\"z_score\"",
        "\"n_realizations\"",
        "\"seed\"",
        "\"config\"",
    ]
    .iter()
    .map(|k| json.find(k).unwrap())
    .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["n_realizations"], 200);
    assert_eq!(v["config"]["p_kick"], 0.5);
    assert_eq!(v["config"]["evaluator"], "analytic");
}

#[test]
fn bad_thread_setting_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_kickctl"))
        .args([
            "spontaneous",
            "--flat",
            "3",
            "1",
            "0.01",
            "--dt",
            "0.1",
            "--n",
            "1",
        ])
        .current_dir(dir.path())
        .env("KICKCTL_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("KICKCTL_THREADS"));
}

#[test]
fn unknown_subcommand_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = kickctl(dir.path(), &["anneal"]);
    assert!(!o.status.success());
}
