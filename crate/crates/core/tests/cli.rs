use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn qfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfilter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const DECAY: &str = r#"
detection = "homodyne"
n_traj = 40
master_seed = 5
model.preset = "qubit-decay"
grid.dt = 0.001
grid.n_steps = 300
observables = ["sigma_z", "sigma_x"]
output.records = 2
"#;

const COUNTING: &str = r#"
detection = "counting"
n_traj = 40
master_seed = 5
model.preset = "qubit-decay"
grid.dt = 0.001
grid.n_steps = 300
output.plots = false
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_ensemble_csv_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "decay.toml", DECAY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = qfilter(&["simulate", "--config", s(&cfg), "--out", s(out), "--quiet"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).is_empty());
    }
    let csv = fs::read_to_string(a.join("ensemble.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,obs_name,mean,stderr,master"));
    assert_eq!(lines.count(), 301 * 2);
    assert!(csv.contains("\n0.0,sigma_z,1.0,0.0,1.0\n"));

    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "ensemble.csv",
            "plot_sigma_x.svg",
            "plot_sigma_z.svg",
            "record_0.csv",
            "record_1.csv",
            "states_0.csv",
            "states_1.csv",
            "summary.txt",
            "trajectory_0.csv",
            "trajectory_1.csv",
        ]
    );
    for name in &names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between runs"
        );
    }
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains("trajectories_used = 40"));
    assert!(summary.contains("diverged = 0"));
}

#[test]
fn seed_override_changes_records() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "decay.toml", DECAY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    qfilter(&["simulate", "--config", s(&cfg), "--out", s(&a), "--quiet"]);
    let o = qfilter(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&b),
        "--seed",
        "6",
        "--quiet",
    ]);
    assert!(o.status.success());
    let rb = fs::read_to_string(b.join("record_0.csv")).unwrap();
    assert!(rb.contains("# master_seed = 6\n"));
    assert_ne!(fs::read_to_string(a.join("record_0.csv")).unwrap(), rb);
}

#[test]
fn invalid_config_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        &DECAY.replace("n_traj = 40", "n_traj = 0"),
    );
    let out = tmp.path().join("out");
    let o = qfilter(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("n_traj: must be at least 1"),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());

    let cfg = write_config(
        tmp.path(),
        "nodet.toml",
        &DECAY.replace("detection = \"homodyne\"", ""),
    );
    let o = qfilter(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("detection: required"));
    assert!(!out.exists());

    let cfg = write_config(
        tmp.path(),
        "syntax.toml",
        "detection = \"homodyne\"\nn_traj = = 3\n",
    );
    let o = qfilter(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = qfilter(&["simulate", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = qfilter(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn filter_replays_stored_record_bitwise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "decay.toml", DECAY);
    let sim = tmp.path().join("sim");
    let rep = tmp.path().join("rep");
    assert!(
        qfilter(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--quiet"])
            .status
            .success()
    );
    for i in 0..2 {
        let record = sim.join(format!("record_{i}.csv"));
        let o = qfilter(&[
            "filter",
            "--config",
            s(&cfg),
            "--record",
            s(&record),
            "--out",
            s(&rep),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("max trace distance"));
        assert_eq!(
            fs::read(sim.join(format!("trajectory_{i}.csv"))).unwrap(),
            fs::read(rep.join("filtered_normalized.csv")).unwrap()
        );
    }
    let linear = fs::read_to_string(rep.join("filtered_linear.csv")).unwrap();
    assert!(linear.starts_with("t,sigma_z,sigma_x,norm,trace_distance\n0.0,1.0,0.0,1.0,0.0\n"));
    assert_eq!(linear.lines().count(), 302);
}

#[test]
fn filter_reports_mismatches() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "decay.toml", DECAY);
    let counting = write_config(tmp.path(), "counting.toml", COUNTING);
    let longer = write_config(
        tmp.path(),
        "longer.toml",
        &DECAY.replace("n_steps = 300", "n_steps = 400"),
    );
    let sim = tmp.path().join("sim");
    let out = tmp.path().join("out");
    qfilter(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--quiet"]);
    let record = sim.join("record_0.csv");

    let o = qfilter(&[
        "filter",
        "--config",
        s(&counting),
        "--record",
        s(&record),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("detection mismatch: model uses counting, record uses homodyne"),
        "{}",
        stderr(&o)
    );

    let o = qfilter(&[
        "filter",
        "--config",
        s(&longer),
        "--record",
        s(&record),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("n_steps = 400; record has t0 = 0, dt = 0.001, n_steps = 300"),
        "{}",
        stderr(&o)
    );

    let text = fs::read_to_string(&record).unwrap();
    let truncated: String = text
        .lines()
        .take(text.lines().count() - 5)
        .map(|l| format!("{l}\n"))
        .collect();
    let short = tmp.path().join("short.csv");
    fs::write(&short, truncated).unwrap();
    let o = qfilter(&[
        "filter",
        "--config",
        s(&cfg),
        "--record",
        s(&short),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("expected 300 steps, found 295"),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());
}

#[test]
fn filter_counting_record() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "counting.toml", COUNTING);
    let sim = tmp.path().join("sim");
    let rep = tmp.path().join("rep");
    assert!(
        qfilter(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--quiet"])
            .status
            .success()
    );
    let o = qfilter(&[
        "filter",
        "--config",
        s(&cfg),
        "--record",
        s(&sim.join("record_0.csv")),
        "--out",
        s(&rep),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("linear filter skipped"));
    assert_eq!(
        fs::read(sim.join("trajectory_0.csv")).unwrap(),
        fs::read(rep.join("filtered_normalized.csv")).unwrap()
    );
    assert!(!rep.join("filtered_linear.csv").exists());
}

#[test]
fn symbolic_prints_derivations() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "decay.toml",
        &DECAY.replace(
            "model.preset = \"qubit-decay\"",
            "model.preset = \"qubit-decay\"\nmodel.gamma = 0.5",
        ),
    );
    let o = qfilter(&["symbolic", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("dU = (-0.5 L†L·dt + L·dA† - L†·dA)·U\n"),
        "{text}"
    );
    assert!(text.contains("d(U†U) = 0\n"));
    // -gamma (I + sigma_z) with gamma = 0.5
    assert!(
        text.contains("d j(sigma_z) = [[-1, 0], [0, 0]]·dt"),
        "{text}"
    );

    let trivial = write_config(
        tmp.path(),
        "trivial.toml",
        r#"
detection = "homodyne"
model.dim = 2
model.hamiltonian = [0, 0, 0, 0]
model.coupling = [0, 0, 0, 0]
model.initial_state = [1, 0, 0, 0]
grid.dt = 0.01
grid.n_steps = 10
"#,
    );
    let out = tmp.path().join("sym");
    let o = qfilter(&["symbolic", "--config", s(&trivial), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).starts_with("dU = 0\nd(U†U) = 0\nd j(sigma_z) = 0\n"),
        "{}",
        stdout(&o)
    );
    assert_eq!(
        fs::read_to_string(out.join("symbolic.txt")).unwrap(),
        stdout(&o)
    );
}

#[test]
fn unitarity_prints_zero_for_every_preset() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let o = qfilter(&["symbolic", "--config", s(&path)]);
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
        assert!(stdout(&o).contains("\nd(U†U) = 0\n"), "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 3);
}

#[test]
fn check_exit_codes_and_injected_sign_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("c");
    let o = qfilter(&[
        "check",
        "--only",
        "ito,symbolic,master",
        "--out",
        s(&out),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("check_summary.txt")).unwrap();
    assert!(summary.contains("[check.unitarity]\nstatus = pass\n"));
    assert!(
        summary.ends_with("[totals]\nchecks = 6\nfailed = 0\ndiverged = 0\n"),
        "{summary}"
    );

    let o = qfilter(&[
        "check",
        "--only",
        "ito,symbolic",
        "--inject-ito-sign-error",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let table = stdout(&o);
    assert!(table.contains("nonzero dt coefficient"), "{table}");
    let summary = fs::read_to_string(out.join("check_summary.txt")).unwrap();
    assert!(summary.contains("[check.unitarity]\nstatus = fail\n"));
    assert!(summary.contains("note = \"nonzero dt coefficient"));
}

#[test]
fn check_with_scenario_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "counting.toml",
        &COUNTING.replace("n_traj = 40", "n_traj = 400"),
    );
    let out = tmp.path().join("c");
    let o = qfilter(&[
        "check",
        "--config",
        s(&cfg),
        "--only",
        "scenario",
        "--out",
        s(&out),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("check_summary.txt")).unwrap();
    assert!(
        summary.starts_with("[config]\nmodel.preset = \"qubit-decay\"\n"),
        "{summary}"
    );
    assert!(summary.contains("[check.scenario_unbiasedness_sigma_z_max_z]"));
    assert!(summary.contains("[check.scenario_jump_consistency_z]"));
}
