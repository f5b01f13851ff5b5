use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# one island, short run
extent_km = 0, 30
x_max = 30
shoals = 15:3.8:2
tide_phase_rate_rad_per_km = 0
tide_phase_rad = 1.2
reference = 0:0, 1.5:30
duration_h = 1.5
repetitions = 4
pool_size = 40
n_samples = 11
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tidal-drmpc"));
    c.env_remove("TIDAL_DRMPC_OUT");
    c
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("scenario.cfg");
    fs::write(&cfg, config).unwrap();
    bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn rows(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("out/results.csv"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn sweep_theta_writes_one_row_per_radius_plus_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL, &["sweep-theta", "--thetas", "0.001,0.00125,0.0015,0.00175,0.002"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(dir.path());
    assert_eq!(rows[0], "method,theta,n,cost_mean,cost_std,margin_mean,margin_std,collision_rate");
    assert_eq!(rows.len(), 1 + 7);
    let methods: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["DR-MPC", "DR-MPC", "DR-MPC", "DR-MPC", "DR-MPC", "SAA-MPC", "CC-MPC"]);
    assert!(dir.path().join("out/time_space.svg").exists());
    assert!(dir.path().join("out/trajectories/saa_n11_rep0.csv").exists());
}

#[test]
fn sweep_n_writes_three_rows_per_sample_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL, &["sweep-n", "--ns", "1,3,6,11", "--theta", "0.0015"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(dir.path());
    assert_eq!(rows.len(), 1 + 12);
    let ns: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap()).collect();
    assert_eq!(ns, ["1", "1", "1", "3", "3", "3", "6", "6", "6", "11", "11", "11"]);
}

#[test]
fn repeated_sweeps_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(d.path(), SMALL, &["--seed", "7", "sweep-theta", "--thetas", "0.0005,0.001"]);
        assert!(out.status.success());
    }
    let read = |d: &Path| fs::read(d.join("out/results.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let traj = |d: &Path| fs::read(d.join("out/trajectories/dr_theta0.001_n11_rep0.csv")).unwrap();
    assert_eq!(traj(a.path()), traj(b.path()));
}

#[test]
fn seed_override_changes_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path(), SMALL, &["--seed", "1", "sweep-theta", "--thetas", "0.001"]);
    run(b.path(), SMALL, &["--seed", "2", "sweep-theta", "--thetas", "0.001"]);
    assert_ne!(rows(a.path()), rows(b.path()));
}

#[test]
fn unknown_key_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "alpha = 0.9\nbogus = 1\n", &["run"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
}

#[test]
fn out_of_range_alpha_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "alpha = 1.5\n", &["run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn negative_theta_argument_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL, &["sweep-theta", "--thetas", "-0.001"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta"));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("out");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = dir.path().join("scenario.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(&blocker).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let target = dir.path().join("from-env");
    let out = bin()
        .env("TIDAL_DRMPC_OUT", &target)
        .arg("--config")
        .arg(&cfg)
        .arg("gen-field")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["islands.csv", "timelines.csv", "field.svg", "config.txt"] {
        assert!(target.join(f).exists(), "{f}");
    }
}

#[test]
fn run_writes_trajectories_for_each_controller() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), SMALL, &["run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(dir.path().join("out/cc_n11_rep0.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("t,y,u,clearance"));
    // header plus 15 steps and the final state
    assert_eq!(traj.lines().count(), 1 + 16);
    assert!(dir.path().join("out/dr_theta0.001_n11_rep0.audit.jsonl").exists());
}

#[test]
fn verify_passes() {
    let out = bin().arg("verify").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
