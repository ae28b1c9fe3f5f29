use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_collapse-lab");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).arg("-q").args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Two widths, two samplers, TID and a little of every diagnostic.
const SWEEP: &str = r#"{
  "name": "sweep",
  "seed": 3,
  "dataset": {"spec": {"kind": "mog_2d", "components": 3}, "n": 2000},
  "models": [{"label": "w8", "hidden": [8]}, {"label": "w16", "hidden": [16]}],
  "train": {"batch_size": 64, "iterations": 40},
  "samplers": [{"sampler": "ode", "steps": 20}, {"sampler": "sde", "steps": 40}],
  "n_samples": 300,
  "tid": {"epsilons": [0.1, 0.2], "subset": 300},
  "diagnostics": {"mae_times": [1.0], "mae_points": 200,
                  "error_covariance": {"steps": 20, "chains": 50},
                  "velocity_grid": {"nx": 5, "nt": 4}},
  "seesaw": {"p_max": 6},
  "plots": false
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn run_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SWEEP);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let oa = run(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    let ob = run(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "2"]);
    assert_eq!(code(&ob), 0, "{}", String::from_utf8_lossy(&ob.stderr));
    let (ca, cb) = (csvs(&a), csvs(&b));
    assert!(ca.len() > 10);
    assert_eq!(ca, cb);
    assert!(a.join("manifest.json").exists());
    assert!(!a.join(".lock").exists());

    // One row per (model, sampler, epsilon).
    let tid = String::from_utf8(fs::read(a.join("tid.csv")).unwrap()).unwrap();
    let mut lines = tid.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,sampler,epsilon,hill_train,hill_sampled,alpha_train,alpha_sampled,tid"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 2 * 2);
    for m in ["w8", "w16"] {
        for s in ["ode", "sde"] {
            assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{m},{s},"))).count(), 2);
        }
    }
}

#[test]
fn different_seed_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SWEEP);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["gen", "--config", &cfg, "--out", a.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["gen", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "4"])), 0);
    assert_ne!(fs::read(a.join("dataset.csv")).unwrap(), fs::read(b.join("dataset.csv")).unwrap());
}

#[test]
fn bad_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let text = SWEEP.replace(r#""sampler": "sde""#, r#""sampler": "heun""#);
    let cfg = write_config(tmp.path(), &text);
    let o = run(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("samplers"));
    assert!(!out.exists());

    let text = SWEEP.replace(r#""n_samples""#, r#""n_sample""#);
    let cfg = write_config(tmp.path(), &text);
    let o = run(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_sample"));
    assert!(!out.exists());

    assert_eq!(code(&run(&["gen"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["gen", "--config", "/nonexistent/cfg.json"])), 2);
}

#[test]
fn runtime_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SWEEP);
    let out = tmp.path().join("out");
    // Sampling before training has no checkpoints to load.
    let o = run(&["sample", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));

    let locked = tmp.path().join("locked");
    fs::create_dir_all(&locked).unwrap();
    fs::write(locked.join(".lock"), "").unwrap();
    assert_eq!(code(&run(&["gen", "--config", &cfg, "--out", locked.to_str().unwrap()])), 3);
}

#[test]
fn standalone_commands_write_csv() {
    let o = run(&["seesaw", "--p-max", "4"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "p,ell1,ell2");
    assert_eq!(text.lines().count(), 5);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SWEEP);
    let out = tmp.path().join("g");
    assert_eq!(code(&run(&["gen", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    let data = out.join("dataset.csv");
    let d = data.to_str().unwrap();
    let o = run(&["tid", "--train", d, "--sampled", d, "--eps", "0.1,0.3", "--subset", "500"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",0")));

    let o = run(&["tid", "--train", d, "--sampled", d]);
    assert_eq!(code(&o), 2);
}
