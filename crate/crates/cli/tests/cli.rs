use std::fs;
use std::process::{Command, Output};

fn impactlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impactlab"))
        .args(args)
        .env("IMPACTLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_envs_prints_every_builtin() {
    let out = impactlab(&["list-envs"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 7);
    for name in ["box_corner", "sushi_belt", "vase_belt", "door_grocery", "car_curve", "subagent_workshop", "orbit_toy"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn verbose_listing_has_sizes() {
    let out = impactlab(&["list-envs", "--verbose"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().all(|l| l.contains("states") && l.contains("actions")));
    assert!(text.contains("   7 states"));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = impactlab(&["run", "--env", "box_corner", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_values_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    for args in [
        vec!["run", "--env", "no_such_env", "--out", o],
        vec!["run", "--env", "box_corner", "--measure", "vibes", "--out", o],
        vec!["run", "--env", "box_corner", "--mu-grid", "10,1", "--out", o],
        vec!["run", "--env", "box_corner", "--gamma", "1.5", "--out", o],
    ] {
        let out = impactlab(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[env]\nname = \"box_corner\"\ncolour = \"red\"\n").unwrap();
    let out = impactlab(&["run", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn box_corner_sweep_finds_a_safe_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = impactlab(&["run", "--env", "box_corner", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("mu,task_return,total_impact,audit_impact,behavior,policy_hash"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().any(|r| r.contains(",safe_effective,")));
    assert!(rows.first().unwrap().contains(",harmful_effective,"));
    assert!(dir.path().join("run.meta").exists());
    assert!(dir.path().join("sweep.svg").exists());
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[env]\nname = \"car_curve\"\n\n[measure]\nkind = \"aup\"\n\n[planner]\nmu_grid = \"0.1,1\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = impactlab(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--mu-grid",
        "0,1,10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let meta = fs::read_to_string(out_dir.join("run.meta")).unwrap();
    assert!(meta.contains("car_curve"));
    assert!(meta.contains("aup"));
    // a small env gets the exact frontier too
    assert!(out_dir.join("frontier.csv").exists());
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |d: &str| {
        vec![
            "run".to_string(),
            "--env".into(),
            "vase_belt".into(),
            "--baseline".into(),
            "initial-inaction".into(),
            "--mu-grid".into(),
            "0.01:100:5log".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            d.to_string(),
        ]
    };
    for d in [&a, &b] {
        let v = args(d.path().to_str().unwrap());
        let v: Vec<&str> = v.iter().map(String::as_str).collect();
        assert!(impactlab(&v).status.success());
    }
    for f in ["sweep.csv", "sweep.svg"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn verify_filter_runs_one_criterion() {
    let out = impactlab(&["verify", "--filter", "telescoping"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("[PASS]"));

    let out = impactlab(&["verify", "--filter", "nothing-like-this"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn injected_fault_is_caught() {
    let out = impactlab(&["verify", "--filter", "family-collapse", "--inject-fault", "rr-sign-flip"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stdout(&out).starts_with("[FAIL]"));
}

#[test]
fn run_meta_replays_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = impactlab(&["run", "--env", "car_curve", "--mu-grid", "0.1,1,10", "--out", a.path().to_str().unwrap()]);
    assert!(first.status.success());
    let meta = a.path().join("run.meta");
    let again = impactlab(&["run", "--config", meta.to_str().unwrap(), "--out", b.path().to_str().unwrap()]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(
        fs::read(a.path().join("sweep.csv")).unwrap(),
        fs::read(b.path().join("sweep.csv")).unwrap()
    );
}
