use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hacman");

fn tiny_config(agent: &str) -> String {
    format!(
        "seed = 5
agent.kind = {agent}

[env]
n_object_points = 16
n_background_points = 8

[train]
batch_size = 8
initial_random_steps = 16
total_env_steps = 40
net.encoder = 8,8
net.head = 8

[eval]
every_steps = 20
episodes = 3
"
    )
}

fn write_config(dir: &Path, agent: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, tiny_config(agent)).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("HACMAN_THREADS", "1").output().unwrap()
}

fn train_to(dir: &Path, cfg: &Path, steps: &str) -> Output {
    run(&["train", "--config", cfg.to_str().unwrap(), "--steps", steps, "--out", dir.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_steps_writes_header_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "hacman");
    let out = tmp.path().join("run");
    let o = train_to(&out, &cfg, "0");
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.starts_with("step,episode,success_rate"));
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("train.total_env_steps = 0"));
    assert!(resolved.contains("env.n_object_points = 16"));
}

#[test]
fn resolved_config_reloads_to_the_same_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "hacman");
    let a = tmp.path().join("a");
    assert!(train_to(&a, &cfg, "0").status.success());
    let b = tmp.path().join("b");
    let o = train_to(&b, &a.join("config.resolved"), "0");
    assert!(o.status.success(), "{}", stderr(&o));
    let ra = fs::read_to_string(a.join("config.resolved")).unwrap();
    let rb = fs::read_to_string(b.join("config.resolved")).unwrap();
    assert_eq!(ra.replace(a.to_str().unwrap(), ""), rb.replace(b.to_str().unwrap(), ""));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "hacman");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(train_to(&a, &cfg, "40").status.success());
    assert!(train_to(&b, &cfg, "40").status.success());
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    let mb = fs::read(b.join("metrics.csv")).unwrap();
    assert!(ma.len() > 100);
    assert_eq!(ma, mb);
    assert_eq!(fs::read(a.join("checkpoint_40")).unwrap(), fs::read(b.join("checkpoint_40")).unwrap());
    assert!(a.join("checkpoint_20").exists());
    let events = fs::read_to_string(a.join("events.jsonl")).unwrap();
    assert!(events.lines().any(|l| l.contains("\"eval\"")));
}

#[test]
fn missing_config_exits_2_with_path() {
    let o = run(&["train", "--config", "/nonexistent/dir/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/dir/cfg.toml"));
}

#[test]
fn bad_config_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.cfg");
    fs::write(&p, "train.batch_size = 8\ntrain.polyak_taux = 0.1\n").unwrap();
    let o = run(&["train", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.polyak_taux"), "{}", stderr(&o));

    fs::write(&p, "train.discount = 2\n").unwrap();
    let o = run(&["train", "--config", p.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("train.discount"), "{}", stderr(&o));
}

#[test]
fn eval_untrained_checkpoint_reports_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "hacman");
    let out = tmp.path().join("run");
    assert!(train_to(&out, &cfg, "0").status.success());
    let ck = out.join("checkpoint_0");
    let report = tmp.path().join("report.json");
    let o = run(&[
        "eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "4", "--variant", "hard", "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("success"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["result"]["episodes"].as_array().unwrap().len(), 4);
    let rate = json["result"]["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert_eq!(json["variant"], serde_json::to_value(hacman::TaskVariant::HARD).unwrap());

    let (t1, t2) = (tmp.path().join("t1.jsonl"), tmp.path().join("t2.jsonl"));
    for t in [&t1, &t2] {
        let o = run(&[
            "eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "1", "--seed", "9", "--out",
            report.to_str().unwrap(), "--transcript", t.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(&t1).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(&t2).unwrap());
}

#[test]
fn eval_rejects_mismatched_or_corrupt_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "hacman");
    let out = tmp.path().join("run");
    assert!(train_to(&out, &cfg, "0").status.success());
    let ck = out.join("checkpoint_0");
    let o = run(&["eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "1", "--agent", "regress_contact_location"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("regress_contact_location"), "{}", stderr(&o));
    let o = run(&["eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "1", "--agent", "hacman"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut bytes = fs::read(&ck).unwrap();
    bytes.truncate(bytes.len() / 2);
    let bad = tmp.path().join("truncated");
    fs::write(&bad, bytes).unwrap();
    let o = run(&["eval", "--checkpoint", bad.to_str().unwrap(), "--episodes", "1"]);
    assert_ne!(o.status.code(), Some(0));
    let o = run(&["dump-critic-map", "--checkpoint", bad.to_str().unwrap(), "--out", "/dev/null"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn dump_critic_map_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "hacman");
    let out = tmp.path().join("run");
    assert!(train_to(&out, &cfg, "0").status.success());
    let csv = tmp.path().join("map.csv");
    let o = run(&[
        "dump-critic-map", "--checkpoint", out.join("checkpoint_0").to_str().unwrap(), "--seed", "3", "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,seg,q,prob,am_x,am_y"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 24);
    let mut sum = 0.0;
    for r in &rows {
        let p: f64 = r[4].parse().unwrap();
        match r[2] {
            "object" => sum += p,
            "background" => assert_eq!(p, 0.0),
            s => panic!("seg {s}"),
        }
    }
    assert!((sum - 1.0).abs() < 1e-6, "{sum}");
}

#[test]
fn dump_critic_map_rejects_global_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "regress_contact_location");
    let out = tmp.path().join("run");
    assert!(train_to(&out, &cfg, "0").status.success());
    let o = run(&[
        "dump-critic-map", "--checkpoint", out.join("checkpoint_0").to_str().unwrap(), "--out",
        tmp.path().join("m.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_exit_codes() {
    let o = run(&["gradcheck", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("checks passed"));
    let o = run(&["gradcheck", "--seeds", "1", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("failed:"));
    let o = run(&["gradcheck", "--seeds", "0"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        hacman::RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 3);
}
