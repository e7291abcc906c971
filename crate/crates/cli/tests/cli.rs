use std::path::Path;
use std::process::{Command, Output};

fn gaclab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaclab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_PROP1: &str = "\
env = bandit_prop1
seeds = 5
steps = 150
warmup = 50
eval_interval = 50
eval_episodes = 2
batch_size = 8
candidates = 4
value_samples = 2
critic_hidden = 8
actor_features = 4
actor_width = 4
actor_hidden = 4
actor_recurrent = 2
pg_steps = 200
drift_grid = 11
";

#[test]
fn missing_env_is_an_error_naming_env() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.conf"), "agent = gac_iqn\nsteps = 10\n").unwrap();
    let o = gaclab(&["train", "--config", "c.conf", "--out", "out"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`env`"), "{}", stderr(&o));
    assert!(!dir.path().join("out/metrics.csv").exists());
}

#[test]
fn bad_keys_and_values_are_named() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [("env = pointmass\nlr = 1\n", "`lr`"), ("env = pointmass\nsteps = many\n", "`steps`")] {
        std::fs::write(dir.path().join("c.conf"), text).unwrap();
        let o = gaclab(&["train", "--config", "c.conf"], dir.path());
        assert!(!o.status.success());
        assert!(stderr(&o).contains(key), "{}", stderr(&o));
    }
    let o = gaclab(&["train", "--preset", "mechanics", "--set", "polyak=x"], dir.path());
    assert!(stderr(&o).contains("`polyak`"), "{}", stderr(&o));
}

#[test]
fn same_config_and_seed_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = gaclab(&["train", "--preset", "mechanics", "--seed", "3", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("a/checkpoint.bin").exists());
    let resolved = std::fs::read_to_string(dir.path().join("a/config.resolved")).unwrap();
    assert!(resolved.contains("seed = 3\n"));
    assert!(resolved.contains("polyak = 0.005\n"));

    gaclab(&["train", "--preset", "mechanics", "--seed", "4", "--out", "c"], dir.path());
    let c = std::fs::read(dir.path().join("c/metrics.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn prop1_comparison_has_two_agents_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.conf"), TINY_PROP1).unwrap();
    let o = gaclab(&["prop1", "--config", "p.conf", "--out", "p"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("p/comparison.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("seed,agent,final_reward,escaped"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 10);
    for seed in 0..5 {
        let agents: Vec<&str> = rows.iter().filter(|r| r[0] == seed.to_string()).map(|r| r[1]).collect();
        assert_eq!(agents, ["pg_gaussian", "gac_aiqn"]);
    }
    assert!(rows.iter().all(|r| r[3] == "true" || r[3] == "false"));
    assert!(dir.path().join("p/runs/seed4_gac_aiqn/metrics.csv").exists());
    let drift = std::fs::read_to_string(dir.path().join("p/drift_field.csv")).unwrap();
    assert_eq!(drift.lines().count(), 1 + 2 * 11);
}

#[test]
fn dpo_tabular_writes_one_row_per_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = gaclab(
        &["dpo-tabular", "--preset", "dpo", "--set", "target=linear", "--set", "check_every=1", "--out", "d"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("d/dpo.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,v_0,distance"));
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(last[2] <= 1e-3);
}

#[test]
fn emit_plotdata_aggregates_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.csv"), "step,eval_return_mean\n5,1\n").unwrap();
    std::fs::write(dir.path().join("b.csv"), "step,eval_return_mean\n5,3\n").unwrap();
    std::fs::write(dir.path().join("e.csv"), "").unwrap();
    let o = gaclab(&["emit-plotdata", "a.csv", "b.csv", "--out", "plot.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert!(text.starts_with("run_id,step,metric,value\n"));
    assert!(text.contains("aggregate,5,eval_return_mean,2\n"));
    assert!(text.contains(&format!("aggregate,5,eval_return_mean_std,{}\n", 2f64.sqrt())));

    let o = gaclab(&["emit-plotdata", "e.csv", "--out", "bad.csv"], dir.path());
    assert!(!o.status.success());
    assert!(!dir.path().join("bad.csv").exists());
}

#[test]
fn gradcheck_passes_for_a_few_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = gaclab(&["gradcheck", "--set", "gradcheck_seeds=3", "--out", "g"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("g/gradcheck.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 9);
}
