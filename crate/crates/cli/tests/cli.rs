use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn afguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afguide")).args(args).output().expect("spawn afguide")
}

fn ok(args: &[&str]) -> String {
    let out = afguide(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline_from_data_to_report() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("c.afd");
    let ckpt = d.path().join("afdt.ckpt");
    let afdt_cfg = d.path().join("afdt.json");
    let sac_cfg = d.path().join("sac.json");
    let runs = d.path().join("runs");
    fs::write(
        &afdt_cfg,
        r#"{"context_len": 4, "transformer": {"n_blocks": 1, "n_heads": 1, "d_embed": 8, "dropout": 0.0, "max_tokens": 8},
            "train_steps": 20, "checkpoint_steps": [10, 20], "batch_size": 8, "val_windows": 16}"#,
    )
    .unwrap();
    fs::write(&sac_cfg, r#"{"hidden_dim": 8, "n_hidden_layers": 1, "batch_size": 8, "warmup_steps": 50, "eval_every": 100, "eval_episodes": 1}"#).unwrap();

    ok(&["gen-data", "--env", "corridor", "--policy", "medium", "--episodes", "5", "--seed", "1", "--out", p(&data)]);
    ok(&["pretrain", "--data", p(&data), "--config", p(&afdt_cfg), "--out", p(&ckpt)]);
    assert!(Path::new(&format!("{}.json", p(&ckpt))).is_file());
    let log = fs::read_to_string(format!("{}.log.csv", p(&ckpt))).unwrap();
    assert!(log.starts_with("step,train_loss,val_loss\n"));

    for (mode, seed) in [("guided", "1"), ("guided", "2"), ("sac", "1"), ("reward-mix", "1")] {
        ok(&[
            "train", "--env", "corridor", "--mode", mode, "--afdt", p(&ckpt), "--beta", "3.0", "--rtg", "150", "--steps", "200",
            "--seed", seed, "--out", p(&runs), "--config", p(&sac_cfg),
        ]);
    }
    let curve = fs::read_to_string(runs.join("guided_seed1.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert!(runs.join("reward_mix_seed1.csv").is_file());

    let summary = d.path().join("summary.csv");
    let a = runs.join("guided_seed1.csv");
    let b = runs.join("guided_seed2.csv");
    ok(&["report", "--in", p(&a), p(&b), "--out", p(&summary)]);
    let text = fs::read_to_string(&summary).unwrap();
    assert!(text.starts_with("step,n,eval_return_mean"));
    assert_eq!(text.lines().nth(1).unwrap().split(',').nth(1), Some("2"));

    let out = ok(&["evaluate", "--policy", p(&runs.join("sac_seed1_policy.afgc")), "--env", "corridor", "--episodes", "2"]);
    assert!(out.contains("success_rate"));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("missing.afd");
    let out = afguide(&["pretrain", "--data", p(&missing), "--out", p(&d.path().join("x.ckpt"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    let out = afguide(&["train", "--env", "corridor", "--mode", "guided", "--steps", "10", "--out", p(d.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--afdt"));

    let out = afguide(&["gen-data", "--env", "moon", "--policy", "expert", "--episodes", "1", "--out", p(&missing)]);
    assert!(!out.status.success());
}
