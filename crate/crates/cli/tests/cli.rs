use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
seed = 5

[generator]
family = "caching"
train_series = 4
val_series = 2
test_series = 2
timesteps = 4

[generator.caching]
items = 8

[training]
steps = 10
batch_size = 2
validate_every = 5

[loss.lambda]
warmup_steps = 5
[loss.lambda_reg]
warmup_steps = 5
[loss.lambda_c]
warmup_steps = 10
[optimizer.lr]
warmup_steps = 5

[evaluation]
rho_grid = [0.5]
gamma_grid = [1.0]
"#;

fn predfix(run: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_predfix"))
        .arg("--run-dir")
        .arg(run)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn full_pipeline_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = dir.path().join("c.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let cfg = config.to_str().unwrap();

    for args in [
        vec!["--config", cfg, "generate"],
        vec!["label"],
        vec!["train"],
        vec!["evaluate"],
        vec!["predict", "--rho", "0", "--gamma", "0"],
    ] {
        let out = predfix(&run, &args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(run.join("metrics.tsv").exists());
    let preds = std::fs::read_to_string(run.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 8);
    // ρ = 0 fixes nothing
    assert!(preds.lines().all(|l| l.contains("\"fixed\":[]")));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[training]\nstepz = 3\n").unwrap();
    let out = predfix(dir.path(), &["--config", bad.to_str().unwrap(), "generate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = predfix(&dir.path().join("empty"), &["label"]);
    assert_eq!(out.status.code(), Some(4));
}
