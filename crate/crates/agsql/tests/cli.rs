//! Integration tests for the `agsql` binary: JSON on stdout, exit codes,
//! and the configuration precedence matrix.

use std::path::Path;
use std::process::{Command, Output};

fn agsql() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_agsql"));
    // Tests control the environment layer explicitly.
    for (key, _) in std::env::vars() {
        if key.starts_with("AGSQL_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        )
    })
}

#[test]
fn atr_reproduces_figure_row() {
    let output = agsql()
        .args(["atr", "--scores", "1,0,1", "--preset", "figure"])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let value = stdout_json(&output);
    assert!((value["total"].as_f64().unwrap() - 0.30).abs() < 1e-9);
}

#[test]
fn verify_exit_codes_follow_certification() {
    let output = agsql()
        .args(["verify", "--preset", "eq2", "--max-len", "6", "--grid", "0,1"])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    assert_eq!(stdout_json(&output)["certified"], true);

    // The symmetric control has break-even cycles: exit 1, report on stdout.
    let output = agsql()
        .args([
            "verify",
            "--preset",
            "eq2",
            "--override",
            "m_hl=-1.0",
            "--max-len",
            "4",
            "--grid",
            "0,1",
        ])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    let value = stdout_json(&output);
    assert_eq!(value["certified"], false);
    assert!(!value["violations"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_flag_is_usage_error() {
    let output = agsql()
        .args(["atr", "--scores", "1", "--bogus"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn score_tables_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.json");
    let pred = dir.path().join("pred.json");
    std::fs::write(&gold, r#"[["a1","b1"],["a2","b2"]]"#).unwrap();
    std::fs::write(&pred, r#"[["a1","b2"],["a2","b1"]]"#).unwrap();

    let output = agsql()
        .args([
            "score",
            "--gold",
            gold.to_str().unwrap(),
            "--pred",
            pred.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let value = stdout_json(&output);
    assert_eq!(value["value"], 0.8);
    assert_eq!(value["perfect"], false);

    // Identical files score 1.0 (the file-vs-file identity case).
    let output = agsql()
        .args([
            "score",
            "--gold",
            gold.to_str().unwrap(),
            "--pred",
            gold.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    assert_eq!(stdout_json(&output)["value"], 1.0);
}

#[test]
fn score_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.csv");
    let pred = dir.path().join("pred.csv");
    std::fs::write(&gold, "phone\n555,\n").unwrap();
    std::fs::write(&pred, "phone\n555,\n").unwrap();
    let output = agsql()
        .args([
            "score",
            "--gold",
            gold.to_str().unwrap(),
            "--pred",
            pred.to_str().unwrap(),
            "--header",
        ])
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(stdout_json(&output)["value"], 1.0);
}

#[test]
fn bad_gold_sql_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let output = agsql()
        .args([
            "score",
            "--gold",
            "SELECT nope FROM products",
            "--pred",
            "SELECT name FROM products",
            "--db",
            "orchard_sales",
            "--db-root",
        ])
        .arg(dir.path().join("dbs"))
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    assert!(stdout_json(&output)["error"]
        .as_str()
        .unwrap()
        .contains("no such column"));
}

fn write_corpus(dir: &Path) {
    let output = agsql()
        .args(["mini-corpus", "--out"])
        .arg(dir)
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn rollout_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let tasks = dir.path().join("tasks.json");
    let dbs = dir.path().join("dbs");
    let script = dir.path().join("script.json");
    let jsonl = dir.path().join("run.jsonl");
    // One canned response: immediately answer with the gold query of the
    // orchard count task.
    std::fs::write(
        &script,
        serde_json::to_string(&vec![
            "```sql\nSELECT COUNT(*) FROM products WHERE category = 'apple'\n```",
        ])
        .unwrap(),
    )
    .unwrap();

    let output = agsql()
        .args(["rollout", "--tasks"])
        .arg(&tasks)
        .args(["--db-root"])
        .arg(&dbs)
        .args(["--script"])
        .arg(&script)
        .args(["--task", "mini_002", "--group-size", "1", "--out"])
        .arg(&jsonl)
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary = stdout_json(&output);
    assert_eq!(summary["rollouts"], 1);

    let output = agsql()
        .args(["eval", "--tasks"])
        .arg(&tasks)
        .args(["--db-root"])
        .arg(&dbs)
        .args(["--trajectories"])
        .arg(&jsonl)
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report = stdout_json(&output);
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["n_tasks"], 1);
}

#[test]
fn loss_from_batch_file() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("batch.json");
    std::fs::write(
        &batch,
        serde_json::json!({
            "advantages": [1.0],
            "trajectories": [{ "ratios": [1.0], "mask": [1] }],
        })
        .to_string(),
    )
    .unwrap();
    let output = agsql()
        .args(["loss", "--batch"])
        .arg(&batch)
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    assert_eq!(stdout_json(&output)["loss"], -1.0);
}

// ---------------------------------------------------------------------------
// Precedence matrix: flags > env > file > defaults, observed through
// --show-config (the printed config is the exact input to subcommands).
// ---------------------------------------------------------------------------

#[test]
fn precedence_matrix_for_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("agsql.toml");
    std::fs::write(&config, "[csmr]\nalpha = 0.5\n").unwrap();

    let alpha_of = |cmd: &mut Command| -> f64 {
        let output = cmd.output().expect("binary runs");
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        stdout_json(&output)["alpha"].as_f64().expect("alpha in config")
    };

    // Defaults.
    assert_eq!(
        alpha_of(agsql().args(["--show-config", "score", "--gold", "g", "--pred", "p"])),
        0.8
    );
    // File beats defaults.
    assert_eq!(
        alpha_of(
            agsql()
                .args(["--show-config", "--config"])
                .arg(&config)
                .args(["score", "--gold", "g", "--pred", "p"])
        ),
        0.5
    );
    // Env beats file.
    assert_eq!(
        alpha_of(
            agsql()
                .env("AGSQL_ALPHA", "0.6")
                .args(["--show-config", "--config"])
                .arg(&config)
                .args(["score", "--gold", "g", "--pred", "p"])
        ),
        0.6
    );
    // Flags beat env.
    assert_eq!(
        alpha_of(
            agsql()
                .env("AGSQL_ALPHA", "0.6")
                .args(["--show-config", "--config"])
                .arg(&config)
                .args(["score", "--gold", "g", "--pred", "p", "--alpha", "0.9"])
        ),
        0.9
    );
    // The config file is also picked up from AGSQL_CONFIG.
    assert_eq!(
        alpha_of(
            agsql()
                .env("AGSQL_CONFIG", &config)
                .args(["--show-config", "score", "--gold", "g", "--pred", "p"])
        ),
        0.5
    );
}

#[test]
fn precedence_for_atr_preset() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("agsql.toml");
    std::fs::write(&config, "[atr]\npreset = \"figure\"\n").unwrap();

    // File sets figure; the flag forces eq2 back.
    let output = agsql()
        .args(["--config"])
        .arg(&config)
        .args(["atr", "--scores", "0,1"])
        .output()
        .expect("binary runs");
    let total = stdout_json(&output)["total"].as_f64().unwrap();
    assert!((total - 0.9).abs() < 1e-9, "figure preset total for [0,1]: {total}");

    let output = agsql()
        .args(["--config"])
        .arg(&config)
        .args(["atr", "--scores", "0,1", "--preset", "eq2"])
        .output()
        .expect("binary runs");
    let total = stdout_json(&output)["total"].as_f64().unwrap();
    assert!((total - 1.9999).abs() < 1e-9, "eq2 preset total for [0,1]: {total}");
}
