//! End-to-end pipeline on the bundled mini-corpus: materialize databases,
//! validate gold queries, roll two scripted strategies over every task,
//! and compare execution accuracy and mean trajectory reward.
//!
//! Both strategies end on the correct answer; only their paths differ. The
//! steady strategy probes, then solves. The oscillating strategy solves,
//! wanders off to a wrong query, then solves again — and pays for the loop.
//!
//! Run with: `cargo run --example mini_benchmark`

use agsql::agent_env::{rollout, tool_call_text, EnvConfig, RolloutContext, ScriptedPolicy};
use agsql::atr::AtrPreset;
use agsql::csmr::CsmrConfig;
use agsql::datasets::mini_corpus::{self, write_mini_corpus};
use agsql::datasets::TaskRecord;
use agsql::evalkit::evaluate_trajectories;
use agsql::sql_exec::validate_gold;

fn finish(sql: &str) -> String {
    format!("Final answer:\n```sql\n{sql}\n```")
}

/// Probe first, then execute the gold query, then finish with it.
fn steady_script(task: &TaskRecord) -> Vec<String> {
    let probe = mini_corpus::probe_sql(task).expect("valid tasks carry probe_sql");
    vec![
        tool_call_text("run_sql_remote", probe, &task.db_id),
        tool_call_text("run_sql_remote", &task.gold_sql, &task.db_id),
        finish(&task.gold_sql),
    ]
}

/// Hit the right answer, abandon it for a wrong query, come back.
fn oscillating_script(task: &TaskRecord) -> Vec<String> {
    let wrong = mini_corpus::wrong_sql(task).expect("valid tasks carry wrong_sql");
    vec![
        tool_call_text("run_sql_remote", &task.gold_sql, &task.db_id),
        tool_call_text("run_sql_remote", wrong, &task.db_id),
        finish(&task.gold_sql),
    ]
}

fn main() {
    let dir = std::env::temp_dir().join("agsql-mini-benchmark");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let manifest = write_mini_corpus(&dir).expect("corpus materializes");
    println!("corpus at {} ({} tasks)", dir.display(), manifest.tasks.len());

    let env_cfg = EnvConfig::default();
    let validation = validate_gold(&manifest.tasks, &manifest.db_root, &env_cfg.exec);
    println!(
        "gold validation: kept {}, dropped {}",
        validation.kept.len(),
        validation.dropped.len()
    );
    for dropped in &validation.dropped {
        println!("  dropped {}: {}", dropped.task.id, dropped.reason);
    }

    let csmr_cfg = CsmrConfig::default();
    let atr_cfg = AtrPreset::Eq2.config();
    let ctx = RolloutContext {
        db_root: &manifest.db_root,
        env: &env_cfg,
        csmr: &csmr_cfg,
        atr: &atr_cfg,
    };

    for (name, script) in [
        ("steady", steady_script as fn(&TaskRecord) -> Vec<String>),
        ("oscillating", oscillating_script),
    ] {
        let mut records = Vec::new();
        for task in &validation.kept {
            let policy = ScriptedPolicy::new(script(task));
            records.push(rollout(&policy, task, &ctx, 0).expect("rollout succeeds"));
        }
        let report =
            evaluate_trajectories(&manifest, &records, &env_cfg.exec).expect("eval succeeds");
        let mean_atr: f64 =
            records.iter().map(|r| r.atr.total).sum::<f64>() / records.len() as f64;
        println!(
            "{name:<12} accuracy {:.2} ({} of {}), mean ATR {:+.4}",
            report.accuracy, report.n_correct, report.n_tasks, mean_atr
        );
    }
}
