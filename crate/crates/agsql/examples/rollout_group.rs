//! Roll a group of sibling policies over one task and turn their
//! trajectory rewards into advantages — the signal a trainer would
//! broadcast over each trajectory's tokens.
//!
//! Run with: `cargo run --example rollout_group`

use agsql::agent_env::{rollout_group, tool_call_text, EnvConfig, RolloutContext, ScriptedPolicy};
use agsql::atr::AtrPreset;
use agsql::csmr::CsmrConfig;
use agsql::datasets::mini_corpus::{self, write_mini_corpus};
use agsql::grpo::GrpoConfig;

fn main() {
    let dir = std::env::temp_dir().join("agsql-rollout-group");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let manifest = write_mini_corpus(&dir).expect("corpus materializes");
    let task = manifest.task_by_id("mini_006").expect("task exists");

    let env_cfg = EnvConfig::default();
    let csmr_cfg = CsmrConfig::default();
    let atr_cfg = AtrPreset::Eq2.config();
    let ctx = RolloutContext {
        db_root: &manifest.db_root,
        env: &env_cfg,
        csmr: &csmr_cfg,
        atr: &atr_cfg,
    };

    let finish = |sql: &str| format!("```sql\n{sql}\n```");
    let probe = mini_corpus::probe_sql(task).expect("probe");
    let wrong = mini_corpus::wrong_sql(task).expect("wrong");

    // Eight members, four behaviors (seed picks the script round-robin):
    // explore-then-solve, solve at once, oscillate, give a wrong answer.
    let policy = ScriptedPolicy::per_seed(vec![
        vec![
            tool_call_text("run_sql_remote", probe, &task.db_id),
            tool_call_text("run_sql_remote", &task.gold_sql, &task.db_id),
            finish(&task.gold_sql),
        ],
        vec![finish(&task.gold_sql)],
        vec![
            tool_call_text("run_sql_remote", &task.gold_sql, &task.db_id),
            tool_call_text("run_sql_remote", wrong, &task.db_id),
            finish(&task.gold_sql),
        ],
        vec![finish(wrong)],
    ]);

    let group = rollout_group(&policy, task, &ctx, 8, None, 2).expect("group rolls");
    let advantages = group.rewards.advantages(&GrpoConfig::default());

    println!("task: {}", task.question);
    println!("{:<6} {:>7} {:>9} {:>10}  csmr sequence", "member", "turns", "reward", "advantage");
    for (i, record) in group.trajectories.iter().enumerate() {
        println!(
            "{:<6} {:>7} {:>9.4} {:>+10.4}  {:?}",
            i, record.turn_count, record.atr.total, advantages[i], record.csmr_sequence
        );
    }
}
