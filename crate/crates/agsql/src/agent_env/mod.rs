//! The finite-horizon interaction loop: conversation state, environment
//! stepping with a bounded tool budget, and rollout of pluggable policies
//! into scored trajectories.
//!
//! One episode is at most `max_tool_calls + 1` assistant turns. Executed
//! queries are scored against the task's gold result after every turn; at
//! termination the final answer is executed, scored, and the whole score
//! sequence is aggregated into the trajectory reward.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::atr::{atr_total, AtrBreakdown, AtrConfig, AtrError};
use crate::csmr::{csmr_score, CsmrConfig};
use crate::datasets::TaskRecord;
use crate::grpo::RolloutGroup;
use crate::result_model::ResultTable;
use crate::sql_exec::{execute, render_observation, schema_dump, DbHandle, ExecError, ExecOutcome};

mod parse;
mod policy;

pub use parse::{parse_action, strip_sql_fences, Action, MalformedKind};
pub use policy::{
    PolicyAdapter, PolicyError, RemotePolicy, ScriptedPolicy, POLICY_TIMEOUT_ENV, POLICY_URL_ENV,
};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("gold SQL of task {task_id} failed to execute: {reason}")]
    GoldExecutionFailed { task_id: String, reason: String },
    #[error("rollout group needs at least 2 members, got {0}")]
    DegenerateGroup(usize),
    #[error("max_tool_calls must be at least 1")]
    NoToolBudget,
    #[error(transparent)]
    Atr(#[from] AtrError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad trajectory record at line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

/// The full interaction history: one system message, one user message (the
/// task prompt), then alternating assistant/tool messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    messages: Vec<Message>,
}

impl Conversation {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Conversation {
        Conversation {
            messages: vec![
                Message {
                    role: Role::System,
                    text: system.into(),
                },
                Message {
                    role: Role::User,
                    text: user.into(),
                },
            ],
        }
    }

    pub fn push_assistant(&mut self, text: impl Into<String>) {
        self.messages.push(Message {
            role: Role::Assistant,
            text: text.into(),
        });
    }

    pub fn push_tool(&mut self, text: impl Into<String>) {
        self.messages.push(Message {
            role: Role::Tool,
            text: text.into(),
        });
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// Everything generated after the prompt (assistant turns interleaved
    /// with injected tool responses), concatenated in order. This is the
    /// text the token mask applies to.
    pub fn completion_text(&self) -> String {
        let mut out = String::new();
        for message in self.messages.iter().skip(2) {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&message.text);
        }
        out
    }
}

/// Prompt templates. Placeholders: `{max_tool_calls}` in the system
/// template; `{schema}`, `{question}`, `{evidence}`, `{db_id}` in the user
/// template. Templates pass through verbatim otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub system: String,
    pub user: String,
}

pub const DEFAULT_SYSTEM_TEMPLATE: &str = "You are a helpful SQL assistant. Answer the user's question by calling a \
tool that runs SQL against the database. After each tool call, judge the \
result returned inside <tool_response></tool_response> and decide whether \
another query is needed. You may run exploratory queries before giving the \
final SQL code. You can call the tool at most {max_tool_calls} times.";

pub const DEFAULT_USER_TEMPLATE: &str = r#"Task overview:
You are a data science expert. Below you find a database schema and a
natural language question. Understand the schema and produce a valid SQL
query that answers the question.

Database engine:
SQLite

Database schema:
{schema}

{evidence}Question:
{question}

Instructions:
- Return only the information the question asks for, nothing more.
- Think through the steps before writing the query.

When you are done, put the final SQL query in a code block:
```sql
-- your SQL query
```

For each turn, think step by step first, then make the tool call in this format:
<tool_call>
{"name": "run_sql_remote", "arguments": {"query": "```sql\n-- your SQL query\n```", "db_id": "{db_id}"}}
</tool_call>"#;

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system: DEFAULT_SYSTEM_TEMPLATE.to_string(),
            user: DEFAULT_USER_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn render_system(&self, max_tool_calls: usize) -> String {
        self.system
            .replace("{max_tool_calls}", &max_tool_calls.to_string())
    }

    pub fn render_user(&self, task: &TaskRecord, schema: &str) -> String {
        let evidence = task
            .evidence
            .as_ref()
            .map(|e| format!("Evidence:\n{e}\n\n"))
            .unwrap_or_default();
        self.user
            .replace("{schema}", schema)
            .replace("{question}", &task.question)
            .replace("{evidence}", &evidence)
            .replace("{db_id}", &task.db_id)
    }
}

/// Episode limits and prompt configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Tool calls an episode may consume; one extra turn is granted for the
    /// final answer.
    pub max_tool_calls: usize,
    pub exec: crate::sql_exec::ExecConfig,
    #[serde(default)]
    pub prompts: PromptTemplates,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            max_tool_calls: 3,
            exec: crate::sql_exec::ExecConfig::default(),
            prompts: PromptTemplates::default(),
        }
    }
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The policy gave a final answer.
    Finished,
    /// Tool budget exhausted; the last executed SQL stands as the answer.
    Forced,
    /// The response contained no action at all; scored as zero.
    NoAction,
}

/// Mutable episode bookkeeping threaded through [`step`].
#[derive(Debug, Clone, Default)]
pub struct EpisodeState {
    pub tool_calls_used: usize,
    pub done: bool,
    pub last_executed_sql: Option<String>,
    pub final_sql: Option<String>,
    pub termination: Option<Termination>,
}

impl EpisodeState {
    pub fn new() -> EpisodeState {
        EpisodeState::default()
    }
}

/// What one environment step produced.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Tool message to inject, already wrapped in
    /// `<tool_response>…</tool_response>`; absent on terminating steps.
    pub observation: Option<String>,
    pub done: bool,
    /// Execution outcome when a query actually ran this step.
    pub executed: Option<ExecOutcome>,
}

fn wrap_observation(text: &str) -> String {
    format!("<tool_response>\n{text}\n</tool_response>")
}

/// Advance one episode by one action.
///
/// Budget rules: `ExecuteSql` and recoverable `Malformed` actions consume a
/// tool call; once the budget is spent, any further non-finish action forces
/// termination with the last executed SQL as the final answer. A response
/// with no action at all terminates the episode immediately.
pub fn step(
    state: &mut EpisodeState,
    action: &Action,
    db: &DbHandle,
    env_cfg: &EnvConfig,
) -> Result<StepOutput, EnvError> {
    if state.done {
        return Err(EnvError::EpisodeDone);
    }
    match action {
        Action::Finish { sql } => {
            state.done = true;
            state.final_sql = Some(sql.clone());
            state.termination = Some(Termination::Finished);
            Ok(StepOutput {
                observation: None,
                done: true,
                executed: None,
            })
        }
        Action::Malformed {
            reason: MalformedKind::NoAction,
        } => {
            state.done = true;
            state.final_sql = None;
            state.termination = Some(Termination::NoAction);
            Ok(StepOutput {
                observation: None,
                done: true,
                executed: None,
            })
        }
        Action::ExecuteSql { query, .. } => {
            if state.tool_calls_used >= env_cfg.max_tool_calls {
                state.done = true;
                state.final_sql = state.last_executed_sql.clone();
                state.termination = Some(Termination::Forced);
                return Ok(StepOutput {
                    observation: None,
                    done: true,
                    executed: None,
                });
            }
            state.tool_calls_used += 1;
            state.last_executed_sql = Some(query.clone());
            let outcome = execute(db, query, &env_cfg.exec);
            let observation = wrap_observation(&render_observation(&outcome, &env_cfg.exec));
            Ok(StepOutput {
                observation: Some(observation),
                done: false,
                executed: Some(outcome),
            })
        }
        Action::Malformed { .. } => {
            if state.tool_calls_used >= env_cfg.max_tool_calls {
                state.done = true;
                state.final_sql = state.last_executed_sql.clone();
                state.termination = Some(Termination::Forced);
                return Ok(StepOutput {
                    observation: None,
                    done: true,
                    executed: None,
                });
            }
            state.tool_calls_used += 1;
            Ok(StepOutput {
                observation: Some(wrap_observation("error: invalid tool call")),
                done: false,
                executed: Some(ExecOutcome::SqlError("invalid tool call".to_string())),
            })
        }
    }
}

/// Compact execution summary stored in trajectory records (full tables stay
/// out of the JSONL; the rendered observation carries the visible rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutcomeSummary {
    Ok { rows: usize, columns: usize },
    SqlError { message: String },
    Timeout,
    ResourceLimit,
}

impl OutcomeSummary {
    fn from_outcome(outcome: &ExecOutcome) -> OutcomeSummary {
        match outcome {
            ExecOutcome::Ok(t) => OutcomeSummary::Ok {
                rows: t.row_count(),
                columns: t.columns(),
            },
            ExecOutcome::SqlError(m) => OutcomeSummary::SqlError { message: m.clone() },
            ExecOutcome::Timeout => OutcomeSummary::Timeout,
            ExecOutcome::ResourceLimit => OutcomeSummary::ResourceLimit,
        }
    }
}

/// One assistant turn with everything the environment knew about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub turn: usize,
    pub assistant_text: String,
    pub action: Action,
    pub outcome: Option<OutcomeSummary>,
    pub observation: Option<String>,
    /// Score of the executed query; `None` on terminating turns (the final
    /// answer's score lands in `final_csmr`).
    pub csmr: Option<f64>,
}

/// One complete scored rollout. `csmr_sequence` is exactly the input the
/// trajectory reward was computed from: the per-turn scores followed by the
/// final answer's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_sql: Option<String>,
    pub final_csmr: f64,
    pub csmr_sequence: Vec<f64>,
    pub atr: AtrBreakdown,
    pub turn_count: usize,
    pub termination: Option<Termination>,
    /// Failure reason when the policy did not deliver (deadline, transport);
    /// such trajectories carry zero scores.
    pub failed: Option<String>,
}

impl TrajectoryRecord {
    /// The generated-trajectory text in transcript order: assistant turns
    /// interleaved with the injected observations. This is the string the
    /// reasoning-token mask applies to.
    pub fn completion_text(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&step.assistant_text);
            if let Some(observation) = &step.observation {
                out.push('\n');
                out.push_str(observation);
            }
        }
        out
    }
}

/// Shared inputs of a rollout.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub db_root: &'a Path,
    pub env: &'a EnvConfig,
    pub csmr: &'a CsmrConfig,
    pub atr: &'a AtrConfig,
}

fn score_outcome(outcome: &ExecOutcome, gold: &ResultTable, cfg: &CsmrConfig) -> f64 {
    match outcome {
        ExecOutcome::Ok(table) => csmr_score(gold, table, cfg).value,
        // No table to compare: the only consistent partial score is zero.
        _ => 0.0,
    }
}

fn failed_record(
    task: &TaskRecord,
    seed: u64,
    steps: Vec<StepRecord>,
    reason: String,
    atr_cfg: &AtrConfig,
) -> Result<TrajectoryRecord, EnvError> {
    let turn_count = steps.len();
    Ok(TrajectoryRecord {
        task_id: task.id.clone(),
        seed,
        steps,
        final_sql: None,
        final_csmr: 0.0,
        csmr_sequence: vec![0.0],
        atr: atr_total(&[0.0], atr_cfg)?,
        turn_count,
        termination: None,
        failed: Some(reason),
    })
}

/// Run one policy over one task until termination and score the trajectory.
///
/// The gold SQL is executed once up front (an inexecutable gold is an
/// error: validate tasks first). Policy failures do not abort: they yield a
/// trajectory marked failed with zero scores.
pub fn rollout(
    policy: &dyn PolicyAdapter,
    task: &TaskRecord,
    ctx: &RolloutContext<'_>,
    seed: u64,
) -> Result<TrajectoryRecord, EnvError> {
    if ctx.env.max_tool_calls == 0 {
        return Err(EnvError::NoToolBudget);
    }
    let db = DbHandle::open(ctx.db_root, &task.db_id)?;
    let gold_outcome = execute(&db, &task.gold_sql, &ctx.env.exec);
    let gold = match gold_outcome.table() {
        Some(t) => t.clone(),
        None => {
            return Err(EnvError::GoldExecutionFailed {
                task_id: task.id.clone(),
                reason: render_observation(&gold_outcome, &ctx.env.exec),
            })
        }
    };

    let schema = schema_dump(&db, 2)?;
    let mut conversation = Conversation::new(
        ctx.env.prompts.render_system(ctx.env.max_tool_calls),
        ctx.env.prompts.render_user(task, &schema),
    );

    let mut state = EpisodeState::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();

    for turn in 1..=ctx.env.max_tool_calls + 1 {
        let text = match policy.respond(&conversation, seed) {
            Ok(text) => text,
            Err(err) => {
                log::warn!("task {}: policy failed at turn {turn}: {err}", task.id);
                return failed_record(task, seed, steps, err.to_string(), ctx.atr);
            }
        };
        conversation.push_assistant(&text);
        let action = parse_action(&text);
        let output = step(&mut state, &action, &db, ctx.env)?;

        let csmr = output.executed.as_ref().map(|outcome| {
            let score = score_outcome(outcome, &gold, ctx.csmr);
            scores.push(score);
            score
        });
        if let Some(observation) = &output.observation {
            conversation.push_tool(observation);
        }
        steps.push(StepRecord {
            turn,
            assistant_text: text,
            action,
            outcome: output.executed.as_ref().map(OutcomeSummary::from_outcome),
            observation: output.observation,
            csmr,
        });
        if output.done {
            break;
        }
    }
    debug_assert!(state.done, "episode bound guarantees termination");

    let final_csmr = match &state.final_sql {
        Some(sql) => score_outcome(&execute(&db, sql, &ctx.env.exec), &gold, ctx.csmr),
        None => 0.0,
    };
    scores.push(final_csmr);
    let atr = atr_total(&scores, ctx.atr)?;

    Ok(TrajectoryRecord {
        task_id: task.id.clone(),
        seed,
        turn_count: steps.len(),
        steps,
        final_sql: state.final_sql,
        final_csmr,
        csmr_sequence: scores,
        atr,
        termination: state.termination,
        failed: None,
    })
}

/// Sibling rollouts of one task plus their reward group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRollout {
    pub rewards: RolloutGroup,
    pub trajectories: Vec<TrajectoryRecord>,
}

/// Run `group_size` independent rollouts of `policy` on `task`. Seeds
/// default to `0..group_size`. Per-member infrastructure failures become
/// zero-reward failed members rather than aborting the group; `jobs > 1`
/// fans members out over threads with a deterministic result order.
pub fn rollout_group(
    policy: &dyn PolicyAdapter,
    task: &TaskRecord,
    ctx: &RolloutContext<'_>,
    group_size: usize,
    seeds: Option<&[u64]>,
    jobs: usize,
) -> Result<GroupRollout, EnvError> {
    if group_size < 2 {
        return Err(EnvError::DegenerateGroup(group_size));
    }
    ctx.atr.validate()?;
    let seeds: Vec<u64> = match seeds {
        Some(s) if s.len() >= group_size => s[..group_size].to_vec(),
        Some(s) => {
            let mut extended = s.to_vec();
            extended.extend(s.len() as u64..group_size as u64);
            extended
        }
        None => (0..group_size as u64).collect(),
    };

    let run_member = |member: usize| -> TrajectoryRecord {
        match rollout(policy, task, ctx, seeds[member]) {
            Ok(record) => record,
            Err(err) => {
                log::warn!("task {}: rollout member {member} failed: {err}", task.id);
                failed_record(task, seeds[member], Vec::new(), err.to_string(), ctx.atr)
                    .expect("config validated above")
            }
        }
    };

    let trajectories: Vec<TrajectoryRecord> = if jobs <= 1 {
        (0..group_size).map(run_member).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<TrajectoryRecord>>> =
            Mutex::new((0..group_size).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(group_size) {
                scope.spawn(|| loop {
                    let member = next.fetch_add(1, Ordering::SeqCst);
                    if member >= group_size {
                        break;
                    }
                    let record = run_member(member);
                    slots.lock().expect("no poisoned workers")[member] = Some(record);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|slot| slot.expect("every member filled"))
            .collect()
    };

    let rewards = RolloutGroup::new(trajectories.iter().map(|t| t.atr.total).collect())
        .expect("group_size >= 2 and atr totals are finite");
    Ok(GroupRollout {
        rewards,
        trajectories,
    })
}

/// Append-style JSONL persistence: one record per line.
pub fn write_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<(), EnvError> {
    let mut file = fs::File::create(path).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for record in records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(file, "{line}").map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>, EnvError> {
    let file = fs::File::open(path).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|e| EnvError::BadRecord {
                line: index + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Render a tool call the scripted policies and examples use.
pub fn tool_call_text(tool: &str, sql: &str, db_id: &str) -> String {
    let call = serde_json::json!({
        "name": tool,
        "arguments": {
            "query": format!("```sql\n{sql}\n```"),
            "db_id": db_id,
        }
    });
    format!(
        "<tool_call>\n{}\n</tool_call>",
        serde_json::to_string_pretty(&call).expect("tool call serializes")
    )
}
