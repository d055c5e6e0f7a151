//! Single entry-point binary: scoring, reward shaping, dissipativity
//! verification, GRPO math, rollouts, evaluation, and the scoring service.
//!
//! Machine-readable JSON goes to stdout, logs to stderr. Exit codes:
//! 0 success, 1 scoring/eval failure, 2 usage errors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use agsql::agent_env::{
    read_trajectories, rollout, rollout_group, write_trajectories, PolicyAdapter, RemotePolicy,
    RolloutContext, ScriptedPolicy, TrajectoryRecord,
};
use agsql::atr::verify_dissipativity;
use agsql::config::{CliConfig, PartialConfig, CONFIG_ENV};
use agsql::csmr::csmr_score;
use agsql::datasets::{load_tasks, mini_corpus};
use agsql::evalkit::{evaluate_trajectories, evaluate_with_vote, verdicts_to_csv};
use agsql::grpo::{clipped_loss, group_advantages, mask_tokens, TokenBatch, TrajectoryTokens};
use agsql::result_model::io::{load_table, TableFormat};
use agsql::result_model::ResultTable;
use agsql::sql_exec::{execute, render_observation, validate_gold, DbHandle};

#[derive(Parser)]
#[command(
    name = "agsql",
    version,
    about = "Reward toolkit and rollout harness for multi-turn text-to-SQL agents"
)]
struct Cli {
    /// TOML config file (also via AGSQL_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective merged configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,
    /// Worker threads for subcommands that parallelize.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct AtrFlags {
    /// Shaping preset: eq2 or figure.
    #[arg(long)]
    preset: Option<String>,
    /// Override one shaping field, e.g. --override c_turn=0.1 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Score a predicted result against a gold result.
    Score {
        /// Gold side: a .json/.csv table file, or SQL text (needs --db).
        #[arg(long)]
        gold: String,
        /// Predicted side: a .json/.csv table file, or SQL text.
        #[arg(long)]
        pred: String,
        /// Database id for SQL sides.
        #[arg(long)]
        db: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        db_root: Option<PathBuf>,
        /// Treat the first CSV record as a header row.
        #[arg(long, default_value_t = false)]
        header: bool,
        /// Treat CSV files as headerless (the default).
        #[arg(long, default_value_t = false, conflicts_with = "header")]
        no_header: bool,
    },
    /// Aggregate a score sequence into its trajectory reward.
    Atr {
        /// Comma-separated scores, e.g. 0,0.5,1.
        #[arg(long)]
        scores: String,
        #[command(flatten)]
        atr: AtrFlags,
    },
    /// Exhaustively check cycle negativity of a shaping config.
    Verify {
        #[command(flatten)]
        atr: AtrFlags,
        #[arg(long, default_value_t = 6)]
        max_len: usize,
        /// Comma-separated score grid.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        grid: String,
    },
    /// Group-normalize rewards into advantages.
    Advantage {
        /// Comma-separated rewards, e.g. 0.3,0.9.
        #[arg(long)]
        rewards: String,
    },
    /// Token-masked clipped surrogate loss over a batch file.
    Loss {
        /// JSON batch: {"advantages"|"rewards", "trajectories": [...]}.
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        eps_clip: Option<f64>,
    },
    /// Roll scripted or remote policies over a task file.
    Rollout {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        db_root: Option<PathBuf>,
        /// JSON script file: an array of responses, or an array of scripts.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Remote policy endpoint (also AGSQL_POLICY_URL).
        #[arg(long)]
        policy_url: Option<String>,
        /// Remote policy deadline in ms (also AGSQL_POLICY_TIMEOUT_MS).
        #[arg(long)]
        policy_timeout_ms: Option<u64>,
        /// Sibling rollouts per task; 1 rolls each task once.
        #[arg(long)]
        group_size: Option<usize>,
        /// Comma-separated seeds (defaults to 0..group_size).
        #[arg(long)]
        seeds: Option<String>,
        /// Only roll the task with this id.
        #[arg(long)]
        task: Option<String>,
        /// Drop tasks whose gold SQL fails before rolling.
        #[arg(long, default_value_t = false)]
        validate: bool,
        /// Write trajectories as JSONL.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_tool_calls: Option<usize>,
        #[command(flatten)]
        atr: AtrFlags,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Evaluate recorded trajectories against their tasks.
    Eval {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        db_root: Option<PathBuf>,
        /// JSONL trajectory file produced by `rollout`.
        #[arg(long)]
        trajectories: PathBuf,
        /// Majority-vote over up to K samples per task.
        #[arg(long)]
        vote_k: Option<usize>,
        /// Also write per-task verdicts as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the stateless HTTP scoring service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        db_root: Option<PathBuf>,
        #[arg(long)]
        max_concurrency: Option<usize>,
        #[arg(long)]
        request_timeout_ms: Option<u64>,
    },
    /// Materialize the bundled mini-corpus (databases + tasks.json).
    MiniCorpus {
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    /// Bad invocation: exit 2.
    Usage(String),
    /// Operation ran and failed: exit 1, body on stdout.
    Failure(Value),
}

impl CliError {
    fn failure(message: impl Into<String>) -> CliError {
        CliError::Failure(json!({ "error": message.into() }))
    }
}

type CliResult = Result<Value, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(value)) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::from(1)
        }
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, CliError> {
    raw.iter()
        .map(|entry| {
            entry
                .split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    CliError::Usage(format!("--override needs KEY=VALUE, got {entry}"))
                })
        })
        .collect()
}

fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad {what} value: {s}")))
        })
        .collect()
}

fn parsed_preset(raw: &Option<String>) -> Result<Option<agsql::AtrPreset>, CliError> {
    raw.as_deref()
        .map(str::parse)
        .transpose()
        .map_err(|e| CliError::Usage(format!("{e}")))
}

fn flags_for(cli: &Cli) -> Result<PartialConfig, CliError> {
    let mut flags = PartialConfig {
        jobs: cli.jobs,
        ..Default::default()
    };
    match &cli.command {
        Command::Score { db_root, alpha, .. } => {
            flags.db_root = db_root.clone();
            flags.alpha = *alpha;
        }
        Command::Atr { atr, .. } | Command::Verify { atr, .. } => {
            flags.atr_preset = parsed_preset(&atr.preset)?;
            flags.atr_overrides = parse_overrides(&atr.overrides)?;
        }
        Command::Loss { eps_clip, .. } => {
            flags.eps_clip = *eps_clip;
        }
        Command::Rollout {
            tasks,
            db_root,
            policy_url,
            policy_timeout_ms,
            group_size,
            max_tool_calls,
            atr,
            alpha,
            ..
        } => {
            flags.tasks = tasks.clone();
            flags.db_root = db_root.clone();
            flags.policy_url = policy_url.clone();
            flags.policy_timeout_ms = *policy_timeout_ms;
            flags.group_size = *group_size;
            flags.max_tool_calls = *max_tool_calls;
            flags.alpha = *alpha;
            flags.atr_preset = parsed_preset(&atr.preset)?;
            flags.atr_overrides = parse_overrides(&atr.overrides)?;
        }
        Command::Eval { tasks, db_root, .. } => {
            flags.tasks = tasks.clone();
            flags.db_root = db_root.clone();
        }
        Command::Serve {
            bind,
            db_root,
            max_concurrency,
            request_timeout_ms,
        } => {
            flags.bind = bind.clone();
            flags.db_root = db_root.clone();
            flags.max_concurrency = *max_concurrency;
            flags.request_timeout_ms = *request_timeout_ms;
        }
        Command::Advantage { .. } | Command::MiniCorpus { .. } => {}
    }
    Ok(flags)
}

fn run(cli: Cli) -> CliResult {
    let env_vars: HashMap<String, String> = std::env::vars().collect();
    let config_path = cli
        .config
        .clone()
        .or_else(|| env_vars.get(CONFIG_ENV).map(PathBuf::from));
    let file_text = match &config_path {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?),
        None => None,
    };
    let flags = flags_for(&cli)?;
    let config = CliConfig::resolve(file_text.as_deref(), &env_vars, &flags)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    if cli.show_config {
        return Ok(serde_json::to_value(&config).expect("config serializes"));
    }

    match cli.command {
        Command::Score {
            gold,
            pred,
            db,
            header,
            ..
        } => cmd_score(&config, &gold, &pred, db.as_deref(), header),
        Command::Atr { scores, .. } => cmd_atr(&config, &scores),
        Command::Verify { max_len, grid, .. } => cmd_verify(&config, max_len, &grid),
        Command::Advantage { rewards } => cmd_advantage(&config, &rewards),
        Command::Loss { batch, .. } => cmd_loss(&config, &batch),
        Command::Rollout {
            script,
            seeds,
            task,
            validate,
            out,
            ..
        } => cmd_rollout(
            &config,
            script.as_deref(),
            seeds.as_deref(),
            task.as_deref(),
            validate,
            out.as_deref(),
        ),
        Command::Eval {
            trajectories,
            vote_k,
            csv,
            ..
        } => cmd_eval(&config, &trajectories, vote_k, csv.as_deref()),
        Command::Serve { .. } => cmd_serve(&config),
        Command::MiniCorpus { out } => cmd_mini_corpus(&out),
    }
}

/// A `--gold`/`--pred` argument: an existing .json/.csv file is a table,
/// anything else is SQL text. `Err(reason)` inside `Ok` is an execution
/// failure of that side.
fn resolve_side(
    config: &CliConfig,
    raw: &str,
    db: Option<&str>,
    header: bool,
    side: &str,
) -> Result<Result<ResultTable, String>, CliError> {
    let path = Path::new(raw);
    if path.is_file() {
        let format = TableFormat::from_path(path, header)
            .map_err(|e| CliError::Usage(format!("--{side}: {e}")))?;
        let table =
            load_table(path, format).map_err(|e| CliError::failure(format!("--{side}: {e}")))?;
        return Ok(Ok(table));
    }
    let Some(db_id) = db else {
        return Err(CliError::Usage(format!(
            "--{side} looks like SQL; --db <id> and a db root are required"
        )));
    };
    let Some(db_root) = &config.db_root else {
        return Err(CliError::Usage(
            "--db-root (or AGSQL_DB_ROOT / config paths.db_root) is required".to_string(),
        ));
    };
    let handle =
        DbHandle::open(db_root, db_id).map_err(|e| CliError::failure(e.to_string()))?;
    let outcome = execute(&handle, raw, &config.exec);
    match outcome.table() {
        Some(t) => Ok(Ok(t.clone())),
        None => Ok(Err(render_observation(&outcome, &config.exec))),
    }
}

fn cmd_score(
    config: &CliConfig,
    gold: &str,
    pred: &str,
    db: Option<&str>,
    header: bool,
) -> CliResult {
    let csmr_cfg = config.csmr().map_err(|e| CliError::Usage(e.to_string()))?;
    let gold_table = resolve_side(config, gold, db, header, "gold")?
        .map_err(|reason| CliError::failure(format!("gold SQL failed: {reason}")))?;
    match resolve_side(config, pred, db, header, "pred")? {
        Ok(pred_table) => {
            let score = csmr_score(&gold_table, &pred_table, &csmr_cfg);
            Ok(serde_json::to_value(score).expect("score serializes"))
        }
        Err(reason) => Ok(json!({
            "value": 0.0,
            "perfect": false,
            "match_count": 0,
            "n_prod": 0,
            "pred_error": reason,
        })),
    }
}

fn cmd_atr(config: &CliConfig, scores: &str) -> CliResult {
    let scores = parse_f64_list(scores, "score")?;
    let cfg = config.atr().map_err(|e| CliError::Usage(e.to_string()))?;
    let breakdown =
        agsql::atr::atr_total(&scores, &cfg).map_err(|e| CliError::failure(e.to_string()))?;
    Ok(serde_json::to_value(breakdown).expect("breakdown serializes"))
}

fn cmd_verify(config: &CliConfig, max_len: usize, grid: &str) -> CliResult {
    let grid = parse_f64_list(grid, "grid")?;
    let cfg = config.atr().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = verify_dissipativity(&cfg, max_len, &grid)
        .map_err(|e| CliError::failure(e.to_string()))?;
    let value = serde_json::to_value(&report).expect("report serializes");
    if report.certified {
        Ok(value)
    } else {
        Err(CliError::Failure(value))
    }
}

fn cmd_advantage(config: &CliConfig, rewards: &str) -> CliResult {
    let rewards = parse_f64_list(rewards, "reward")?;
    let advantages =
        group_advantages(&rewards, &config.grpo()).map_err(|e| CliError::failure(e.to_string()))?;
    Ok(json!({ "advantages": advantages }))
}

#[derive(Deserialize)]
struct BatchFile {
    advantages: Option<Vec<f64>>,
    /// Raw rewards, normalized into advantages when given instead.
    rewards: Option<Vec<f64>>,
    trajectories: Vec<BatchTrajectory>,
}

#[derive(Deserialize)]
struct BatchTrajectory {
    ratios: Option<Vec<f64>>,
    log_probs_new: Option<Vec<f64>>,
    log_probs_old: Option<Vec<f64>>,
    mask: Option<Vec<u8>>,
    /// Flat transcript; without an explicit mask, the tool-response mask is
    /// derived from it (one entry per character).
    transcript: Option<String>,
}

fn cmd_loss(config: &CliConfig, batch_path: &Path) -> CliResult {
    let text = std::fs::read_to_string(batch_path)
        .map_err(|e| CliError::Usage(format!("cannot read batch file: {e}")))?;
    let batch_file: BatchFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad batch file: {e}")))?;
    let grpo_cfg = config.grpo();

    let advantages = match (batch_file.advantages, batch_file.rewards) {
        (Some(a), None) => a,
        (None, Some(r)) => {
            group_advantages(&r, &grpo_cfg).map_err(|e| CliError::failure(e.to_string()))?
        }
        _ => {
            return Err(CliError::Usage(
                "batch file needs exactly one of advantages or rewards".to_string(),
            ))
        }
    };

    let mut trajectories = Vec::with_capacity(batch_file.trajectories.len());
    for (index, t) in batch_file.trajectories.into_iter().enumerate() {
        let derived_mask = match (&t.mask, &t.transcript) {
            (None, Some(transcript)) => {
                Some(mask_tokens(transcript).map_err(|e| CliError::failure(e.to_string()))?)
            }
            _ => None,
        };
        let pick_mask = |len: usize| {
            t.mask
                .clone()
                .or_else(|| derived_mask.clone())
                .unwrap_or_else(|| vec![1; len])
        };
        let tokens = match (t.ratios, &t.log_probs_new, &t.log_probs_old) {
            (Some(ratios), None, None) => {
                let mask = pick_mask(ratios.len());
                TrajectoryTokens::from_ratios(ratios, mask)
            }
            (None, Some(new), Some(old)) => {
                let mask = pick_mask(new.len());
                TrajectoryTokens::from_log_probs(new, old, mask)
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "trajectory {index}: give ratios or log_probs_new + log_probs_old"
                )))
            }
        }
        .map_err(|e| CliError::failure(format!("trajectory {index}: {e}")))?;
        trajectories.push(tokens);
    }

    let breakdown = clipped_loss(&TokenBatch { trajectories }, &advantages, &grpo_cfg)
        .map_err(|e| CliError::failure(e.to_string()))?;
    Ok(serde_json::to_value(breakdown).expect("loss serializes"))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Single(Vec<String>),
    PerSeed(Vec<Vec<String>>),
}

fn cmd_rollout(
    config: &CliConfig,
    script: Option<&Path>,
    seeds: Option<&str>,
    task_filter: Option<&str>,
    validate: bool,
    out: Option<&Path>,
) -> CliResult {
    let Some(tasks_path) = &config.tasks else {
        return Err(CliError::Usage("--tasks is required".to_string()));
    };
    let Some(db_root) = &config.db_root else {
        return Err(CliError::Usage("--db-root is required".to_string()));
    };

    let policy: Box<dyn PolicyAdapter> = match (script, &config.policy_url) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read script file: {e}")))?;
            let parsed: ScriptFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad script file: {e}")))?;
            match parsed {
                ScriptFile::Single(turns) => Box::new(ScriptedPolicy::new(turns)),
                ScriptFile::PerSeed(scripts) => Box::new(ScriptedPolicy::per_seed(scripts)),
            }
        }
        (None, Some(url)) => Box::new(
            RemotePolicy::new(url.clone(), Duration::from_millis(config.policy_timeout_ms))
                .map_err(|e| CliError::failure(e.to_string()))?,
        ),
        (None, None) => {
            return Err(CliError::Usage(
                "a policy is required: --script or --policy-url".to_string(),
            ))
        }
    };

    let manifest =
        load_tasks(tasks_path, db_root).map_err(|e| CliError::failure(e.to_string()))?;
    let mut tasks: Vec<_> = manifest
        .tasks
        .iter()
        .filter(|t| task_filter.is_none_or(|id| t.id == id))
        .cloned()
        .collect();
    if tasks.is_empty() {
        return Err(CliError::failure("no tasks selected"));
    }
    let mut dropped = 0usize;
    if validate {
        let validation = validate_gold(&tasks, db_root, &config.exec);
        dropped = validation.dropped.len();
        tasks = validation.kept;
    }

    let env_cfg = config.agent_env();
    let csmr_cfg = config.csmr().map_err(|e| CliError::Usage(e.to_string()))?;
    let atr_cfg = config.atr().map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = RolloutContext {
        db_root,
        env: &env_cfg,
        csmr: &csmr_cfg,
        atr: &atr_cfg,
    };
    let seed_list: Option<Vec<u64>> = match seeds {
        Some(raw) => Some(
            raw.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| CliError::Usage(format!("bad seed: {s}")))
                })
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };

    let mut records: Vec<TrajectoryRecord> = Vec::new();
    for task in &tasks {
        if config.group_size > 1 {
            let group = rollout_group(
                policy.as_ref(),
                task,
                &ctx,
                config.group_size,
                seed_list.as_deref(),
                config.jobs,
            )
            .map_err(|e| CliError::failure(e.to_string()))?;
            records.extend(group.trajectories);
        } else {
            let seed = seed_list
                .as_ref()
                .and_then(|s| s.first().copied())
                .unwrap_or(0);
            let record = rollout(policy.as_ref(), task, &ctx, seed)
                .map_err(|e| CliError::failure(e.to_string()))?;
            records.push(record);
        }
    }

    if let Some(path) = out {
        write_trajectories(path, &records).map_err(|e| CliError::failure(e.to_string()))?;
    }
    let mean_reward =
        records.iter().map(|r| r.atr.total).sum::<f64>() / records.len().max(1) as f64;
    Ok(json!({
        "tasks": tasks.len(),
        "dropped": dropped,
        "rollouts": records.len(),
        "mean_atr": mean_reward,
        "out": out.map(|p| p.display().to_string()),
    }))
}

fn cmd_eval(
    config: &CliConfig,
    trajectories_path: &Path,
    vote_k: Option<usize>,
    csv: Option<&Path>,
) -> CliResult {
    let Some(tasks_path) = &config.tasks else {
        return Err(CliError::Usage("--tasks is required".to_string()));
    };
    let Some(db_root) = &config.db_root else {
        return Err(CliError::Usage("--db-root is required".to_string()));
    };
    let manifest =
        load_tasks(tasks_path, db_root).map_err(|e| CliError::failure(e.to_string()))?;
    let records =
        read_trajectories(trajectories_path).map_err(|e| CliError::failure(e.to_string()))?;
    let report = match vote_k {
        Some(k) => evaluate_with_vote(&manifest, &records, k, &config.exec),
        None => evaluate_trajectories(&manifest, &records, &config.exec),
    }
    .map_err(|e| CliError::failure(e.to_string()))?;
    if let Some(path) = csv {
        std::fs::write(path, verdicts_to_csv(&report))
            .map_err(|e| CliError::failure(format!("cannot write csv: {e}")))?;
    }
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn cmd_serve(config: &CliConfig) -> CliResult {
    let service_cfg = config.service();
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::failure(format!("runtime: {e}")))?;
    runtime
        .block_on(agsql::service::serve(service_cfg))
        .map_err(|e| CliError::failure(e.to_string()))?;
    Ok(json!({ "status": "stopped" }))
}

fn cmd_mini_corpus(out: &Path) -> CliResult {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::failure(format!("cannot create {}: {e}", out.display())))?;
    let manifest =
        mini_corpus::write_mini_corpus(out).map_err(|e| CliError::failure(e.to_string()))?;
    Ok(json!({
        "dir": out.display().to_string(),
        "tasks_file": out.join("tasks.json").display().to_string(),
        "db_root": manifest.db_root.display().to_string(),
        "tasks": manifest.tasks.len(),
    }))
}
