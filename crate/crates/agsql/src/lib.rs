//! agsql: reward engineering toolkit and rollout harness for multi-turn
//! text-to-SQL agents.
//!
//! The crate turns "did the agent's SQL work" into trainable signal:
//!
//! 1. **Result canonicalization** ([`result_model`]): execution results
//!    compared as sets of canonical row tuples, immune to row order,
//!    duplicates, and float formatting.
//! 2. **Dense step scores** ([`csmr`]): partial credit in `[0, 1]` from
//!    column value-set overlap, with pseudo-perfect results capped below a
//!    true match.
//! 3. **Trajectory aggregation** ([`atr`]): per-step scores collapse into
//!    one terminal reward through an asymmetric transition matrix whose
//!    cycle-negativity is machine-checked, so oscillating behavior can
//!    never break even.
//! 4. **Group-relative plumbing** ([`grpo`]): z-scored sibling rewards and
//!    the token-masked clipped surrogate loss.
//! 5. **A sandboxed environment** ([`sql_exec`], [`agent_env`],
//!    [`datasets`]): read-only SQLite execution, tool-call parsing, bounded
//!    multi-turn rollouts, JSONL trajectory logs, and a bundled
//!    mini-corpus.
//! 6. **Evaluation and serving** ([`evalkit`], [`service`]): execution
//!    accuracy, majority voting, and a stateless HTTP scoring service.
//!
//! Start with the runnable examples (`cargo run --example mini_benchmark`)
//! or the `agsql` binary (`agsql score`, `agsql rollout`, `agsql serve`).

pub mod agent_env;
pub mod atr;
pub mod config;
pub mod csmr;
pub mod datasets;
pub mod evalkit;
pub mod grpo;
pub mod result_model;
pub mod service;
pub mod sql_exec;

pub use atr::{atr_total, AtrBreakdown, AtrConfig, AtrPreset};
pub use csmr::{csmr_score, CsmrConfig, CsmrScore};
pub use grpo::{clipped_loss, group_advantages, mask_tokens, GrpoConfig};
pub use result_model::{is_perfect_match, CellValue, ResultTable};
