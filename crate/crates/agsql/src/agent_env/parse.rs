//! Turning a raw model response into a structured action.
//!
//! The first `<tool_call>…</tool_call>` block wins and must hold a JSON
//! object `{"name": ..., "arguments": {...}}`. Without a tool call, the last
//! ```sql fence is taken as the final answer. Anything else is a malformed
//! action; parse failures are data, never errors.

use serde::{Deserialize, Serialize};
use serde_json::Value;

const TOOL_CALL_OPEN: &str = "<tool_call>";
const TOOL_CALL_CLOSE: &str = "</tool_call>";
const SQL_FENCE: &str = "```sql";
const FENCE: &str = "```";

/// Why a response failed to parse into an executable action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum MalformedKind {
    /// Tool-call tag opened but never closed.
    UnterminatedToolCall,
    /// Tool-call body is not valid JSON.
    InvalidJson,
    /// Tool name outside the supported set.
    UnknownTool(String),
    /// Arguments object lacks a required field.
    MissingArgument(String),
    /// The SQL argument is empty once fences are stripped.
    EmptySql,
    /// Neither a tool call nor a ```sql block anywhere in the response.
    NoAction,
}

impl std::fmt::Display for MalformedKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MalformedKind::UnterminatedToolCall => write!(f, "unterminated tool call"),
            MalformedKind::InvalidJson => write!(f, "invalid tool call JSON"),
            MalformedKind::UnknownTool(name) => write!(f, "unknown tool: {name}"),
            MalformedKind::MissingArgument(name) => write!(f, "missing argument: {name}"),
            MalformedKind::EmptySql => write!(f, "empty SQL query"),
            MalformedKind::NoAction => write!(f, "no tool call or sql block found"),
        }
    }
}

/// Structured action parsed from one assistant response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum Action {
    ExecuteSql {
        query: String,
        /// Database id named in the tool call; the environment resolves the
        /// task's database either way.
        db_id: Option<String>,
    },
    Finish {
        sql: String,
    },
    Malformed {
        reason: MalformedKind,
    },
}

impl Action {
    fn malformed(reason: MalformedKind) -> Action {
        Action::Malformed { reason }
    }
}

/// Strip a surrounding markdown code fence (```sql … ``` or ``` … ```) and
/// trim whitespace. Text without fences is just trimmed.
pub fn strip_sql_fences(raw: &str) -> String {
    let trimmed = raw.trim();
    let Some(after_open) = trimmed.strip_prefix(FENCE) else {
        return trimmed.to_string();
    };
    // Drop the info string (e.g. `sql`) up to the first newline.
    let body = match after_open.split_once('\n') {
        Some((_, rest)) => rest,
        None => after_open.trim_start_matches("sql"),
    };
    let body = body.strip_suffix(FENCE).unwrap_or(body);
    body.trim().to_string()
}

/// Extract the contents of the last ```sql fence in free text.
fn last_sql_block(text: &str) -> Option<String> {
    let mut result = None;
    let mut cursor = 0;
    while let Some(open) = text[cursor..].find(SQL_FENCE) {
        let body_start = cursor + open + SQL_FENCE.len();
        let Some(close) = text[body_start..].find(FENCE) else {
            break;
        };
        result = Some(text[body_start..body_start + close].trim().to_string());
        cursor = body_start + close + FENCE.len();
    }
    result
}

fn string_argument(args: &Value, key: &str) -> Option<String> {
    args.get(key).and_then(Value::as_str).map(str::to_string)
}

/// Parse one assistant response into an [`Action`].
pub fn parse_action(response: &str) -> Action {
    if let Some(open) = response.find(TOOL_CALL_OPEN) {
        let body_start = open + TOOL_CALL_OPEN.len();
        let Some(close) = response[body_start..].find(TOOL_CALL_CLOSE) else {
            return Action::malformed(MalformedKind::UnterminatedToolCall);
        };
        let body = response[body_start..body_start + close].trim();
        let Ok(call) = serde_json::from_str::<Value>(body) else {
            return Action::malformed(MalformedKind::InvalidJson);
        };
        let Some(name) = call.get("name").and_then(Value::as_str) else {
            return Action::malformed(MalformedKind::MissingArgument("name".to_string()));
        };
        let arguments = call.get("arguments").cloned().unwrap_or(Value::Null);
        return match name {
            "run_sql_remote" | "execute_sql" => {
                let Some(raw_query) = string_argument(&arguments, "query") else {
                    return Action::malformed(MalformedKind::MissingArgument(
                        "query".to_string(),
                    ));
                };
                let query = strip_sql_fences(&raw_query);
                if query.is_empty() {
                    return Action::malformed(MalformedKind::EmptySql);
                }
                Action::ExecuteSql {
                    query,
                    db_id: string_argument(&arguments, "db_id"),
                }
            }
            "finish" => {
                let Some(raw) = string_argument(&arguments, "answer") else {
                    return Action::malformed(MalformedKind::MissingArgument(
                        "answer".to_string(),
                    ));
                };
                let sql = strip_sql_fences(&raw);
                if sql.is_empty() {
                    return Action::malformed(MalformedKind::EmptySql);
                }
                Action::Finish { sql }
            }
            other => Action::malformed(MalformedKind::UnknownTool(other.to_string())),
        };
    }

    match last_sql_block(response) {
        Some(sql) if !sql.is_empty() => Action::Finish { sql },
        Some(_) => Action::malformed(MalformedKind::EmptySql),
        None => Action::malformed(MalformedKind::NoAction),
    }
}
