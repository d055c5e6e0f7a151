//! Sandboxed execution of SQL against local SQLite files.
//!
//! Connections are opened read-only and queries are additionally gated by
//! statement class, so rollouts can never corrupt a shared benchmark
//! database. Results come back as canonical [`ResultTable`]s; failures are
//! data ([`ExecOutcome`]), not panics, because an agent's bad SQL is a
//! normal observation.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::datasets::TaskRecord;
use crate::result_model::{CellValue, ResultTable};

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("database {db_id} not found under {root}")]
    DbNotFound { db_id: String, root: String },
    #[error("failed to open {path}: {source}")]
    Open {
        path: String,
        source: rusqlite::Error,
    },
    #[error("schema introspection failed: {0}")]
    Introspection(rusqlite::Error),
}

/// Read-only handle to one SQLite database file.
///
/// A handle owns its connection and is meant to live on a single worker;
/// concurrent executions each open their own handle.
pub struct DbHandle {
    db_id: String,
    path: PathBuf,
    conn: Connection,
}

impl std::fmt::Debug for DbHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DbHandle")
            .field("db_id", &self.db_id)
            .field("path", &self.path)
            .finish()
    }
}

/// Locate a database file for a BIRD/Spider-style id under `db_root`.
/// Tried in order: `<root>/<id>` (a file), `<root>/<id>/<id>.sqlite`,
/// `<root>/<id>.sqlite`.
pub fn resolve_db_path(db_root: &Path, db_id: &str) -> Option<PathBuf> {
    let direct = db_root.join(db_id);
    if direct.is_file() {
        return Some(direct);
    }
    let nested = db_root.join(db_id).join(format!("{db_id}.sqlite"));
    if nested.is_file() {
        return Some(nested);
    }
    let flat = db_root.join(format!("{db_id}.sqlite"));
    if flat.is_file() {
        return Some(flat);
    }
    None
}

impl DbHandle {
    /// Resolve `db_id` under `db_root` and open it read-only.
    pub fn open(db_root: &Path, db_id: &str) -> Result<DbHandle, ExecError> {
        let path = resolve_db_path(db_root, db_id).ok_or_else(|| ExecError::DbNotFound {
            db_id: db_id.to_string(),
            root: db_root.display().to_string(),
        })?;
        DbHandle::open_path(db_id, &path)
    }

    /// Open a known file read-only.
    pub fn open_path(db_id: &str, path: &Path) -> Result<DbHandle, ExecError> {
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|source| ExecError::Open {
            path: path.display().to_string(),
            source,
        })?;
        // Belt and braces on top of the read-only open.
        let _ = conn.pragma_update(None, "query_only", true);
        Ok(DbHandle {
            db_id: db_id.to_string(),
            path: path.to_path_buf(),
            conn,
        })
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Execution limits and observation rendering limits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExecConfig {
    /// Wall-clock budget for one query.
    pub timeout_ms: u64,
    /// Rows fetched at most; longer results are truncated.
    pub max_rows_returned: usize,
    /// Rows shown in a rendered observation.
    pub obs_max_rows: usize,
    /// Characters allowed in a rendered observation.
    pub obs_max_chars: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            timeout_ms: 30_000,
            max_rows_returned: 10_000,
            obs_max_rows: 50,
            obs_max_chars: 2_000,
        }
    }
}

/// What one execution produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecOutcome {
    Ok(ResultTable),
    SqlError(String),
    Timeout,
    ResourceLimit,
}

impl ExecOutcome {
    pub fn table(&self) -> Option<&ResultTable> {
        match self {
            ExecOutcome::Ok(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ExecOutcome::Ok(_))
    }
}

/// Statement classes allowed through the sandbox.
const ALLOWED_KEYWORDS: [&str; 4] = ["select", "with", "values", "explain"];

/// First keyword of a statement, skipping whitespace and `--`/`/* */`
/// comments.
fn leading_keyword(sql: &str) -> Option<String> {
    let mut rest = sql;
    loop {
        rest = rest.trim_start();
        if let Some(after) = rest.strip_prefix("--") {
            rest = after.split_once('\n').map_or("", |(_, tail)| tail);
        } else if let Some(after) = rest.strip_prefix("/*") {
            rest = after.split_once("*/").map_or("", |(_, tail)| tail);
        } else {
            break;
        }
    }
    let word: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    (!word.is_empty()).then(|| word.to_ascii_lowercase())
}

fn classify_failure(err: rusqlite::Error) -> ExecOutcome {
    use rusqlite::ffi::ErrorCode;
    match err {
        rusqlite::Error::SqliteFailure(code, ref message) => match code.code {
            ErrorCode::OperationInterrupted => ExecOutcome::Timeout,
            ErrorCode::OutOfMemory | ErrorCode::DiskFull | ErrorCode::TooBig => {
                ExecOutcome::ResourceLimit
            }
            _ => match message {
                Some(m) => ExecOutcome::SqlError(m.clone()),
                None => ExecOutcome::SqlError(err.to_string()),
            },
        },
        // Prepare-time errors carry the statement and offset; keep just the
        // engine message so observations match what agents expect to see.
        rusqlite::Error::SqlInputError { msg, .. } => ExecOutcome::SqlError(msg),
        other => ExecOutcome::SqlError(other.to_string()),
    }
}

fn cell_from_value_ref(value: ValueRef<'_>) -> CellValue {
    match value {
        ValueRef::Null => CellValue::Null,
        ValueRef::Integer(i) => CellValue::Integer(i),
        ValueRef::Real(f) => CellValue::from_f64(f),
        ValueRef::Text(bytes) => CellValue::Text(String::from_utf8_lossy(bytes).into_owned()),
        ValueRef::Blob(bytes) => CellValue::blob(bytes),
    }
}

/// Run one read-only query and canonicalize its result.
///
/// Failures never escape the outcome envelope: engine errors become
/// `SqlError` with the engine's message, wall-clock over-runs become
/// `Timeout`, memory-class failures become `ResourceLimit`. Results longer
/// than `max_rows_returned` are truncated.
pub fn execute(db: &DbHandle, sql: &str, cfg: &ExecConfig) -> ExecOutcome {
    if sql.trim().is_empty() {
        return ExecOutcome::SqlError("empty query".to_string());
    }
    match leading_keyword(sql) {
        Some(kw) if ALLOWED_KEYWORDS.contains(&kw.as_str()) => {}
        Some(kw) => {
            return ExecOutcome::SqlError(format!(
                "statement type '{kw}' is not allowed; the sandbox only runs \
                 SELECT, WITH, VALUES, or EXPLAIN"
            ))
        }
        None => return ExecOutcome::SqlError("empty query".to_string()),
    }

    let deadline = Instant::now() + Duration::from_millis(cfg.timeout_ms);
    db.conn
        .progress_handler(4_096, Some(move || Instant::now() > deadline));
    let outcome = run_query(&db.conn, sql, cfg);
    db.conn.progress_handler(0, None::<fn() -> bool>);
    outcome
}

fn run_query(conn: &Connection, sql: &str, cfg: &ExecConfig) -> ExecOutcome {
    let mut stmt = match conn.prepare(sql) {
        Ok(stmt) => stmt,
        Err(err) => return classify_failure(err),
    };
    let columns = stmt.column_count();
    let mut rows = match stmt.query([]) {
        Ok(rows) => rows,
        Err(err) => return classify_failure(err),
    };
    let mut collected: Vec<Vec<CellValue>> = Vec::new();
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                if collected.len() >= cfg.max_rows_returned {
                    break;
                }
                let mut cells = Vec::with_capacity(columns);
                for i in 0..columns {
                    match row.get_ref(i) {
                        Ok(value) => cells.push(cell_from_value_ref(value)),
                        Err(err) => return classify_failure(err),
                    }
                }
                collected.push(cells);
            }
            Ok(None) => break,
            Err(err) => return classify_failure(err),
        }
    }
    match ResultTable::with_columns(columns, collected) {
        Ok(table) => ExecOutcome::Ok(table),
        Err(e) => ExecOutcome::SqlError(e.to_string()),
    }
}

/// Render an outcome as the text an agent sees. The caller wraps it in
/// `<tool_response>…</tool_response>`.
///
/// Successful results print as a list of row lists, truncated to
/// `obs_max_rows` rows and `obs_max_chars` characters with an explicit
/// marker. Errors render as `error:` + the engine message.
pub fn render_observation(outcome: &ExecOutcome, cfg: &ExecConfig) -> String {
    match outcome {
        ExecOutcome::SqlError(message) => format!("error:{message}"),
        ExecOutcome::Timeout => "error: execution timed out".to_string(),
        ExecOutcome::ResourceLimit => "error: resource limit exceeded".to_string(),
        ExecOutcome::Ok(table) => {
            let total = table.row_count();
            let shown = total.min(cfg.obs_max_rows);
            let mut text = String::from("[");
            for (i, row) in table.rows().iter().take(shown).enumerate() {
                if i > 0 {
                    text.push_str(", ");
                }
                text.push('[');
                for (j, cell) in row.iter().enumerate() {
                    if j > 0 {
                        text.push_str(", ");
                    }
                    text.push_str(&cell.to_string());
                }
                text.push(']');
            }
            text.push(']');
            if shown < total {
                text.push_str(&format!("\n... ({} of {total} rows shown)", shown));
            }
            if text.chars().count() > cfg.obs_max_chars {
                let cut: String = text.chars().take(cfg.obs_max_chars).collect();
                format!("{cut}... (truncated)")
            } else {
                text
            }
        }
    }
}

/// A task dropped by gold validation, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedTask {
    pub task: TaskRecord,
    pub reason: String,
}

/// Result of filtering a task list down to those whose gold SQL executes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldValidation {
    pub kept: Vec<TaskRecord>,
    pub dropped: Vec<DroppedTask>,
}

/// Keep only tasks whose gold SQL runs successfully on its database;
/// everything else is dropped with the failure reason (including tasks
/// whose database file is missing).
pub fn validate_gold(tasks: &[TaskRecord], db_root: &Path, cfg: &ExecConfig) -> GoldValidation {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for task in tasks {
        let db = match DbHandle::open(db_root, &task.db_id) {
            Ok(db) => db,
            Err(e) => {
                dropped.push(DroppedTask {
                    task: task.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match execute(&db, &task.gold_sql, cfg) {
            ExecOutcome::Ok(_) => kept.push(task.clone()),
            other => dropped.push(DroppedTask {
                task: task.clone(),
                reason: render_observation(&other, cfg),
            }),
        }
    }
    GoldValidation { kept, dropped }
}

/// Best-effort schema dump for prompt construction: a CREATE TABLE block per
/// table with up to `examples_per_column` example values per column.
pub fn schema_dump(db: &DbHandle, examples_per_column: usize) -> Result<String, ExecError> {
    let mut names: Vec<String> = Vec::new();
    {
        let mut stmt = db
            .conn
            .prepare(
                "SELECT name FROM sqlite_master \
                 WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
            )
            .map_err(ExecError::Introspection)?;
        let mut rows = stmt.query([]).map_err(ExecError::Introspection)?;
        while let Some(row) = rows.next().map_err(ExecError::Introspection)? {
            names.push(row.get(0).map_err(ExecError::Introspection)?);
        }
    }

    let mut out = String::new();
    for name in names {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("CREATE TABLE {} (\n", quote_ident(&name)));
        let mut pk_cols: Vec<String> = Vec::new();
        let columns = table_columns(&db.conn, &name)?;
        for (col, decl_type, is_pk) in &columns {
            if *is_pk {
                pk_cols.push(col.clone());
            }
            let examples = column_examples(&db.conn, &name, col, examples_per_column)?;
            let type_str = if decl_type.is_empty() {
                String::new()
            } else {
                format!(" {}", decl_type.to_lowercase())
            };
            let example_str = if examples.is_empty() {
                String::new()
            } else {
                format!(" -- example: [{}]", examples.join(", "))
            };
            out.push_str(&format!(
                "    {}{},{}\n",
                quote_ident(col),
                type_str,
                example_str
            ));
        }
        if !pk_cols.is_empty() {
            let quoted: Vec<String> = pk_cols.iter().map(|c| quote_ident(c)).collect();
            out.push_str(&format!("    PRIMARY KEY ({}),\n", quoted.join(", ")));
        }
        for fk in foreign_keys(&db.conn, &name)? {
            out.push_str(&format!("    {fk},\n"));
        }
        if out.ends_with(",\n") {
            out.truncate(out.len() - 2);
            out.push('\n');
        }
        out.push_str(");\n");
    }
    Ok(out)
}

fn quote_ident(name: &str) -> String {
    let plain = name
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain && !name.is_empty() {
        name.to_string()
    } else {
        format!("`{name}`")
    }
}

fn table_columns(
    conn: &Connection,
    table: &str,
) -> Result<Vec<(String, String, bool)>, ExecError> {
    let mut stmt = conn
        .prepare(&format!("PRAGMA table_info({})", quote_ident(table)))
        .map_err(ExecError::Introspection)?;
    let mut rows = stmt.query([]).map_err(ExecError::Introspection)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(ExecError::Introspection)? {
        let name: String = row.get(1).map_err(ExecError::Introspection)?;
        let decl_type: String = row.get(2).map_err(ExecError::Introspection)?;
        let pk: i64 = row.get(5).map_err(ExecError::Introspection)?;
        out.push((name, decl_type, pk > 0));
    }
    Ok(out)
}

fn column_examples(
    conn: &Connection,
    table: &str,
    column: &str,
    limit: usize,
) -> Result<Vec<String>, ExecError> {
    if limit == 0 {
        return Ok(Vec::new());
    }
    let sql = format!(
        "SELECT DISTINCT {col} FROM {table} WHERE {col} IS NOT NULL LIMIT {limit}",
        col = quote_ident(column),
        table = quote_ident(table),
    );
    let mut stmt = conn.prepare(&sql).map_err(ExecError::Introspection)?;
    let mut rows = stmt.query([]).map_err(ExecError::Introspection)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(ExecError::Introspection)? {
        let cell = cell_from_value_ref(row.get_ref(0).map_err(ExecError::Introspection)?);
        out.push(cell.to_string());
    }
    Ok(out)
}

fn foreign_keys(conn: &Connection, table: &str) -> Result<Vec<String>, ExecError> {
    let mut stmt = conn
        .prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(table)))
        .map_err(ExecError::Introspection)?;
    let mut rows = stmt.query([]).map_err(ExecError::Introspection)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().map_err(ExecError::Introspection)? {
        let target: String = row.get(2).map_err(ExecError::Introspection)?;
        let from: String = row.get(3).map_err(ExecError::Introspection)?;
        let to: Option<String> = row.get(4).map_err(ExecError::Introspection)?;
        let to = to.unwrap_or_else(|| from.clone());
        out.push(format!(
            "FOREIGN KEY ({}) REFERENCES {} ({})",
            quote_ident(&from),
            quote_ident(&target),
            quote_ident(&to)
        ));
    }
    Ok(out)
}
