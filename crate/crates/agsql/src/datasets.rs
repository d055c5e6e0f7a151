//! Task-file ingestion for BIRD/Spider-style benchmarks, plus the bundled
//! mini-corpus the tests and examples run against.
//!
//! A task file is a JSON array of objects with `question`, `db_id`, and a
//! gold query under `SQL` (BIRD), `query` (Spider), or `gold_sql`. Unknown
//! keys are preserved verbatim so round-tripping a file is lossless.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

pub mod mini_corpus;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("task file is not a JSON array: {0}")]
    NotAnArray(String),
    #[error("record {index}: missing required key {key}")]
    MissingKey { index: usize, key: &'static str },
    #[error("record {index}: {key} must be a non-empty string")]
    BadValue { index: usize, key: &'static str },
    #[error("record {index}: duplicate (question, db_id) pair")]
    DuplicateTask { index: usize },
}

/// One dataset item.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub id: String,
    pub question: String,
    pub db_id: String,
    pub gold_sql: String,
    pub evidence: Option<String>,
    /// Keys we do not interpret, preserved for round-tripping.
    pub extra: Map<String, Value>,
}

const GOLD_KEYS: [&str; 3] = ["SQL", "query", "gold_sql"];
const ID_KEYS: [&str; 2] = ["question_id", "id"];

impl TaskRecord {
    /// Parse one record; `index` is used for error reporting and as the
    /// fallback id.
    pub fn from_json(index: usize, value: &Value) -> Result<TaskRecord, DatasetError> {
        let obj = value.as_object().ok_or(DatasetError::BadValue {
            index,
            key: "record",
        })?;
        let take_string = |key: &'static str| -> Result<String, DatasetError> {
            match obj.get(key) {
                None => Err(DatasetError::MissingKey { index, key }),
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(_) => Err(DatasetError::BadValue { index, key }),
            }
        };
        let question = take_string("question")?;
        let db_id = take_string("db_id")?;
        let gold_sql = GOLD_KEYS
            .iter()
            .find_map(|k| obj.get(*k).and_then(Value::as_str))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or(DatasetError::MissingKey { index, key: "SQL" })?;
        let evidence = obj
            .get("evidence")
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let id = ID_KEYS
            .iter()
            .find_map(|k| obj.get(*k))
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| format!("task-{index:03}"));
        let mut extra = Map::new();
        for (k, v) in obj {
            let known = k == "question" || k == "db_id" || k == "evidence";
            let is_gold = GOLD_KEYS.contains(&k.as_str());
            let is_id = ID_KEYS.contains(&k.as_str());
            if !known && !is_gold && !is_id {
                extra.insert(k.clone(), v.clone());
            }
        }
        Ok(TaskRecord {
            id,
            question,
            db_id,
            gold_sql,
            evidence,
            extra,
        })
    }

    /// Serialize in BIRD shape (`question_id`, `question`, `db_id`, `SQL`,
    /// `evidence`, plus preserved extras).
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("question_id".to_string(), Value::String(self.id.clone()));
        obj.insert("question".to_string(), Value::String(self.question.clone()));
        obj.insert("db_id".to_string(), Value::String(self.db_id.clone()));
        obj.insert("SQL".to_string(), Value::String(self.gold_sql.clone()));
        if let Some(e) = &self.evidence {
            obj.insert("evidence".to_string(), Value::String(e.clone()));
        }
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        Value::Object(obj)
    }
}

impl Serialize for TaskRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TaskRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        TaskRecord::from_json(0, &value).map_err(D::Error::custom)
    }
}

/// A loaded task file plus the database directory it runs against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub db_root: PathBuf,
    pub tasks: Vec<TaskRecord>,
}

impl DatasetManifest {
    pub fn task_by_id(&self, id: &str) -> Option<&TaskRecord> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

/// Load a JSON task file. Field names are normalized; duplicate
/// (question, db_id) pairs are rejected; db_id resolvability is *not*
/// checked here (gold validation surfaces that).
pub fn load_tasks(file: &Path, db_root: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(file).map_err(|source| DatasetError::Read {
        path: file.display().to_string(),
        source,
    })?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| DatasetError::NotAnArray(e.to_string()))?;
    let records = value
        .as_array()
        .ok_or_else(|| DatasetError::NotAnArray("top level is not an array".to_string()))?;

    let mut tasks = Vec::with_capacity(records.len());
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (index, record) in records.iter().enumerate() {
        let task = TaskRecord::from_json(index, record)?;
        if !seen.insert((task.question.clone(), task.db_id.clone())) {
            return Err(DatasetError::DuplicateTask { index });
        }
        tasks.push(task);
    }
    let name = file
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    Ok(DatasetManifest {
        name,
        db_root: db_root.to_path_buf(),
        tasks,
    })
}

/// Write tasks back out as a JSON array (BIRD key shape).
pub fn save_tasks(tasks: &[TaskRecord], file: &Path) -> Result<(), DatasetError> {
    let value = Value::Array(tasks.iter().map(TaskRecord::to_json).collect());
    let text = serde_json::to_string_pretty(&value).expect("tasks serialize");
    fs::write(file, text).map_err(|source| DatasetError::Write {
        path: file.display().to_string(),
        source,
    })
}
