//! Stateless HTTP scoring service, so training loops in any language can
//! obtain scores, trajectory rewards, and advantages over the wire.
//!
//! Endpoints:
//! - `POST /score/csmr` — score a prediction against a gold result; either
//!   side may be an inline table or SQL to execute against `db_id`.
//! - `POST /score/atr`  — aggregate a score sequence.
//! - `POST /advantage`  — group-normalize rewards.
//! - `GET  /healthz`    — liveness.
//!
//! A gold query that fails to execute is the client's problem (422: such
//! tasks should have been filtered); a prediction that fails is a scored
//! zero. Database work runs on blocking threads behind a semaphore bound.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::atr::{atr_total, AtrConfig, AtrPreset};
use crate::csmr::{csmr_score, CsmrConfig};
use crate::grpo::{group_advantages, GrpoConfig};
use crate::result_model::io::table_from_json;
use crate::result_model::ResultTable;
use crate::sql_exec::{execute, render_observation, DbHandle, ExecConfig, ExecOutcome};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("failed to bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

/// Service configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub bind: String,
    pub db_root: PathBuf,
    pub exec: ExecConfig,
    /// Maximum database executions in flight.
    pub max_concurrency: usize,
    /// Budget for one request end to end.
    pub request_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8714".to_string(),
            db_root: PathBuf::from("."),
            exec: ExecConfig::default(),
            max_concurrency: 8,
            request_timeout_ms: 60_000,
        }
    }
}

#[derive(Clone)]
pub struct ServiceState {
    db_root: Arc<PathBuf>,
    exec: ExecConfig,
    executions: Arc<Semaphore>,
    request_timeout: Duration,
}

impl ServiceState {
    pub fn new(cfg: &ServiceConfig) -> ServiceState {
        ServiceState {
            db_root: Arc::new(cfg.db_root.clone()),
            exec: cfg.exec,
            executions: Arc::new(Semaphore::new(cfg.max_concurrency.max(1))),
            request_timeout: Duration::from_millis(cfg.request_timeout_ms),
        }
    }
}

/// JSON error body with the given status.
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn unprocessable(message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

/// Build the router; exposed separately from [`serve`] so tests can drive
/// the service in-process.
pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/score/csmr", post(score_csmr))
        .route("/score/atr", post(score_atr))
        .route("/advantage", post(advantage))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Bind and serve until the process ends.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let addr: SocketAddr = cfg
        .bind
        .parse()
        .map_err(|e| ServiceError::Bind {
            addr: cfg.bind.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{e}")),
        })?;
    let state = ServiceState::new(&cfg);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: cfg.bind.clone(),
            source,
        })?;
    log::info!("scoring service listening on {}", cfg.bind);
    axum::serve(listener, router(state))
        .await
        .map_err(ServiceError::Serve)
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
struct CsmrRequest {
    gold_sql: Option<String>,
    gold_table: Option<Value>,
    pred_sql: Option<String>,
    pred_table: Option<Value>,
    db_id: Option<String>,
    alpha: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CsmrResponse {
    value: f64,
    perfect: bool,
    match_count: usize,
    n_prod: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pred_error: Option<String>,
}

enum Side {
    Table(ResultTable),
    Sql(String),
}

fn pick_side(
    name: &str,
    sql: Option<String>,
    table: Option<Value>,
    db_id: &Option<String>,
) -> Result<Side, ApiError> {
    match (sql, table) {
        (Some(_), Some(_)) => Err(ApiError::bad_request(format!(
            "give either {name}_sql or {name}_table, not both"
        ))),
        (None, None) => Err(ApiError::bad_request(format!(
            "one of {name}_sql or {name}_table is required"
        ))),
        (Some(sql), None) => {
            if db_id.is_none() {
                return Err(ApiError::bad_request(format!(
                    "{name}_sql requires db_id"
                )));
            }
            Ok(Side::Sql(sql))
        }
        (None, Some(table)) => {
            let table = table_from_json(&table)
                .map_err(|e| ApiError::bad_request(format!("{name}_table: {e}")))?;
            Ok(Side::Table(table))
        }
    }
}

async fn run_sql(
    state: &ServiceState,
    db_id: String,
    sql: String,
) -> Result<ExecOutcome, ApiError> {
    let _permit = state
        .executions
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::internal("execution pool closed"))?;
    let db_root = state.db_root.clone();
    let exec_cfg = state.exec;
    let work = tokio::task::spawn_blocking(move || {
        let db = DbHandle::open(&db_root, &db_id)
            .map_err(|e| ApiError::unprocessable(e.to_string()))?;
        Ok::<ExecOutcome, ApiError>(execute(&db, &sql, &exec_cfg))
    });
    match tokio::time::timeout(state.request_timeout, work).await {
        Err(_) => Err(ApiError::unprocessable("request timed out".to_string())),
        Ok(Err(join_err)) => Err(ApiError::internal(join_err.to_string())),
        Ok(Ok(result)) => result,
    }
}

async fn score_csmr(
    State(state): State<ServiceState>,
    Json(request): Json<CsmrRequest>,
) -> Result<Json<CsmrResponse>, ApiError> {
    let alpha = request.alpha.unwrap_or(CsmrConfig::default().alpha);
    let cfg = CsmrConfig::new(alpha).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let gold_side = pick_side("gold", request.gold_sql, request.gold_table, &request.db_id)?;
    let pred_side = pick_side("pred", request.pred_sql, request.pred_table, &request.db_id)?;

    let gold = match gold_side {
        Side::Table(t) => t,
        Side::Sql(sql) => {
            let db_id = request.db_id.clone().expect("checked in pick_side");
            let outcome = run_sql(&state, db_id, sql).await?;
            match outcome.table() {
                Some(t) => t.clone(),
                None => {
                    return Err(ApiError::unprocessable(format!(
                        "gold SQL failed: {}",
                        render_observation(&outcome, &state.exec)
                    )))
                }
            }
        }
    };

    let (pred, pred_error) = match pred_side {
        Side::Table(t) => (Some(t), None),
        Side::Sql(sql) => {
            let db_id = request.db_id.clone().expect("checked in pick_side");
            let outcome = run_sql(&state, db_id, sql).await?;
            match outcome.table() {
                Some(t) => (Some(t.clone()), None),
                None => (None, Some(render_observation(&outcome, &state.exec))),
            }
        }
    };

    let response = match pred {
        Some(pred) => {
            let score = csmr_score(&gold, &pred, &cfg);
            CsmrResponse {
                value: score.value,
                perfect: score.perfect,
                match_count: score.match_count,
                n_prod: score.n_prod,
                pred_error: None,
            }
        }
        // Prediction failed to execute: scored zero, flagged, still 200.
        None => CsmrResponse {
            value: 0.0,
            perfect: false,
            match_count: 0,
            n_prod: 0,
            pred_error,
        },
    };
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
struct AtrRequest {
    scores: Vec<f64>,
    preset: Option<String>,
    config: Option<AtrConfig>,
    #[serde(default)]
    overrides: serde_json::Map<String, Value>,
}

async fn score_atr(Json(request): Json<AtrRequest>) -> Result<Json<Value>, ApiError> {
    if request.scores.is_empty() {
        return Err(ApiError::bad_request("scores must be non-empty"));
    }
    let mut cfg = match (&request.config, &request.preset) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad_request("give either preset or config, not both"))
        }
        (Some(cfg), None) => *cfg,
        (None, Some(preset)) => preset
            .parse::<AtrPreset>()
            .map_err(|e| ApiError::bad_request(e.to_string()))?
            .config(),
        (None, None) => AtrPreset::Eq2.config(),
    };
    for (key, value) in &request.overrides {
        let as_text = match value {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        cfg.set_field(key, &as_text)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
    }
    let breakdown =
        atr_total(&request.scores, &cfg).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(serde_json::to_value(breakdown).expect("serializes")))
}

#[derive(Debug, Deserialize)]
struct AdvantageRequest {
    rewards: Vec<f64>,
    eps_std_guard: Option<f64>,
}

async fn advantage(Json(request): Json<AdvantageRequest>) -> Result<Json<Value>, ApiError> {
    let mut cfg = GrpoConfig::default();
    if let Some(guard) = request.eps_std_guard {
        cfg.std_guard = guard;
    }
    let advantages = group_advantages(&request.rewards, &cfg)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(json!({ "advantages": advantages })))
}
