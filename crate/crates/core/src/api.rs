//! Local HTTP/JSON surface for the operator panel.
//!
//! Handlers never touch the controller directly: reads come from snapshots the
//! control loop publishes, writes are validated here and then queued on a
//! channel the loop drains at the top of each period.

use std::collections::HashMap;
use std::future::Future;
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chamber::PlantStage;
use crate::compensation::{CompModel, FitSummary, ForecastReport};
use crate::control::{ControlMessage, FieldError, Override, Recipe, TickRecord};
use crate::datastore::{downsample, DataReader, SeriesKey};
use crate::telemetry::{Actuator, ActuatorCommandSet, ReadingSet};

pub const DEFAULT_BIND: &str = "127.0.0.1:8642";

/// Everything the panel shows about the current control period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub t: f64,
    pub stage: PlantStage,
    pub stage_elapsed_s: f64,
    pub readings: ReadingSet,
    pub raw: ReadingSet,
    pub cmd: ActuatorCommandSet,
    pub overrides: Vec<Override>,
    pub alarms: Vec<String>,
    pub safe_state: bool,
    pub pollinating: bool,
    /// "on" when a compensation model corrected these readings, else "off".
    pub compensation: String,
    #[serde(default)]
    pub forecast: Option<ForecastReport>,
}

impl StateSnapshot {
    pub fn from_tick(rec: &TickRecord, overrides: &[Override], forecast: Option<ForecastReport>) -> Self {
        StateSnapshot {
            t: rec.t,
            stage: rec.stage,
            stage_elapsed_s: rec.stage_elapsed_s,
            readings: rec.readings.clone(),
            raw: rec.raw.clone(),
            cmd: rec.cmd,
            overrides: overrides.iter().filter(|o| o.expires_at > rec.t).copied().collect(),
            alarms: rec.alarms.iter().map(|a| a.0.clone()).collect(),
            safe_state: rec.safe_state,
            pollinating: rec.pollinating,
            compensation: if rec.compensated { "on" } else { "off" }.into(),
            forecast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiMode {
    Live,
    Replay,
}

/// Shared between the control loop (writer) and the HTTP handlers (readers).
pub struct ApiState {
    mode: ApiMode,
    snapshot: RwLock<Option<Arc<StateSnapshot>>>,
    forecast: RwLock<Option<ForecastReport>>,
    recipe: RwLock<Recipe>,
    model: Option<Arc<CompModel>>,
    reader: Option<DataReader>,
    tx: Option<Mutex<Sender<ControlMessage>>>,
}

impl ApiState {
    pub fn new(
        mode: ApiMode,
        recipe: Recipe,
        model: Option<CompModel>,
        reader: Option<DataReader>,
        tx: Option<Sender<ControlMessage>>,
    ) -> Self {
        ApiState {
            mode,
            snapshot: RwLock::new(None),
            forecast: RwLock::new(None),
            recipe: RwLock::new(recipe),
            model: model.map(Arc::new),
            reader,
            tx: tx.map(Mutex::new),
        }
    }

    /// Replaces the snapshot unless it would move time backwards.
    pub fn publish(&self, snap: StateSnapshot) {
        let mut cur = self.snapshot.write().unwrap_or_else(|p| p.into_inner());
        if cur.as_ref().is_none_or(|c| snap.t >= c.t) {
            *cur = Some(Arc::new(snap));
        }
    }

    pub fn publish_forecast(&self, f: ForecastReport) {
        *self.forecast.write().unwrap_or_else(|p| p.into_inner()) = Some(f);
    }

    pub fn publish_recipe(&self, r: &Recipe) {
        let mut cur = self.recipe.write().unwrap_or_else(|p| p.into_inner());
        if *cur != *r {
            *cur = r.clone();
        }
    }

    pub fn snapshot(&self) -> Option<Arc<StateSnapshot>> {
        self.snapshot.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn forecast(&self) -> Option<ForecastReport> {
        self.forecast.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn recipe(&self) -> Recipe {
        self.recipe.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn send(&self, msg: ControlMessage) -> Result<(), ApiError> {
        let Some(tx) = &self.tx else {
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "no controller attached"));
        };
        tx.lock()
            .unwrap_or_else(|p| p.into_inner())
            .send(msg)
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "controller stopped"))
    }
}

/// Error body: `{"error": code, "detail": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            detail: serde_json::Value::String(detail.into()),
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", detail)
    }

    fn validation(errors: Vec<FieldError>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "validation",
            detail: serde_json::to_value(errors).expect("field errors serialize"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "detail": self.detail}))).into_response()
    }
}

type Shared = State<Arc<ApiState>>;

pub fn router(state: Arc<ApiState>) -> Router {
    Router::new()
        .route("/api/info", get(info))
        .route("/api/state", get(get_state))
        .route("/api/history", get(get_history))
        .route("/api/recipe", get(get_recipe).put(put_recipe))
        .route("/api/override", axum::routing::post(post_override))
        .route("/api/forecast", get(get_forecast))
        .route("/api/model", get(get_model))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ApiState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn info(State(s): Shared) -> Json<serde_json::Value> {
    Json(json!({
        "name": "farmctl",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": s.mode,
        "endpoints": [
            "GET /api/info",
            "GET /api/state",
            "GET /api/history?channel=<name>&from=<t>&to=<t>&bucket=<s>",
            "GET /api/recipe",
            "PUT /api/recipe",
            "POST /api/override",
            "GET /api/forecast",
            "GET /api/model?full=1",
        ],
    }))
}

async fn get_state(State(s): Shared) -> Result<Json<StateSnapshot>, ApiError> {
    s.snapshot()
        .map(|snap| Json(StateSnapshot::clone(&snap)))
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "controller has not ticked yet"))
}

fn int_param(q: &HashMap<String, String>, name: &str, default: i64) -> Result<i64, ApiError> {
    match q.get(name) {
        None => Ok(default),
        Some(v) => v
            .parse::<i64>()
            .map_err(|_| ApiError::bad_request(format!("{name} must be an integer number of seconds"))),
    }
}

async fn get_history(State(s): Shared, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let key: SeriesKey = q
        .get("channel")
        .ok_or_else(|| ApiError::bad_request("missing channel"))?
        .parse()
        .map_err(ApiError::bad_request)?;
    let from = int_param(&q, "from", 0)?;
    let to = int_param(&q, "to", i64::MAX)?;
    let bucket = int_param(&q, "bucket", 1)?;
    if from > to {
        return Err(ApiError::bad_request("from must not exceed to"));
    }
    if bucket < 1 {
        return Err(ApiError::bad_request("bucket must be at least 1"));
    }
    let Some(reader) = s.reader.clone() else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "no datastore"));
    };
    let series = tokio::task::spawn_blocking(move || reader.query(key, from, to))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "datastore", e.to_string()))?;
    let series = if bucket > 1 { downsample(&series, bucket) } else { series };
    Ok(Json(series).into_response())
}

async fn get_recipe(State(s): Shared) -> Json<Recipe> {
    Json(s.recipe())
}

async fn put_recipe(State(s): Shared, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let recipe: Recipe = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("recipe body: {e}")))?;
    recipe.validate().map_err(ApiError::validation)?;
    s.send(ControlMessage::SetRecipe(recipe))?;
    Ok(Json(json!({"status": "accepted"})))
}

#[derive(Debug, Deserialize)]
struct OverrideBody {
    actuator: String,
    level: f64,
    ttl_s: f64,
}

async fn post_override(State(s): Shared, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let b: OverrideBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("override body: {e}")))?;
    let mut errors = Vec::new();
    let actuator = match b.actuator.parse::<Actuator>() {
        Ok(a) => Some(a),
        Err(_) => {
            errors.push(FieldError {
                field: "actuator".into(),
                message: format!("unknown actuator {:?}", b.actuator),
            });
            None
        }
    };
    if let Some(a) = actuator {
        if !a.accepts(b.level) {
            let message = if a.is_continuous() {
                "must be within [0, 1]"
            } else {
                "must be 0 or 1"
            };
            errors.push(FieldError {
                field: "level".into(),
                message: message.into(),
            });
        }
    }
    if !(b.ttl_s.is_finite() && b.ttl_s > 0.0) {
        errors.push(FieldError {
            field: "ttl_s".into(),
            message: "must be a finite number of seconds > 0".into(),
        });
    }
    match actuator {
        Some(actuator) if errors.is_empty() => {
            s.send(ControlMessage::Override {
                actuator,
                level: b.level,
                ttl_s: b.ttl_s,
            })?;
            Ok(Json(json!({"status": "accepted"})))
        }
        _ => Err(ApiError::validation(errors)),
    }
}

async fn get_forecast(State(s): Shared) -> Result<Json<ForecastReport>, ApiError> {
    s.forecast()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "no forecast computed yet"))
}

#[derive(Debug, Serialize)]
struct ChannelSummary {
    channel: String,
    widths: Vec<usize>,
    params: usize,
    fit: Option<FitSummary>,
}

async fn get_model(State(s): Shared, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let Some(model) = &s.model else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "no_model", "no compensation model loaded"));
    };
    let channels: Vec<ChannelSummary> = model
        .channels
        .iter()
        .map(|m| ChannelSummary {
            channel: m.channel.name().into(),
            widths: m.layers.widths(),
            params: m.layers.param_count(),
            fit: m.fit,
        })
        .collect();
    let full = q.get("full").is_some_and(|v| v == "1" || v == "true");
    let body = if full {
        json!({"channels": channels, "model": model.as_ref()})
    } else {
        json!({"channels": channels})
    };
    Ok(Json(body).into_response())
}
