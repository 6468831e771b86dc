//! Scenario runner plumbing and the HTTP guidance service.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use selfevo_core::warehouse::{Catalogue, WarehouseService};
use selfevo_core::{GuidanceHub, Runner, Scenario};

/// Scenario plus command-line overrides.
pub fn load_scenario(path: &Path, seed: Option<u64>, approval_gate: bool) -> Result<Scenario> {
    let mut s =
        Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(seed) = seed {
        s.sim.seed = seed;
    }
    if approval_gate {
        s.engine.approval_gate = true;
    }
    Ok(s)
}

#[derive(Debug, Clone, Default)]
pub struct OutputPaths {
    pub log: Option<PathBuf>,
    pub telemetry: Option<PathBuf>,
    pub odd: Option<PathBuf>,
}

pub fn write_artifacts(runner: &Runner, out: &OutputPaths) -> Result<()> {
    let a = runner.artifacts();
    if let Some(p) = &out.log {
        std::fs::write(p, a.event_log).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &out.telemetry {
        std::fs::write(p, a.telemetry_csv).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &out.odd {
        std::fs::write(p, a.final_odd.to_json())
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// Reads a catalogue file, or the built-in one for `canonical`.
pub fn load_catalogue(spec: &str) -> Result<Catalogue> {
    if spec == "canonical" {
        return Ok(Catalogue::canonical());
    }
    let text =
        std::fs::read_to_string(spec).with_context(|| format!("reading catalogue {spec}"))?;
    Ok(Catalogue::from_json(&text)?)
}

/// Steps the runner on its own thread, honouring pause/resume. Returns the
/// runner once the scenario is over.
pub fn spawn_ticker(mut runner: Runner, interval: Duration) -> JoinHandle<Runner> {
    std::thread::spawn(move || {
        let hub = runner.hub();
        loop {
            if hub.is_paused() {
                std::thread::sleep(Duration::from_millis(10));
                continue;
            }
            if !runner.step() {
                break;
            }
            if !interval.is_zero() {
                std::thread::sleep(interval);
            }
        }
        runner
    })
}

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<GuidanceHub>,
    pub warehouse: Arc<WarehouseService>,
}

impl AppState {
    pub fn of(runner: &Runner) -> Self {
        Self {
            hub: runner.hub(),
            warehouse: runner.warehouse(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/state", get(state_handler))
        .route("/odd", get(odd_handler))
        .route("/events", get(events_handler))
        .route("/commands", post(commands_handler))
        .route("/control/pause", post(pause_handler))
        .route("/control/resume", post(resume_handler))
        .route("/warehouse", post(warehouse_handler))
        .with_state(state)
}

async fn state_handler(State(s): State<AppState>) -> Json<Value> {
    let mut v = serde_json::to_value(s.hub.state()).expect("snapshot serializes");
    v["paused"] = Value::Bool(s.hub.is_paused());
    Json(v)
}

async fn odd_handler(State(s): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(s.hub.odd().to_document()).expect("document serializes"))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
    limit: Option<usize>,
}

async fn events_handler(State(s): State<AppState>, Query(q): Query<EventsQuery>) -> Json<Value> {
    let mut events = s.hub.events_from(q.from);
    if let Some(limit) = q.limit {
        events.truncate(limit);
    }
    let next = events
        .last()
        .map_or(q.from.min(s.hub.event_count()), |r| r.seq + 1);
    Json(json!({ "events": events, "next": next }))
}

async fn commands_handler(State(s): State<AppState>, body: String) -> Response {
    match s.hub.submit_json(&body) {
        Ok(id) => (StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, Json(json!({ "error": e.message }))).into_response(),
    }
}

async fn pause_handler(State(s): State<AppState>) -> Json<Value> {
    s.hub.pause();
    Json(json!({ "paused": true }))
}

async fn resume_handler(State(s): State<AppState>) -> Json<Value> {
    s.hub.resume();
    Json(json!({ "paused": false }))
}

async fn warehouse_handler(State(s): State<AppState>, body: String) -> Response {
    let text = s.warehouse.handle_text(&body);
    (
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        text,
    )
        .into_response()
}
