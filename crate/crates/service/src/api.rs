//! REST endpoints.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use mhfa_core::analysis::{generate_analysis, monitor_turn, open_session, AnalysisError, MonitorConfig, SystemClock};
use mhfa_core::cohort::{IndicatorName, MentalIndicator, UserPortrait, WeeklyBundle};
use mhfa_core::report::{render, FormatSpec};
use mhfa_core::templates::{DayPeriod, Scenario};
use mhfa_core::Gateway;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::state::{current_bundle, latest_week, week_of, BundleIndex, EmaSubmission, EventBody, StoredReport};
use crate::store::Store;
use crate::webhook;
use crate::ServiceError;

pub struct AppState {
    pub store: Mutex<Store>,
    pub gateway: Arc<Gateway>,
    pub bundles: BundleIndex,
    pub spec: FormatSpec,
    pub auth_token: Option<String>,
    pub webhook_url: Option<String>,
    pub default_local_hour: u32,
    pub monitor: MonitorConfig,
    session_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(store: Store, gateway: Gateway, bundles: BundleIndex) -> Self {
        Self {
            store: Mutex::new(store),
            gateway: Arc::new(gateway),
            bundles,
            spec: FormatSpec::default(),
            auth_token: None,
            webhook_url: None,
            default_local_hour: 12,
            monitor: MonitorConfig::default(),
            session_locks: Mutex::new(HashMap::new()),
        }
    }

    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.session_locks.lock().entry(id.to_string()).or_default().clone()
    }
}

type Shared = Arc<AppState>;

/// JSON error body: `{"error": kind, "message": ..., "field": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            field: None,
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_field", message)
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.kind, "message": self.message});
        if let Some(f) = self.field {
            body["field"] = Value::String(f);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string())
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Gateway(g) => Self::new(StatusCode::BAD_GATEWAY, "backend", g.to_string()),
            AnalysisError::Unparseable { .. } => Self::new(StatusCode::BAD_GATEWAY, "unparseable_analysis", e.to_string()),
            AnalysisError::NoRecords(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "no_records", e.to_string()),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "analysis", other.to_string()),
        }
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

async fn auth(State(app): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.auth_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok && req.uri().path() != "/healthz" {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/ema", post(submit_ema))
        .route("/participants/{id}/analyze", post(analyze))
        .route("/participants/{id}/weeks/{week}/report", get(get_report))
        .layer(middleware::from_fn_with_state(app.clone(), auth))
        .with_state(app)
}

async fn healthz(State(app): State<Shared>) -> Json<Value> {
    let last = app.store.lock().state().last_event_id;
    Json(json!({"status": "ok", "last_event_id": last}))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub participant_id: String,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub local_hour: Option<u32>,
}

fn rendered_week(app: &AppState, participant: &str, week: u32) -> Option<(WeeklyBundle, String)> {
    let bundle = current_bundle(app.store.lock().state(), &app.bundles, participant, week)?;
    let text = render(&bundle, &UserPortrait::anonymous(participant), &app.spec).ok()?;
    Some((bundle, text))
}

async fn create_session(
    State(app): State<Shared>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    if req.participant_id.trim().is_empty() {
        return Err(ApiError::invalid("participant_id", "participant_id is empty"));
    }
    let hour = req.local_hour.unwrap_or(app.default_local_hour);
    if hour > 23 {
        return Err(ApiError::invalid("local_hour", "local_hour must be 0-23"));
    }
    let scenario = req.scenario.unwrap_or_else(|| DayPeriod::from_hour(hour).default_scenario());
    let week = latest_week(app.store.lock().state(), &app.bundles, &req.participant_id);
    let (mood, report) = match week.and_then(|w| rendered_week(&app, &req.participant_id, w)) {
        Some((b, text)) => (b.latest_mood(), Some(text)),
        None => (None, None),
    };
    let mut store = app.store.lock();
    let id = store.state().next_session_id();
    let session = open_session(id.clone(), req.participant_id, scenario, report, mood, hour);
    store.append(vec![(Some(id), EventBody::SessionOpened(session.clone()))])?;
    Ok((StatusCode::CREATED, Json(serde_json::to_value(session).expect("session serializes"))))
}

async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let store = app.store.lock();
    let s = store
        .state()
        .sessions
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    Ok(Json(serde_json::to_value(s).expect("session serializes")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostMessage {
    pub text: String,
}

async fn post_message(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<PostMessage>,
) -> Result<Json<Value>, ApiError> {
    if req.text.trim().is_empty() {
        return Err(ApiError::invalid("text", "message text is empty"));
    }
    // One turn at a time per session; other sessions proceed in parallel.
    let lock = app.session_lock(&id);
    let _guard = lock.lock().await;
    let mut session = app
        .store
        .lock()
        .state()
        .sessions
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let worker = app.clone();
    let (session, reply) = tokio::task::spawn_blocking(move || {
        let reply = monitor_turn(&mut session, &req.text, &worker.gateway, &worker.monitor, &SystemClock)?;
        Ok::<_, AnalysisError>((session, reply))
    })
    .await
    .map_err(join_error)??;
    let n = session.turns.len();
    app.store.lock().append(vec![
        (Some(id.clone()), EventBody::UserMsg(session.turns[n - 2].clone())),
        (Some(id.clone()), EventBody::AssistantMsg(session.turns[n - 1].clone())),
    ])?;
    Ok(Json(json!({"reply": reply, "session": session})))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmaRequest {
    pub participant_id: String,
    pub date: NaiveDate,
    /// Indicator name to value, on each instrument's own scale.
    pub indicators: BTreeMap<String, f64>,
}

fn validate_ema(req: &EmaRequest) -> Result<Vec<MentalIndicator>, ApiError> {
    if req.participant_id.trim().is_empty() {
        return Err(ApiError::invalid("participant_id", "participant_id is empty"));
    }
    if req.indicators.is_empty() {
        return Err(ApiError::invalid("indicators", "no indicators given"));
    }
    req.indicators
        .iter()
        .map(|(k, v)| {
            let name: IndicatorName = k
                .parse()
                .map_err(|_| ApiError::invalid(k.clone(), format!("unknown indicator {k:?}")))?;
            MentalIndicator::new(name, *v).map_err(|e| ApiError::invalid(k.clone(), e.to_string()))
        })
        .collect()
}

async fn submit_ema(State(app): State<Shared>, Json(req): Json<EmaRequest>) -> Result<Json<Value>, ApiError> {
    let indicators = validate_ema(&req)?;
    let mut store = app.store.lock();
    let week = week_of(store.state(), &app.bundles, &req.participant_id, req.date)
        .ok_or_else(|| ApiError::invalid("date", "date precedes the participant's first week"))?;
    let events = store.append(vec![(
        None,
        EventBody::EmaSubmitted(EmaSubmission {
            participant_id: req.participant_id.clone(),
            date: req.date,
            indicators,
        }),
    )])?;
    let bundle = current_bundle(store.state(), &app.bundles, &req.participant_id, week);
    Ok(Json(json!({"event_id": events[0].event_id, "week": week, "bundle": bundle})))
}

#[derive(Debug, Deserialize)]
pub struct WeekQuery {
    pub week: u32,
}

async fn analyze(
    State(app): State<Shared>,
    Path(pid): Path<String>,
    Query(q): Query<WeekQuery>,
) -> Result<Json<Value>, ApiError> {
    let (bundle, report_text) =
        rendered_week(&app, &pid, q.week).ok_or_else(|| ApiError::not_found(format!("participant {pid} week {}", q.week)))?;
    let worker = app.clone();
    let analysis = tokio::task::spawn_blocking(move || {
        generate_analysis(&bundle, &UserPortrait::anonymous(bundle.participant_id.clone()), &worker.spec, &worker.gateway)
    })
    .await
    .map_err(join_error)??;
    let stored = StoredReport {
        participant_id: pid.clone(),
        week: q.week,
        analysis: analysis.clone(),
        report_text,
    };
    let events = app.store.lock().append(vec![(None, EventBody::ReportGenerated(stored))])?;
    if analysis.outcome.is_at_risk() {
        if let Some(url) = app.webhook_url.clone() {
            let payload = webhook::RiskPayload::new(&pid, q.week, &events[0]);
            tokio::spawn(async move {
                if let Err(e) = webhook::deliver(&url, &payload).await {
                    log::error!("risk webhook for {} failed: {e}", payload.participant_id);
                }
            });
        }
    }
    Ok(Json(serde_json::to_value(analysis).expect("report serializes")))
}

#[derive(Debug, Serialize)]
struct WeekReport {
    participant_id: String,
    week: u32,
    report_text: String,
    bundle: WeeklyBundle,
    analysis: Option<mhfa_core::analysis::AnalysisReport>,
}

async fn get_report(State(app): State<Shared>, Path((pid, week)): Path<(String, u32)>) -> Result<Json<Value>, ApiError> {
    let (bundle, report_text) =
        rendered_week(&app, &pid, week).ok_or_else(|| ApiError::not_found(format!("participant {pid} week {week}")))?;
    let analysis = app
        .store
        .lock()
        .state()
        .reports
        .get(&pid)
        .and_then(|w| w.get(&week))
        .map(|r| r.analysis.clone());
    Ok(Json(
        serde_json::to_value(WeekReport {
            participant_id: pid,
            week,
            report_text,
            bundle,
            analysis,
        })
        .expect("report serializes"),
    ))
}
