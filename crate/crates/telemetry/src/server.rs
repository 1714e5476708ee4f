//! HTTP front end: answer and bug-report ingestion plus token-protected
//! NDJSON export.

use std::collections::{BTreeSet, HashSet};
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use learnprof_core::book::BookManifest;
use learnprof_core::telemetry::{AnswersPayload, BugReport, EventKind};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::CorsLayer;
use uuid::Uuid;

use crate::store::{EventStore, ExportFilter, StoreError};

pub const TOKEN_ENV: &str = "LEARNPROF_EXPORT_TOKEN";

/// Flag attached to events referencing a question absent from the manifest.
pub const FLAG_UNKNOWN_QUESTION: &str = "unknownQuestion";
/// Flag attached to answer events naming a quiz absent from the manifest.
pub const FLAG_UNKNOWN_QUIZ: &str = "unknownQuiz";
/// Flag attached to a retry that arrives before any first attempt.
pub const FLAG_RETRY_WITHOUT_FIRST: &str = "retryWithoutFirstAttempt";

/// Questions and quizzes of the current book, used only to flag events.
#[derive(Debug, Clone, Default)]
pub struct KnownContent {
    pub quizzes: BTreeSet<String>,
    pub questions: BTreeSet<Uuid>,
}

impl KnownContent {
    pub fn from_manifest(manifest: &BookManifest) -> Self {
        KnownContent {
            quizzes: manifest.quizzes.keys().cloned().collect(),
            questions: manifest.question_chapters().into_keys().collect(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    store: EventStore,
    token: Option<String>,
    known: Option<Arc<KnownContent>>,
    first_attempts: Arc<Mutex<HashSet<(Uuid, String)>>>,
}

impl AppState {
    pub fn new(store: EventStore, token: Option<String>, known: Option<KnownContent>) -> Self {
        let mut seen = HashSet::new();
        for ev in store.snapshot() {
            if let Some(Ok(p)) = ev.answers() {
                if p.attempt == 0 {
                    seen.insert((p.session_id, p.quiz_name));
                }
            }
        }
        AppState {
            store,
            token: token.filter(|t| !t.is_empty()),
            known: known.map(Arc::new),
            first_attempts: Arc::new(Mutex::new(seen)),
        }
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/answers", post(post_answers))
        .route("/api/bug-reports", post(post_bug_report))
        .route("/api/export", get(get_export))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn store_error(e: StoreError) -> Response {
    match e {
        StoreError::InvalidBody(m) => error(StatusCode::BAD_REQUEST, m),
        other => {
            tracing::error!(error = %other, "store write failed");
            error(StatusCode::SERVICE_UNAVAILABLE, other.to_string())
        }
    }
}

fn accepted(event_id: u64, flags: &[String]) -> Response {
    let body = if flags.is_empty() {
        json!({ "eventId": event_id })
    } else {
        json!({ "eventId": event_id, "flags": flags })
    };
    (StatusCode::OK, Json(body)).into_response()
}

async fn post_answers(State(state): State<AppState>, body: String) -> Response {
    let payload = match AnswersPayload::parse(&body) {
        Ok(p) => p,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({ "error": e.to_string(), "field": e.field })),
            )
                .into_response()
        }
    };
    let mut flags = Vec::new();
    if let Some(known) = &state.known {
        if !known.quizzes.contains(&payload.quiz_name) {
            flags.push(FLAG_UNKNOWN_QUIZ.to_string());
        }
        if payload
            .answers
            .iter()
            .any(|a| !known.questions.contains(&a.question_id))
        {
            flags.push(FLAG_UNKNOWN_QUESTION.to_string());
        }
    }
    let key = (payload.session_id, payload.quiz_name.clone());
    {
        let mut seen = state.first_attempts.lock().expect("attempt set lock");
        if payload.attempt == 0 {
            seen.insert(key);
        } else if !seen.contains(&key) {
            flags.push(FLAG_RETRY_WITHOUT_FIRST.to_string());
        }
    }
    match state.store.append(EventKind::Answers, flags.clone(), &body).await {
        Ok(ack) => accepted(ack.event_id, &flags),
        Err(e) => store_error(e),
    }
}

async fn post_bug_report(State(state): State<AppState>, body: String) -> Response {
    let report = match BugReport::parse(&body) {
        Ok(r) => r,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({ "error": e.to_string(), "field": e.field })),
            )
                .into_response()
        }
    };
    let mut flags = Vec::new();
    if let Some(known) = &state.known {
        if !known.questions.contains(&report.question_id) {
            flags.push(FLAG_UNKNOWN_QUESTION.to_string());
        }
    }
    match state
        .store
        .append(EventKind::BugReport, flags.clone(), &body)
        .await
    {
        Ok(ack) => accepted(ack.event_id, &flags),
        Err(e) => store_error(e),
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct ExportQuery {
    pub kind: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
}

/// Parses a time bound given as epoch milliseconds or RFC 3339.
pub fn parse_time(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| {
        chrono::DateTime::parse_from_rfc3339(s)
            .ok()
            .map(|t| t.timestamp_millis())
    })
}

impl ExportQuery {
    pub fn to_filter(&self) -> Result<ExportFilter, String> {
        let kind = match self.kind.as_deref().filter(|k| !k.is_empty()) {
            None => None,
            Some(k) => Some(EventKind::parse(k).ok_or_else(|| format!("unknown kind {k:?}"))?),
        };
        let time = |v: &Option<String>, name: &str| -> Result<Option<i64>, String> {
            match v.as_deref().filter(|s| !s.is_empty()) {
                None => Ok(None),
                Some(s) => parse_time(s)
                    .map(Some)
                    .ok_or_else(|| format!("{name}: expected epoch ms or RFC 3339, got {s:?}")),
            }
        };
        Ok(ExportFilter {
            kind,
            from_ms: time(&self.from, "from")?,
            to_ms: time(&self.to, "to")?,
        })
    }
}

fn authorized(state: &AppState, headers: &HeaderMap) -> bool {
    let Some(expected) = &state.token else {
        return false;
    };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t.trim() == expected)
}

async fn get_export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(query): Query<ExportQuery>,
) -> Response {
    if !authorized(&state, &headers) {
        return error(StatusCode::UNAUTHORIZED, "missing or invalid export token");
    }
    let filter = match query.to_filter() {
        Ok(f) => f,
        Err(m) => return error(StatusCode::BAD_REQUEST, m),
    };
    let body = state.store.export(&filter);
    (
        StatusCode::OK,
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        body,
    )
        .into_response()
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
