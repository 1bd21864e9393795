//! HTTP API behind the annotation app.
//!
//! Annotators open a session on one exported sheet and answer its rows in
//! order. Payloads carry only what the annotator sees: the question, the
//! options and an opaque image URL.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::evaluator::{normalize_choice, score_human, sheet_file_name, HumanAnswer, KeyRow, SheetRow};
use crate::geometry::ActionDirection;

#[derive(Debug, Clone, Serialize)]
struct Answered {
    row_id: String,
    choice: ActionDirection,
    at: String,
}

#[derive(Debug)]
struct Session {
    annotator: String,
    sheet: usize,
    rows: Vec<SheetRow>,
    answers: Vec<Answered>,
}

/// Shared server state.
pub struct AnnotationState {
    sheets_dir: PathBuf,
    /// Root that sheet image paths are relative to.
    image_root: PathBuf,
    key: Option<Vec<KeyRow>>,
    sessions: Mutex<HashMap<String, Session>>,
}

impl AnnotationState {
    pub fn new(sheets_dir: impl Into<PathBuf>, image_root: impl Into<PathBuf>, key: Option<Vec<KeyRow>>) -> Self {
        Self {
            sheets_dir: sheets_dir.into(),
            image_root: image_root.into(),
            key,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn load_sheet(&self, sheet: usize) -> Result<Vec<SheetRow>, ApiError> {
        let path = self.sheets_dir.join(sheet_file_name(sheet));
        let mut r = csv::Reader::from_path(&path).map_err(|_| ApiError::not_found(format!("no sheet {sheet}")))?;
        r.deserialize::<SheetRow>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "bad_sheet", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, ApiErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ApiErrorBody {
                code: code.into(),
                message: message.into(),
            },
        )
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", rej.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Shared = Arc<AnnotationState>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub sheet: usize,
    #[serde(default)]
    pub annotator: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub sheet: usize,
    pub total: usize,
}

/// Next row to answer, or `done`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextPayload {
    pub done: bool,
    pub index: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitAnswer {
    pub row_id: String,
    pub choice: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitAck {
    pub accepted: bool,
    pub cursor: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

fn new_session_id() -> String {
    format!("{:016x}{:016x}", rand::random::<u64>(), rand::random::<u64>())
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Json<SessionCreated>, ApiError> {
    let body = body?.0;
    let rows = state.load_sheet(body.sheet)?;
    let id = new_session_id();
    let total = rows.len();
    state.sessions.lock().unwrap_or_else(|p| p.into_inner()).insert(
        id.clone(),
        Session {
            annotator: body.annotator,
            sheet: body.sheet,
            rows,
            answers: Vec::new(),
        },
    );
    Ok(Json(SessionCreated {
        session_id: id,
        sheet: body.sheet,
        total,
    }))
}

fn with_session<T>(state: &AnnotationState, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
    let mut sessions = state.sessions.lock().unwrap_or_else(|p| p.into_inner());
    let session = sessions
        .get_mut(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?;
    f(session)
}

async fn next_item(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<NextPayload>, ApiError> {
    with_session(&state, &id, |s| {
        let index = s.answers.len();
        let total = s.rows.len();
        Ok(Json(match s.rows.get(index) {
            None => NextPayload {
                done: true,
                index,
                total,
                row_id: None,
                image_url: None,
                question: None,
                options: Vec::new(),
            },
            Some(row) => NextPayload {
                done: false,
                index,
                total,
                row_id: Some(row.row_id.clone()),
                image_url: Some(format!("/api/session/{id}/image/{index}")),
                question: Some(row.question.clone()),
                options: vec![row.option_a.clone(), row.option_b.clone(), row.option_c.clone()],
            },
        }))
    })
}

async fn submit_answer(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitAnswer>, JsonRejection>,
) -> Result<Json<SubmitAck>, ApiError> {
    let body = body?.0;
    let choice = match normalize_choice(&body.choice) {
        Ok(Some(c)) => c,
        Ok(None) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_choice", "choice is required")),
        Err(e) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_choice", e)),
    };
    with_session(&state, &id, |s| {
        if s.answers.iter().any(|a| a.row_id == body.row_id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "duplicate",
                format!("row {} already answered", body.row_id),
            ));
        }
        let expected = s.rows.get(s.answers.len()).map(|r| r.row_id.clone());
        if expected.as_deref() != Some(body.row_id.as_str()) {
            let msg = match expected {
                Some(e) => format!("expected an answer for row {e}, got {}", body.row_id),
                None => "sheet is complete".to_string(),
            };
            return Err(ApiError::new(StatusCode::CONFLICT, "out_of_order", msg));
        }
        s.answers.push(Answered {
            row_id: body.row_id.clone(),
            choice,
            at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        });
        Ok(Json(SubmitAck {
            accepted: true,
            cursor: s.answers.len(),
            total: s.rows.len(),
        }))
    })
}

/// `row_id,answer` rows in the schema read by the human scorer.
fn session_csv(s: &Session) -> String {
    let mut out = String::from("row_id,answer\n");
    for a in &s.answers {
        out.push_str(&a.row_id);
        out.push(',');
        out.push(a.choice.letter());
        out.push('\n');
    }
    out
}

async fn export_csv(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let body = with_session(&state, &id, |s| Ok(session_csv(s)))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

async fn session_image(
    State(state): State<Shared>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
) -> Result<Response, ApiError> {
    let rel = with_session(&state, &id, |s| {
        s.rows
            .get(index)
            .map(|r| r.image.clone())
            .ok_or_else(|| ApiError::not_found(format!("no row {index}")))
    })?;
    let path = state.image_root.join(&rel);
    if Path::new(&rel).components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(ApiError::not_found("image outside the image root"));
    }
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::not_found(format!("image unavailable: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response())
}

async fn session_score(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionScore>, ApiError> {
    let key = state
        .key
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_key", "server was started without an answer key"))?;
    let (answers, sheet) = with_session(&state, &id, |s| {
        let answers: Vec<HumanAnswer> = s
            .answers
            .iter()
            .map(|a| HumanAnswer {
                row_id: a.row_id.clone(),
                answer: a.choice.letter().to_string(),
            })
            .collect();
        Ok((answers, s.sheet))
    })?;
    let sheet_key: Vec<KeyRow> = key.iter().filter(|k| k.sheet == sheet).cloned().collect();
    let report = score_human(&answers, &sheet_key, "session")
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "score", e.to_string()))?;
    // a session without answers still scores its whole sheet
    let total = if answers.is_empty() { sheet_key.len() } else { report.all.total };
    Ok(Json(SessionScore {
        correct: report.all.correct,
        total,
        accuracy: (total > 0).then(|| 100.0 * report.all.correct as f64 / total as f64),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub annotator: String,
    pub sheet: usize,
    pub cursor: usize,
    pub total: usize,
}

async fn session_info(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionInfo>, ApiError> {
    with_session(&state, &id, |s| {
        Ok(Json(SessionInfo {
            session_id: id.clone(),
            annotator: s.annotator.clone(),
            sheet: s.sheet,
            cursor: s.answers.len(),
            total: s.rows.len(),
        }))
    })
}

/// Routes of the annotation service. `app_dir` holds the built browser app.
pub fn router(state: Arc<AnnotationState>, app_dir: Option<&Path>) -> Router {
    let mut r = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}", get(session_info))
        .route("/api/session/{id}/next", get(next_item))
        .route("/api/session/{id}/answer", post(submit_answer))
        .route("/api/session/{id}/export.csv", get(export_csv))
        .route("/api/session/{id}/score", get(session_score))
        .route("/api/session/{id}/image/{index}", get(session_image))
        .with_state(state);
    if let Some(dir) = app_dir {
        r = r.nest_service("/app", ServeDir::new(dir));
    }
    r
}
